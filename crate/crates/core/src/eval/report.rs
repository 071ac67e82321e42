use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SUMMARY_HEADER: [&str; 11] = [
    "run_id",
    "technique",
    "init",
    "direction",
    "epoch_of_best",
    "dev_bleu",
    "test_bleu",
    "ci_low",
    "ci_high",
    "extraction_p",
    "extraction_r",
];

/// One line of the summary table: a run evaluated in one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub technique: String,
    pub init: String,
    pub direction: String,
    pub epoch_of_best: usize,
    pub dev_bleu: f64,
    pub test_bleu: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub extraction_p: Option<f64>,
    pub extraction_r: Option<f64>,
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl SummaryRow {
    fn cells(&self) -> [String; 11] {
        [
            self.run_id.clone(),
            self.technique.clone(),
            self.init.clone(),
            self.direction.clone(),
            self.epoch_of_best.to_string(),
            num(self.dev_bleu),
            num(self.test_bleu),
            num(self.ci_low),
            num(self.ci_high),
            opt(self.extraction_p),
            opt(self.extraction_r),
        ]
    }
}

/// Writes `summary.csv` and an aligned plain-text `summary.txt` into `dir`.
/// Rows are sorted, so the output does not depend on input order.
pub fn emit_report(rows: &[SummaryRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| (&a.run_id, &a.direction).cmp(&(&b.run_id, &b.direction)));

    let csv_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let werr = |e: csv::Error| Error::Data(format!("{}: {e}", csv_path.display()));
    w.write_record(SUMMARY_HEADER).map_err(werr)?;
    for r in &rows {
        w.write_record(r.cells()).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let table: Vec<[String; 11]> = rows.iter().map(SummaryRow::cells).collect();
    let mut widths = SUMMARY_HEADER.map(str::len);
    for r in &table {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut text = String::new();
    let line = |cells: &[&str], text: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(text, "{}", parts.join("  ").trim_end());
    };
    line(&SUMMARY_HEADER, &mut text);
    for r in &table {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>(), &mut text);
    }
    let txt_path = dir.join("summary.txt");
    fs::write(&txt_path, text).map_err(|e| Error::io(&txt_path, e))
}

/// Reads a summary CSV, rejecting files with missing or extra columns.
pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    for col in SUMMARY_HEADER {
        if !header.iter().any(|h| h == col) {
            return Err(Error::Data(format!(
                "{}: schema error: missing column {col}",
                path.display()
            )));
        }
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{}: schema error: {e}", path.display()))))
        .collect()
}
