use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Finetune,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Finetune => "finetune",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "finetune" => Ok(Phase::Finetune),
            _ => Err(Error::Data(format!("unknown phase {s:?}"))),
        }
    }
}

/// Per-direction counters of one epoch. Counts are attributed to the
/// direction the resulting pair is trained in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_spe_accepted: usize,
    pub n_bt_generated: usize,
    pub n_bt_accepted: usize,
    pub n_wt: usize,
    pub n_noise_copies: usize,
}

impl Counts {
    pub fn add(&mut self, o: &Counts) {
        self.n_spe_accepted += o.n_spe_accepted;
        self.n_bt_generated += o.n_bt_generated;
        self.n_bt_accepted += o.n_bt_accepted;
        self.n_wt += o.n_wt;
        self.n_noise_copies += o.n_noise_copies;
    }
}

/// One row of the stats CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: Phase,
    pub direction: String,
    #[serde(flatten)]
    pub counts: Counts,
    /// NaN when nothing was trained in this direction.
    pub mean_train_loss: f64,
    pub dev_bleu: f64,
}

pub const STATS_HEADER: [&str; 10] = [
    "epoch",
    "phase",
    "direction",
    "n_spe_accepted",
    "n_bt_generated",
    "n_bt_accepted",
    "n_wt",
    "n_noise_copies",
    "mean_train_loss",
    "dev_bleu",
];

pub fn stats_csv(rows: &[EpochStats]) -> String {
    let mut out = STATS_HEADER.join(",");
    out.push('\n');
    for r in rows {
        let c = &r.counts;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.4}\n",
            r.epoch,
            r.phase,
            r.direction,
            c.n_spe_accepted,
            c.n_bt_generated,
            c.n_bt_accepted,
            c.n_wt,
            c.n_noise_copies,
            r.mean_train_loss,
            r.dev_bleu
        ));
    }
    out
}

pub fn write_stats(path: &Path, rows: &[EpochStats]) -> Result<()> {
    fs::write(path, stats_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct FlatRow {
    epoch: usize,
    phase: Phase,
    direction: String,
    n_spe_accepted: usize,
    n_bt_generated: usize,
    n_bt_accepted: usize,
    n_wt: usize,
    n_noise_copies: usize,
    mean_train_loss: f64,
    dev_bleu: f64,
}

/// Reads a stats CSV; a missing column is a schema error.
pub fn read_stats(path: &Path) -> Result<Vec<EpochStats>> {
    let err = |e: csv::Error| Error::Data(format!("{}: schema error: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.clone();
    for col in STATS_HEADER {
        if !header.iter().any(|h| h == col) {
            return Err(Error::Data(format!(
                "{}: schema error: missing column {col}",
                path.display()
            )));
        }
    }
    r.deserialize::<FlatRow>()
        .map(|row| {
            let f = row.map_err(err)?;
            Ok(EpochStats {
                epoch: f.epoch,
                phase: f.phase,
                direction: f.direction,
                counts: Counts {
                    n_spe_accepted: f.n_spe_accepted,
                    n_bt_generated: f.n_bt_generated,
                    n_bt_accepted: f.n_bt_accepted,
                    n_wt: f.n_wt,
                    n_noise_copies: f.n_noise_copies,
                },
                mean_train_loss: f.mean_train_loss,
                dev_bleu: f.dev_bleu,
            })
        })
        .collect()
}
