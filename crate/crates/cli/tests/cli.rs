use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssnmt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert_eq!(code(&o), 0, "{args:?}\nstderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small two-language suite plus a BPE model.
fn small_suite(dir: &Path, n_langs: usize) -> (PathBuf, PathBuf) {
    let corpus = dir.join("corpus");
    let n = n_langs.to_string();
    ok(&[
        "make-synth",
        "--n-langs",
        &n,
        "--seed",
        "3",
        "--n-docs",
        "60",
        "--n-mono",
        "300",
        "--n-eval",
        "20",
        "--out",
        s(&corpus),
    ]);
    let bpe = dir.join("bpe.model");
    ok(&["train-bpe", "--corpus", s(&corpus), "--merges", "600", "--out", s(&bpe)]);
    (corpus, bpe)
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    let o = run(&["train", "--corpus", "x", "--techniques", "B+WT", "--out", "y"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("WT requires BT"));
    assert_eq!(
        code(&run(&["train", "--corpus", "x", "--init", "bogus", "--out", "y"])),
        1
    );
    assert_eq!(
        code(&run(&["train", "--corpus", "x", "--threads", "7", "--out", "y"])),
        1
    );
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["train", "--corpus", s(&missing), "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["train-bpe", "--corpus", s(&missing), "--out", s(&out)])), 2);
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, bpe) = small_suite(dir.path(), 2);
    assert!(corpus.join("run-manifest.json").exists());
    assert!(bpe.with_extension("manifest.json").exists());

    let out = dir.path().join("train");
    let o = ok(&[
        "train",
        "--corpus",
        s(&corpus),
        "--bpe-model",
        s(&bpe),
        "--techniques",
        "B+BT",
        "--init",
        "we",
        "--epochs",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("run_id"));
    let stats = fs::read_to_string(out.join("stats.csv")).unwrap();
    assert!(stats.starts_with("epoch,phase,direction,n_spe_accepted"));
    assert_eq!(stats.lines().count(), 3);
    assert!(out.join("summary.csv").exists() && out.join("model.ckpt").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["train"]["techniques"], "B+BT");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert!(!out.join(".ssnmt.lock").exists());

    // One output line per input line, empty lines included.
    let ckpt = out.join("model.ckpt");
    let mut child = bin()
        .args([
            "translate",
            "--model",
            s(&ckpt),
            "--bpe-model",
            s(&bpe),
            "--src-lang",
            "l0",
            "--tgt-lang",
            "l1",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"ba ka\n\nda ga ma\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.lines().nth(1), Some(""));
    assert_eq!(
        code(&run(&[
            "translate",
            "--model",
            s(&ckpt),
            "--bpe-model",
            s(&bpe),
            "--src-lang",
            "zz",
            "--tgt-lang",
            "l1"
        ])),
        2
    );

    let tsv = dir.path().join("mined.tsv");
    let gold = corpus.join("gold").join("l0-l1.jsonl");
    let o = ok(&[
        "mine",
        "--corpus",
        s(&corpus),
        "--pair",
        "l0-l1",
        "--model",
        s(&ckpt),
        "--bpe-model",
        s(&bpe),
        "--gold",
        s(&gold),
        "--out",
        s(&tsv),
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("precision"));
    let mined = fs::read_to_string(&tsv).unwrap();
    assert!(mined.starts_with("score_sw_fwd\t"));
    assert!(mined.lines().skip(1).all(|l| l.split('\t').count() == 6));

    let refs = dir.path().join("ref.txt");
    fs::write(&refs, "a b c d e\nf g h i j\n").unwrap();
    let o = ok(&["evaluate", "--hyp", s(&refs), "--ref", s(&refs)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["bleu"], 100.0);
    assert_eq!(v["ci_low"], 100.0);

    let rep = dir.path().join("report");
    ok(&[
        "report",
        "--summary",
        s(&out.join("summary.csv")),
        "--stats",
        s(&out.join("stats.csv")),
        "--out",
        s(&rep),
    ]);
    assert_eq!(
        fs::read(rep.join("summary.csv")).unwrap(),
        fs::read(out.join("summary.csv")).unwrap()
    );
    let broken = dir.path().join("broken.csv");
    fs::write(&broken, stats.replace(",dev_bleu", "")).unwrap();
    let rep2 = dir.path().join("report2");
    let o = run(&[
        "report",
        "--summary",
        s(&out.join("summary.csv")),
        "--stats",
        s(&broken),
        "--out",
        s(&rep2),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dev_bleu"));

    // A held lock refuses a second writer.
    fs::write(out.join(".ssnmt.lock"), "").unwrap();
    let o = run(&[
        "train",
        "--corpus",
        s(&corpus),
        "--bpe-model",
        s(&bpe),
        "--epochs",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("in use"));
}

#[test]
fn finetune_checks_the_pair() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, bpe) = small_suite(dir.path(), 3);
    let out = dir.path().join("multi");
    ok(&[
        "train",
        "--corpus",
        s(&corpus),
        "--bpe-model",
        s(&bpe),
        "--epochs",
        "1",
        "--out",
        s(&out),
    ]);
    let ckpt = out.join("model.ckpt");
    let ft = dir.path().join("ft");
    let o = run(&[
        "finetune",
        "--corpus",
        s(&corpus),
        "--bpe-model",
        s(&bpe),
        "--model",
        s(&ckpt),
        "--pair",
        "l0-l7",
        "--out",
        s(&ft),
    ]);
    assert_ne!(code(&o), 0);
    ok(&[
        "finetune",
        "--corpus",
        s(&corpus),
        "--bpe-model",
        s(&bpe),
        "--model",
        s(&ckpt),
        "--pair",
        "l1-l2",
        "--epochs",
        "1",
        "--out",
        s(&ft),
    ]);
    let stats = fs::read_to_string(ft.join("stats.csv")).unwrap();
    assert!(stats.lines().skip(1).all(|l| l.contains(",finetune,")));
}

#[test]
fn experiment_grid_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, _) = small_suite(dir.path(), 2);
    let manifest = format!(
        r#"out = "exp"

[corpus]
dir = "{}"

[bpe]
merges = 600

[train]
max_epochs = 1

[grid]
techniques = ["B", "B+BT+WT"]
inits = ["none", "we"]
seeds = [1]
"#,
        corpus.file_name().unwrap().to_str().unwrap()
    );
    let m = dir.path().join("exp.toml");
    fs::write(&m, manifest).unwrap();
    ok(&["experiment", "--manifest", s(&m)]);
    let runs = dir.path().join("exp").join("runs");
    let mut ids: Vec<String> = fs::read_dir(&runs)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    ids.sort();
    assert_eq!(ids, ["B+BT+WT_none_s1", "B+BT+WT_we_s1", "B_none_s1", "B_we_s1"]);
    for id in &ids {
        assert!(runs.join(id).join("stats.csv").exists());
    }
    let summary = fs::read(dir.path().join("exp").join("summary.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&summary).lines().count(), 1 + 4 * 2);
    let stats = fs::read(runs.join("B_we_s1").join("stats.csv")).unwrap();

    ok(&["experiment", "--manifest", s(&m)]);
    assert_eq!(fs::read(dir.path().join("exp").join("summary.csv")).unwrap(), summary);
    assert_eq!(fs::read(runs.join("B_we_s1").join("stats.csv")).unwrap(), stats);

    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "[corpus]\ndir = \"missing\"\n[grid]\ntechniques = [\"B\"]\ninits = [\"none\"]\nseeds = [1]\n",
    )
    .unwrap();
    let o = run(&["experiment", "--manifest", s(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("out").join("runs").exists());
    fs::write(&bad, "[corpus]\ndir = \"corpus\"\nflavour = 1\n").unwrap();
    assert_eq!(code(&run(&["experiment", "--manifest", s(&bad)])), 1);
}
