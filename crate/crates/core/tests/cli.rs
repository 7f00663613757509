use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reservebid::data::write_csv;
use reservebid::synthetic::{generate, SyntheticConfig};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const SMALL: &str = r#"
days = 2
mc_samples = 30
window_days = 60

[thresholds]
source = "calibrate"
days = 3

[training]
epochs = 15
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        fs::create_dir_all(&src).unwrap();
        let book = generate(&SyntheticConfig::default()).unwrap();
        for s in book.iter() {
            write_csv(s, src.join(format!("{}.csv", s.market_id()))).unwrap();
        }
        fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        Workspace { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_reservebid"))
            .args(args)
            .current_dir(self.dir.path())
            .env("RESERVEBID_DATA_DIR", self.path("data"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn ingest(&self) -> String {
        self.ok(&["ingest", "FCR-N=src/FCR-N.csv", "FCR-D=src/FCR-D.csv", "mFRR=src/mFRR.csv"])
    }
}

fn digest(path: &Path) -> String {
    format!("{:x}", Sha256::digest(fs::read(path).unwrap()))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn ingest_three_valid_files() {
    let ws = Workspace::new();
    let out = ws.ingest();
    for m in ["FCR-N", "FCR-D", "mFRR"] {
        assert!(out.contains(&format!("{m}: 6768 records")), "{out}");
        assert!(ws.path("data").join(format!("{m}.csv")).exists());
    }
}

#[test]
fn reingest_is_idempotent() {
    let ws = Workspace::new();
    ws.ingest();
    let first: Vec<String> = ["FCR-N", "FCR-D", "mFRR"]
        .iter()
        .map(|m| digest(&ws.path("data").join(format!("{m}.csv"))))
        .collect();
    ws.ingest();
    let second: Vec<String> = ["FCR-N", "FCR-D", "mFRR"]
        .iter()
        .map(|m| digest(&ws.path("data").join(format!("{m}.csv"))))
        .collect();
    assert_eq!(first, second);
}

#[test]
fn malformed_file_is_named_with_its_line() {
    let ws = Workspace::new();
    fs::write(
        ws.path("bad.csv"),
        "timestamp,price\n2018-01-01T00:00:00Z,1.5\n2018-01-01T01:00:00Z,abc\n",
    )
    .unwrap();
    let out = ws.run(&["ingest", "FCR-N=src/FCR-N.csv", "FCR-D=bad.csv"]);
    assert!(!out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("bad.csv:3"), "{stdout}");
    assert!(stderr(&out).contains("bad.csv:3"));
    // the valid file is still checked and reported
    assert!(stdout.contains("FCR-N: 6768 records"));
}

#[test]
fn error_json_names_the_missing_stage() {
    let ws = Workspace::new();
    let out = ws.run(&["backtest", "--config", "small.toml", "--out", "run", "--error-json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(err["error"], "missing-artifact");
    assert!(err["message"].as_str().unwrap().contains("run `ingest` first"));

    ws.ingest();
    let out = ws.run(&["forecast", "--config", "small.toml", "--out", "run"]);
    assert!(stderr(&out).contains("run `train` first"), "{}", stderr(&out));
    let out = ws.run(&["calibrate", "--config", "small.toml", "--out", "run"]);
    assert!(stderr(&out).contains("run `forecast` first"));
    let out = ws.run(&["compare", "run", "other", "--out", "cmp"]);
    assert!(stderr(&out).contains("run `backtest` first"));
}

#[test]
fn pipeline_calibrates_and_backtests_reproducibly() {
    let ws = Workspace::new();
    ws.ingest();
    let run = ["--config", "small.toml", "--out", "run"];
    ws.ok(&[&["train"], &run[..]].concat());
    ws.ok(&[&["forecast"], &run[..]].concat());

    let out = ws.run(&[&["backtest"], &run[..]].concat());
    assert!(stderr(&out).contains("run `calibrate` first"));

    ws.ok(&[&["calibrate"], &run[..]].concat());
    let table = fs::read_to_string(ws.path("run/thresholds.csv")).unwrap();
    assert!(table.starts_with("market,u_th,ua,"));
    assert_eq!(table.lines().count(), 5);

    ws.ok(&[&["backtest"], &run[..]].concat());
    let first = digest(&ws.path("run/report.json"));
    ws.ok(&[&["backtest"], &run[..]].concat());
    assert_eq!(first, digest(&ws.path("run/report.json")));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("run/manifest.json")).unwrap()).unwrap();
    for stage in ["train", "forecast", "calibrate", "backtest"] {
        assert!(manifest["stages"][stage].as_array().is_some_and(|a| !a.is_empty()), "{stage}");
    }
    assert_eq!(manifest["seed"], 42);

    // same stages in a second directory give the same report
    let other = ["--config", "small.toml", "--out", "again"];
    for stage in ["train", "forecast", "calibrate", "backtest"] {
        ws.ok(&[&[stage], &other[..]].concat());
    }
    assert_eq!(first, digest(&ws.path("again/report.json")));
    assert_eq!(digest(&ws.path("run/manifest.json")), digest(&ws.path("again/manifest.json")));
}

#[test]
fn ev_scheme4_bids_twice_at_full_power() {
    let ws = Workspace::new();
    ws.ingest();
    fs::write(ws.path("ev.toml"), "days = 1\n").unwrap();
    ws.ok(&[
        "backtest",
        "--config",
        "ev.toml",
        "--out",
        "ev",
        "--perfect-foresight",
        "--strategy",
        "3",
        "--scheme",
        "4",
    ]);
    let log = fs::read_to_string(ws.path("ev/bids.csv")).unwrap();
    let rows: Vec<Vec<&str>> = log.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2, "{log}");
    assert!(rows.iter().all(|r| r[1] == "strategy3-scheme4" && r[5] == "22"));
}

#[test]
fn compare_needs_two_runs() {
    let ws = Workspace::new();
    let out = ws.run(&["compare", "only", "--out", "cmp"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_writes_tables_and_manifest() {
    let ws = Workspace::new();
    ws.ingest();
    fs::write(ws.path("pf.toml"), "days = 2\nstrategies = [1, 2]\n").unwrap();
    ws.ok(&["backtest", "--config", "pf.toml", "--out", "a", "--perfect-foresight"]);
    ws.ok(&["backtest", "--config", "pf.toml", "--out", "b", "--perfect-foresight", "--strategy", "2"]);
    ws.ok(&["compare", "a", "b", "--out", "cmp"]);
    for f in ["accuracy.csv", "revenue.csv", "differences.csv", "comparison.json", "manifest.json"] {
        assert!(ws.path("cmp").join(f).exists(), "{f}");
    }
}

#[test]
fn scheme_without_strategy3_is_rejected() {
    let ws = Workspace::new();
    ws.ingest();
    let out = ws.run(&["backtest", "--out", "x", "--strategy", "1", "--scheme", "2", "--error-json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("\"argument\""), "{}", stderr(&out));
}
