use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate, NaiveTime};
use tempfile::TempDir;

fn dyncop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyncop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// One tick per minute over the session on each given day.
fn tick_file(dir: &Path, name: &str, days: &[NaiveDate], drift: f64) -> PathBuf {
    let mut s = String::from("timestamp,price\n");
    for (k, d) in days.iter().enumerate() {
        let mut t = d.and_time(NaiveTime::from_hms_opt(14, 29, 0).unwrap());
        let end = d.and_time(NaiveTime::from_hms_opt(21, 0, 0).unwrap());
        let mut i = 0.0_f64;
        while t <= end {
            let p = 100.0 * (drift * k as f64 + 0.002 * (i * 0.7 + drift * 13.0).sin()).exp();
            writeln!(s, "{},{p:.5}", t.format("%Y-%m-%d %H:%M:%S")).unwrap();
            t += Duration::minutes(1);
            i += 1.0;
        }
    }
    let path = dir.join(name);
    fs::write(&path, s).unwrap();
    path
}

fn panel_rows(path: &Path) -> usize {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[test]
fn ingest_counts_trading_days() {
    let dir = TempDir::new().unwrap();
    // Monday to Saturday; the Saturday is dropped by the calendar
    let days: Vec<_> = (4..=9).map(|d| date(2024, 3, d)).collect();
    let a = tick_file(dir.path(), "a.csv", &days, 0.001);
    let b = tick_file(dir.path(), "b.csv", &days, -0.002);
    let out = dir.path().join("out");
    let o = dyncop(&[
        "ingest",
        "--ticks",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(panel_rows(&out.join("panel.csv")), 5);
}

#[test]
fn missing_tick_file_exits_with_two_and_names_it() {
    let dir = TempDir::new().unwrap();
    let a = tick_file(dir.path(), "a.csv", &[date(2024, 3, 4)], 0.0);
    let missing = dir.path().join("nowhere.csv");
    let o = dyncop(&[
        "ingest",
        "--ticks",
        a.to_str().unwrap(),
        missing.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn weekend_only_ticks_give_empty_panel_and_warning() {
    let dir = TempDir::new().unwrap();
    let days = [date(2024, 3, 9), date(2024, 3, 10)];
    let a = tick_file(dir.path(), "a.csv", &days, 0.001);
    let b = tick_file(dir.path(), "b.csv", &days, 0.001);
    let out = dir.path().join("out");
    let o = dyncop(&[
        "ingest",
        "--ticks",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert_eq!(panel_rows(&out.join("panel.csv")), 0);
}

fn small_config(dir: &Path, split: &str) -> PathBuf {
    let panel = dir.join("panel.csv");
    let o = dyncop(&[
        "simulate",
        "--days",
        "420",
        "--seed",
        "11",
        "--out",
        panel.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = format!(
        r#"seed = 99

[data]
panel = "panel.csv"
in_sample_end = "{split}"

[copula]
families = ["normal", "clayton"]
dynamics = ["constant"]
select = "normal-constant"

[bootstrap]
replicates = 100

[gof]
n_sim = 20

[tests]
tv_boot = 50
break_sims = 50

[risk]
alphas = [0.05, 0.95]
n_paths = 1000
band_sims = 100

[backtest]
dq_sims = 50
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn split_outside_panel_is_rejected_before_writing() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), "2030-01-01");
    let out = dir.path().join("out");
    let o = dyncop(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let written = fs::read_dir(&out).map(|d| d.count()).unwrap_or(0);
    assert_eq!(written, 0);
}

#[test]
fn missing_seed_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), "2011-03-31");
    let text = fs::read_to_string(&cfg).unwrap().replace("seed = 99\n", "");
    fs::write(&cfg, text).unwrap();
    let o = dyncop(&["fit-copula", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), "2011-03-31");
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = dyncop(&[
            "pipeline",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut files: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        let contents: Vec<_> = files
            .iter()
            .map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap()))
            .collect();
        reports.push(contents);
    }
    assert!(reports[0].len() > 10);
    assert_eq!(reports[0], reports[1]);
}
