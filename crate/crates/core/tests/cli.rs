mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fixtures, snapshot};

fn epiforge(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_epiforge"));
    cmd.current_dir(dir).args(args).env_remove("EPIFORGE_CACHE_DIR");
    for var in ["GEOCODE_API_KEY", "TIMEZONE_API_KEY", "WEATHER_API_KEY"] {
        cmd.env_remove(var);
    }
    cmd.output().unwrap()
}

fn offline_args<'a>(reports: &'a str, fx: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["--offline", "--input", reports, "--fixtures", fx, "--out", "out"];
    args.extend_from_slice(extra);
    args
}

#[test]
fn run_all_offline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let reports = fixtures().join("reports");
    let fx = fixtures();
    let mut args = vec!["run-all"];
    args.extend(offline_args(reports.to_str().unwrap(), fx.to_str().unwrap(), &["--charts"]));
    let out = epiforge(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["clean.ejsonl", "enriched.ejsonl", "model.json", "metrics.json", "agg_year.csv", "incidence_by_year.svg"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn empty_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let out = epiforge(dir.path(), &["ingest", "--input", "empty", "--out", "out"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no .csv report files"));
}

#[test]
fn live_mode_without_keys_exits_1_before_any_call() {
    let dir = tempfile::tempdir().unwrap();
    let reports = fixtures().join("reports");
    let out = epiforge(dir.path(), &["run-all", "--input", reports.to_str().unwrap(), "--out", "out"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("GEOCODE_API_KEY") && err.contains("WEATHER_API_KEY"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn budget_pause_exits_3_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let reports = fixtures().join("reports");
    let fx = fixtures();
    let (r, f) = (reports.to_str().unwrap(), fx.to_str().unwrap());
    assert_eq!(epiforge(dir.path(), &[&["ingest"][..], &offline_args(r, f, &[])].concat()).status.code(), Some(0));

    let enrich = |day: &str, budget: &str| {
        let args = [&["enrich"][..], &offline_args(r, f, &["--budget-weather", budget, "--budget-day", day])].concat();
        epiforge(dir.path(), &args)
    };
    let out = enrich("2024-03-01", "10");
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let weather = || std::fs::read_dir(dir.path().join("out/cache/weather")).unwrap().count();
    assert_eq!(weather(), 10);
    let out = enrich("2024-03-02", "1000");
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(weather(), 50);
}

#[test]
fn cache_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let reports = fixtures().join("reports");
    let fx = fixtures();
    let mut args = vec!["run-all"];
    args.extend(offline_args(reports.to_str().unwrap(), fx.to_str().unwrap(), &[]));
    let out = Command::new(env!("CARGO_BIN_EXE_epiforge"))
        .current_dir(dir.path())
        .args(&args)
        .env("EPIFORGE_CACHE_DIR", dir.path().join("shared-cache"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(snapshot(&dir.path().join("shared-cache/weather")).len(), 50);
    assert!(!dir.path().join("out/cache").exists());
}

#[test]
fn bad_arguments_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(epiforge(dir.path(), &["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(epiforge(dir.path(), &["train", "--test-fraction", "1.5"]).status.code(), Some(1));
    // missing input file is a fatal I/O error
    assert_eq!(epiforge(dir.path(), &["train", "--out", "out"]).status.code(), Some(1));
    assert_eq!(epiforge(dir.path(), &["--help"]).status.code(), Some(0));
}
