use bsqr::BsqrError;
use bsqr_cli::output::{read_rows, CvRow, DrawTable};
use bsqr_cli::CliError;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bsqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsqr")).args(args).env("BSQR_THREADS", "1").output().unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn fit_on_toy_data_writes_declared_files() {
    let dir = tempfile::tempdir().unwrap();
    let toy = data("toy.csv");
    let o = bsqr(&["fit", "--data", toy.to_str().unwrap(), "--iters", "200", "--seed", "9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["summary.json", "draws.csv", "cv.csv"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let s = summary(dir.path());
    assert_eq!(s["seed"], 9);
    assert_eq!(s["command"], "fit");
    assert!(s["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(s["config"]["fit"]["common"]["tau"], 0.5);
    assert_eq!(s["config"]["fit"]["sampler"]["n_iters"], 200);
    let draws = DrawTable::read(&dir.path().join("draws.csv")).unwrap();
    assert_eq!(draws.names, vec!["beta[0]", "beta[1]", "theta"]);
    assert_eq!(draws.values.len(), 2 * 100);
    let cv: Vec<CvRow> = read_rows(&dir.path().join("cv.csv")).unwrap();
    assert_eq!(cv.len(), 5);
    assert_eq!(cv.iter().filter(|r| r.selected).count(), 1);
}

#[test]
fn fit_is_reproducible_from_the_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let toy = data("toy.csv");
    for d in [&a, &b] {
        let o = bsqr(&["fit", "--data", toy.to_str().unwrap(), "--iters", "200", "--chains", "2", "--h", "0.3", "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("draws.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    // a fixed h skips cross-validation
    assert!(!a.path().join("cv.csv").exists());
}

#[test]
fn out_of_range_tau_is_a_user_error() {
    let o = bsqr(&["fit", "--data", data("toy.csv").to_str().unwrap(), "--tau", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("(0, 1)"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let o = bsqr(&["fit", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(bsqr(&[]).status.code(), Some(1));
    assert_eq!(bsqr(&["fit"]).status.code(), Some(1));
    assert_eq!(bsqr(&["fit", "--data", "/nonexistent.csv"]).status.code(), Some(1));
    let h = bsqr(&["--help"]);
    assert_eq!(h.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&h.stdout).contains("rolling"));
    let v = bsqr(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
    let o = Command::new(env!("CARGO_BIN_EXE_bsqr")).args(["--help"]).env("BSQR_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn numeric_failures_map_to_exit_two() {
    assert_eq!(CliError::Core(BsqrError::Numeric("x".into())).exit_code(), 2);
    assert_eq!(CliError::Core(BsqrError::Sampler("x".into())).exit_code(), 2);
    assert_eq!(CliError::Core(BsqrError::Domain("x".into())).exit_code(), 1);
    assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!("# toy run\ndata = {}\ntau = 0.25\niters = 200\nchains = 2\nkernel = triangular\nout = {}\n",
            data("toy.csv").display(), out.display()),
    )
    .unwrap();
    let o = bsqr(&["fit", "--config", cfg.to_str().unwrap(), "--tau", "0.75", "--h", "0.4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["config"]["fit"]["common"]["tau"], 0.75);
    assert_eq!(s["config"]["fit"]["common"]["kernel"], "triangular");
    assert_eq!(s["config"]["fit"]["sampler"]["n_chains"], 2);

    std::fs::write(&cfg, "taw = 0.3\n").unwrap();
    let o = bsqr(&["fit", "--config", cfg.to_str().unwrap(), "--data", data("toy.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("taw"));
}

#[test]
fn simulate_writes_one_metrics_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = bsqr(&[
        "simulate", "--scenario", "dense", "--m", "5", "--n-train", "60", "--n-test", "100", "--iters", "300",
        "--h", "0.5", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    for (line, m) in lines[1..].iter().zip(["BSQR-Uniform", "BQR-ALD", "StdQR"]) {
        assert!(line.starts_with(&format!("dense,normal,0.5,{m},5,0,")), "{line}");
    }
    let reps = std::fs::read_to_string(dir.path().join("replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 15);
    assert_eq!(summary(dir.path())["result"]["methods"].as_array().unwrap().len(), 3);
}

#[test]
fn cv_and_diagnose_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let toy = data("toy.csv");
    let o = bsqr(&["cv", "--data", toy.to_str().unwrap(), "--folds", "2", "--multipliers", "0.5,1,2", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cv: Vec<CvRow> = read_rows(&dir.path().join("cv.csv")).unwrap();
    assert_eq!(cv.iter().map(|r| r.multiplier).collect::<Vec<_>>(), vec![0.5, 1.0, 2.0]);

    let fit_dir = dir.path().join("fit");
    let o = bsqr(&["fit", "--data", toy.to_str().unwrap(), "--method", "ald", "--iters", "400", "--out", fit_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let diag_dir = dir.path().join("diag");
    let o = bsqr(&["diagnose", "--draws", fit_dir.join("draws.csv").to_str().unwrap(), "--out", diag_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // the diagnostics recomputed from the file agree with those of the fit
    let fit = summary(&fit_dir);
    let diag = summary(&diag_dir);
    for j in 0..3 {
        let (a, b) = (&fit["result"]["summary"]["params"][j], &diag["result"]["params"][j]);
        assert_eq!(a["mean"], b["mean"]);
        assert_eq!(a["rhat"], b["rhat"]);
        assert_eq!(a["ess"], b["ess"]);
    }
}
