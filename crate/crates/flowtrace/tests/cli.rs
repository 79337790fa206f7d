use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flowtrace"));
    c.env_remove("FLOWTRACE_JOBS");
    c
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/double_integrator.model")
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn replay(out: &Path, jobs: &str, extra: &[&str]) -> Output {
    let model = fixture();
    let mut args = vec![
        "replay",
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        jobs,
    ];
    args.extend_from_slice(extra);
    bin().args(&args).output().unwrap()
}

#[test]
fn stealth_audit_prints_report() {
    let out = run(&["stealth-audit", "--model", fixture().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("normal rank"));
    assert!(text.contains("stealthy attack     none"));
}

#[test]
fn missing_model_is_usage_error_naming_path() {
    let out = run(&["simulate", "--model", "/no/such/file.model"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("/no/such/file.model"));
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["replay"]).status.code(), Some(1));
    assert_eq!(run(&["roc", "--model", "x", "--detector", "cusum"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_model_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.model");
    let text = std::fs::read_to_string(fixture()).unwrap().replace("[0.1, 0.0],\n      [0.0, 0.1]\n    ],\n    \"x0_mean\"", "[0.0, 0.0],\n      [0.0, 0.0]\n    ],\n    \"x0_mean\"");
    assert!(text.contains("[0.0, 0.0],\n      [0.0, 0.0]"));
    std::fs::write(&path, text).unwrap();
    let out = run(&["simulate", "--model", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("singular"));

    std::fs::write(&path, "{}").unwrap();
    let out = run(&["simulate", "--model", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unstabilizable_plant_is_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("unstable.model");
    let text = std::fs::read_to_string(fixture())
        .unwrap()
        .replace("\"B\": [\n      [0.005],\n      [0.1]\n    ]", "\"B\": [\n      [0.0],\n      [0.0]\n    ]");
    std::fs::write(&path, text).unwrap();
    let out = run(&["replay", "--model", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let expected: &[(&str, &[&str])] = &[
        ("simulate", &["--model", "--out", "--seed", "--trials", "--horizon", "--jobs", "--watermark-deltaJ", "--detector", "--delta", "--format"]),
        ("replay", &["--model", "--out", "--seed", "--trials", "--horizon", "--jobs", "--watermark-deltaJ", "--detector", "--delta", "--format"]),
        ("roc", &["--model", "--out", "--seed", "--trials", "--horizon", "--jobs", "--detector", "--delta"]),
        ("fdi", &["--model", "--out", "--seed", "--ua", "--da", "--jobs", "--detector"]),
        ("stealth-audit", &["--model", "--out", "--horizon", "--rtol"]),
        ("watermark-design", &["--model", "--out", "--watermark-deltaJ"]),
    ];
    for (cmd, flags) in expected {
        let out = run(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        for flag in *flags {
            assert!(text.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn outputs_are_independent_of_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = ["--trials", "200", "--horizon", "60", "--seed", "9", "--watermark-deltaJ", "0.4"];
    assert_eq!(replay(a.path(), "1", &extra).status.code(), Some(0));
    assert_eq!(replay(b.path(), "8", &extra).status.code(), Some(0));
    for f in ["roc.csv", "ifcurve.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    // the environment variable supplies the default worker count
    let c = tempfile::tempdir().unwrap();
    let mut cmd = bin();
    cmd.env("FLOWTRACE_JOBS", "3").args([
        "replay",
        "--model",
        fixture().to_str().unwrap(),
        "--out",
        c.path().to_str().unwrap(),
    ]);
    assert_eq!(cmd.args(extra).output().unwrap().status.code(), Some(0));
    assert_eq!(std::fs::read(a.path().join("roc.csv")).unwrap(), std::fs::read(c.path().join("roc.csv")).unwrap());
}

/// Regenerate with `FLOWTRACE_BLESS=1 cargo test -p flowtrace --test cli`.
#[test]
fn replay_pipeline_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = replay(
        dir.path(),
        "2",
        &["--watermark-deltaJ", "0.40", "--trials", "1000", "--horizon", "200", "--seed", "1", "--format", "csv+svg"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("ifcurve.svg").exists());
    for (name, file) in [("replay_roc.csv", "roc.csv"), ("replay_ifcurve.csv", "ifcurve.csv")] {
        let got = std::fs::read_to_string(dir.path().join(file)).unwrap();
        if std::env::var_os("FLOWTRACE_BLESS").is_some() {
            std::fs::write(golden(name), &got).unwrap();
        }
        assert_eq!(got, std::fs::read_to_string(golden(name)).unwrap(), "{name}");
    }
}

#[test]
fn roc_and_fdi_and_watermark_commands_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let m = fixture();
    let m = m.to_str().unwrap();
    let out = run(&["roc", "--model", m, "--out", d, "--trials", "100", "--horizon", "30", "--detector", "chi2", "--delta", "0.1", "--jobs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert!(roc.starts_with("k,alpha,beta,threshold,detector,scenario_id,seed\n"));
    assert_eq!(roc.lines().count(), 32);
    assert!(!dir.path().join("ifcurve.csv").exists());

    let out = run(&["fdi", "--model", m, "--out", d, "--trials", "100", "--horizon", "30", "--da", "0.3,-0.2", "--jobs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let curve = std::fs::read_to_string(dir.path().join("ifcurve.csv")).unwrap();
    assert!(curve.starts_with("k,mean_perstep_kl,cum_if_lowerbound,exact_if,epsilon_bound\n"));
    // exact flow present, no watermark bound
    let row: Vec<&str> = curve.lines().nth(1).unwrap().split(',').collect();
    assert!(!row[3].is_empty());
    assert!(row[4].is_empty());

    let out = run(&["fdi", "--model", m, "--out", d]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["watermark-design", "--model", m, "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dJ/J*               0.4"));
    assert!(dir.path().join("watermark.csv").exists());
}
