use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn windpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windpool"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SPEC: &str = r#"
m = 2
n_scenarios = 6
n_days = 15
n_leads = 4
bias_fraction = 0.1
shrink = 0.5
seed = 3
"#;

fn write_config(dir: &Path, method: &str) -> PathBuf {
    let body = format!(
        r#"
method = "{method}"
seed = 5
output_dir = "out-{method}"

[dataset]
split_fraction = 0.6

[dataset.synthetic]
{SMALL_SPEC}

[training]
max_epochs = 4
patience = 2
validation_fraction = 0.34
"#
    );
    let path = dir.join(format!("{method}.toml"));
    fs::write(&path, body).unwrap();
    path
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn generate_is_deterministic_and_records_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = windpool(&["generate", "--spec", s(&spec), "--out", s(dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(files(&a), files(&b));
    let truth = fs::read_to_string(a.join("truth.json")).unwrap();
    assert!(truth.contains("\"shrink\": 0.5"));
    assert!(truth.contains("\"bias_fraction\": 0.1"));
    assert!(a.join("manifest.toml").exists());
}

#[test]
fn invalid_spec_exits_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.toml");
    fs::write(&spec, SMALL_SPEC.replace("shrink = 0.5", "shrink = 0.0")).unwrap();
    let out = windpool(&["generate", "--spec", s(&spec), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("shrink"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&windpool(&["frobnicate"])), 1);
    assert_eq!(code(&windpool(&["run"])), 1);
    assert_eq!(code(&windpool(&["--help"])), 0);
}

#[test]
fn bottom_up_refuses_to_train() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bottom_up");
    let out = windpool(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to train"));
}

#[test]
fn trained_method_needs_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "projection");
    let out = windpool(&["run", "--config", s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn train_run_report_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let np = write_config(tmp.path(), "nonparametric");
    let out = windpool(&["train", "--config", s(&np)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let np_dir = tmp.path().join("out-nonparametric");
    for f in ["checkpoint.json", "training_report.json", "training_curve.csv", "timing.json"] {
        assert!(np_dir.join(f).exists(), "{f}");
    }
    let out = windpool(&["run", "--config", s(&np)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "offers.csv",
        "duals.csv",
        "allocations.csv",
        "ranks.csv",
        "histogram.csv",
        "metrics.json",
        "core_audit.json",
        "reconciled_scenarios.csv",
        "run_manifest.json",
    ] {
        assert!(np_dir.join(f).exists(), "{f}");
    }
    let core = fs::read_to_string(np_dir.join("core_audit.json")).unwrap();
    assert!(core.contains("\"all_in_core\": true"));
    assert!(!core.contains("\"is_core\": false"));
    let metrics = fs::read_to_string(np_dir.join("metrics.json")).unwrap();
    assert!(metrics.contains("\"budget_balanced\": true"));

    let indep = write_config(tmp.path(), "independent");
    let out = windpool(&["run", "--config", s(&indep)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let report_dir = tmp.path().join("report");
    let ind_dir = tmp.path().join("out-independent");
    let out = windpool(&["report", s(&ind_dir), s(&np_dir), "--out", s(&report_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let profits = fs::read_to_string(report_dir.join("profits.csv")).unwrap();
    let lines: Vec<&str> = profits.lines().collect();
    assert_eq!(lines[0], "producer,independent,nonparametric");
    assert_eq!(lines.len(), 3);
    let hist = fs::read_to_string(report_dir.join("histogram_nonparametric.csv")).unwrap();
    assert!(hist.starts_with("bin,count,frequency,lower,upper"));

    let out = windpool(&["audit", s(&np_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(np_dir.join("audit_report.json").exists());
    assert_eq!(code(&windpool(&["audit", s(&ind_dir)])), 1);
}

#[test]
fn missing_run_directory_fails_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = windpool(&["report", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("r"))]);
    assert_ne!(code(&out), 0);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "nonparametric");
    let mut dirs = Vec::new();
    for threads in ["1", "3"] {
        let dir = tmp.path().join(format!("t{threads}"));
        for cmd in ["train", "run"] {
            let out = windpool(&[cmd, "--config", s(&cfg), "--threads", threads, "--output-dir", s(&dir)]);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        }
        dirs.push(dir);
    }
    let (a, b) = (files(&dirs[0]), files(&dirs[1]));
    assert!(a.len() >= 12);
    for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ca == cb, "{na} differs between thread counts");
    }
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bottom_up");
    let dir = tmp.path().join("custom");
    let out = windpool(&["run", "--config", s(&cfg), "--method", "independent", "--seed", "9", "--output-dir", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.join("run_manifest.json")).unwrap();
    assert!(manifest.contains("\"method\": \"independent\""));
    assert!(manifest.contains("\"seed\": 9"));
}
