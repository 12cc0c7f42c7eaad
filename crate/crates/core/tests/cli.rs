use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tnn");

const SMALL: &str = r#"problem = "laplace"
dim = 2
epochs = 12
log_every = 4

[model]
rank = 2
width = 6

[quadrature]
subintervals = 3
points_per_subinterval = 5
"#;

fn tnn(args: &[&str], out: &Path, envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env("TNN_OUTPUT_DIR", out).env_remove("TNN_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_succeeds_and_honours_the_output_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    let o = tnn(&["run", &cfg, "--verbose"], &out, &[("TNN_THREADS", "1")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("epoch,loss,"));
    for f in ["convergence.csv", "summary.json", "model.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn config_errors_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad = write(tmp.path(), "bad.toml", "problem = \"laplace\"\ndim = -3\n");
    let o = tnn(&["run", &bad], &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("dim"), "{err}");

    let missing = tmp.path().join("nope.toml");
    assert_eq!(
        tnn(&["run", missing.to_str().unwrap()], &out, &[]).status.code(),
        Some(1)
    );

    let good = write(tmp.path(), "c.toml", SMALL);
    let o = tnn(&["run", &good], &out, &[("TNN_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(1));

    let o = tnn(&["sweep", &good, "--ranks", "2,2"], &out, &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn training_failure_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    // boundary factors overflow at initialization
    let text = SMALL
        .replace("\"laplace\"", "\"harmonic\"")
        .replace("epochs = 12", "epochs = 12\ntruncation = 1e200");
    let cfg = write(tmp.path(), "c.toml", &text);
    let o = tnn(&["run", &cfg], &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn sweep_writes_the_combined_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    let o = tnn(&["sweep", &cfg, "--ranks", "1,2"], &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("p1").join("summary.json").exists());
    assert!(out.join("p2").join("summary.json").exists());
}

#[test]
fn check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tnn(&["check"], tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
