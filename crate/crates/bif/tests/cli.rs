use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bif(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bif"));
    cmd.args(&args[..1]).arg("--out-dir").arg(dir).args(&args[1..]).env_remove("BIF_SEED");
    cmd.output().expect("bif runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_data_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        let o = bif(d, &["gen-data", "--model", "gmm", "--inference", "vi", "--n", "200", "--seed", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["train.csv", "test.csv", "config.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(a.path().join("train.csv")).unwrap().lines().count();
    assert_eq!(rows, 201);
}

#[test]
fn stepwise_pipeline_writes_every_artifact() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let o = bif(p, &["gen-data", "--model", "conjugate", "--inference", "sgld", "--iterations", "500", "--retain-last", "200"]);
    assert!(o.status.success());
    for step in ["train", "forget", "retrain"] {
        let o = bif(p, &[step]);
        assert!(o.status.success(), "{step}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = bif(p, &["certify"]);
    assert!(o.status.success());
    let line = stdout(&o);
    assert!(line.starts_with("ε=") && line.contains("kind=mcmc") && line.trim_end().ends_with("n=400"), "{line}");
    for f in ["samples_original.json", "samples_processed.json", "samples_retrained.json", "metrics.csv", "audit.json", "certificate.json"] {
        assert!(p.join(f).exists(), "{f}");
    }
    let cfg = fs::read_to_string(p.join("config.toml")).unwrap();
    assert!(cfg.contains("iterations = 500"));
}

#[test]
fn missing_checkpoint_fails_with_a_hint() {
    let d = tempfile::tempdir().unwrap();
    let o = bif(d.path(), &["forget", "--model", "conjugate", "--inference", "vi"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("params_original.json") && err.contains("train"), "{err}");
}

#[test]
fn bad_overrides_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let base = ["run-all", "--model", "conjugate", "--inference", "vi"];
    for extra in [&["--no-such-key", "1"][..], &["--n"][..], &["n", "3"][..], &["--n", "many"][..]] {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let o = bif(d.path(), &args);
        assert!(!o.status.success(), "{args:?}");
        assert!(!d.path().join("report.json").exists());
    }
}

#[test]
fn seed_env_overrides_config() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bif"))
        .args(["gen-data", "--out-dir"])
        .arg(d.path())
        .args(["--model", "conjugate", "--inference", "sgld"])
        .env("BIF_SEED", "31")
        .output()
        .unwrap();
    assert!(o.status.success());
    let cfg = fs::read_to_string(d.path().join("config.toml")).unwrap();
    assert!(cfg.lines().any(|l| l == "seed = 31"), "{cfg}");
}

#[test]
fn run_all_then_report() {
    let d = tempfile::tempdir().unwrap();
    let o = bif(d.path(), &["run-all", "--model", "conjugate", "--inference", "vi"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("kind=vi"));
    let r = bif(d.path(), &["report"]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("model=conjugate inference=vi n=400 removed=8"));
}

#[test]
fn failed_phase_gives_nonzero_exit_and_partial_report() {
    let d = tempfile::tempdir().unwrap();
    let o = bif(d.path(), &["run-all", "--model", "conjugate", "--inference", "vi", "--neumann-j", "4", "--scale", "fixed", "--scale-value", "1.0"]);
    assert!(!o.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["failure"]["phase"], "forget");
    assert!(report["certificate"].is_null());
}
