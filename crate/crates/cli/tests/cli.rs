use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn credfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_credfuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn short_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("short.toml");
    std::fs::write(
        &path,
        format!(
            "estimators = [\"IMM-RIEKF\", \"RIEKF-M2\"]\n[trajectory]\nduration = 5.0\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = credfuse(&[
        "run",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("M1: GPS1"));
    assert!(text.contains("RIEKF-M2"));
    for f in [
        "truth.csv",
        "summary.csv",
        "IMM-RIEKF_mu.csv",
        "RIEKF-M2_error.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    let m = credfuse(&[
        "metrics",
        out.join("truth.csv").to_str().unwrap(),
        out.join("IMM-RIEKF_state.csv").to_str().unwrap(),
    ]);
    assert!(m.status.success());
    assert!(stdout(&m).contains("rmse"));
}

#[test]
fn estimator_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), "");
    let o = credfuse(&[
        "run",
        cfg.to_str().unwrap(),
        "--estimators",
        "ESEKF-M3",
        "--seed",
        "9",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("ESEKF-M3") && !text.contains("IMM-RIEKF "));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = short_config(dir.path(), "bogus = 1\n");
    assert_eq!(
        credfuse(&["run", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(
        credfuse(&["run", "/nonexistent.toml"]).status.code(),
        Some(2)
    );
    let cfg = short_config(dir.path(), "");
    let o = credfuse(&["run", cfg.to_str().unwrap(), "--estimators", "KF"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn credibility_table() {
    let o = credfuse(&[
        "credibility",
        configs().join("sensors.toml").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("434.7826"));
    assert!(text.contains("19.6078"));
    assert!(text.contains("0.5669  0.2165  0.2165"));
}

#[test]
fn shipped_configs_parse() {
    for name in ["nominal.toml", "resilience.toml"] {
        let text = std::fs::read_to_string(configs().join(name)).unwrap();
        credfuse_core::harness::ScenarioConfig::from_toml_str(&text).unwrap();
    }
}
