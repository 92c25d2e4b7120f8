//! Exit codes and outputs of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

fn lobisarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lobisarl"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "training_episodes = 1\n");
    let out = dir.path().join("out");
    let o = lobisarl(&[
        "run",
        "--config",
        &cfg,
        "--seeds",
        "0..2",
        "--out",
        out.to_str().unwrap(),
        "--plot",
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("LoBiSaRL") && stdout.contains("seeds completed 2"));
    for f in ["records.csv", "summary.json", "config.toml", "summary.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 5);
}

#[test]
fn random_only_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "agents = [\"Random\"]\n");
    let out = dir.path().join("out");
    let o = lobisarl(&[
        "run",
        "--config",
        &cfg,
        "--seeds",
        "0..1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lobisarl(&["run", "--seeds", "5..2"]).status.code(), Some(1));
    assert_eq!(lobisarl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lobisarl(&["--help"]).status.code(), Some(0));
    let bad = write(dir.path(), "bad.toml", "no_such_key = 3\n");
    assert_eq!(lobisarl(&["run", "--config", &bad]).status.code(), Some(1));
    let invalid = write(dir.path(), "inv.toml", "max_skip_rate = 2.0\n");
    assert_eq!(lobisarl(&["demo", "--config", &invalid]).status.code(), Some(1));
}

#[test]
fn excessive_skips_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "start_margin = 100.0\nmax_retries = 2\n");
    let out = dir.path().join("out");
    let o = lobisarl(&[
        "run",
        "--config",
        &cfg,
        "--seeds",
        "0..2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn selftest_and_certify_pass() {
    let o = lobisarl(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    let o = lobisarl(&["certify", "--trials", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn certify_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "l_phi = 0.05\nstart_margin = 0.5\n");
    let o = lobisarl(&["certify", "--config", &cfg, "--trials", "1000"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL feature lipschitz"));
}

#[test]
fn demo_traces_an_episode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "training_episodes = 1\n");
    let o = lobisarl(&["demo", "--config", &cfg, "--seed", "1", "--agent", "Instantaneous"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(
        text.lines()
            .filter(|l| l.trim_start().starts_with(char::is_numeric))
            .count(),
        50
    );
}
