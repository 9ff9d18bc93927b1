use std::path::Path;
use std::process::{Command, Output};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erasure-lasso"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn gen_design_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.txt", "b.txt"] {
        let o = cli(dir.path(), &["gen-design", "--m", "8", "--n", "16", "--d", "3", "--seed", "1", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = cli(dir.path(), &["gen-design", "--m", "8", "--n", "16", "--d", "3", "--seed", "2", "--out", "c.txt"]);
    assert!(o.status.success());
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.txt"), read("b.txt"));
    assert_ne!(read("a.txt"), read("c.txt"));
}

#[test]
fn missing_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["check-expander", "--in", "nope.txt", "--epsilon", "0.3", "--k", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));
}

#[test]
fn malformed_design_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "2 3 2\n1 1\n2 x\n").unwrap();
    let o = cli(dir.path(), &["check-expander", "--in", "bad.txt", "--epsilon", "0.3", "--k", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn failing_assertion_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "isotropic_n = 8\nsignal = \"sparse\"\nk = 1\npreconditioners = [\"identity\"]\nm_list = [8]\ntrials = 2\nseed = 3\nassertions = [\"failure >= 0.9 @ m=8 precond=identity\"]\n";
    std::fs::write(dir.path().join("cfg.toml"), cfg).unwrap();
    let o = cli(dir.path(), &["run-experiment", "--config", "cfg.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("out/summary.csv").exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), "isotropic_n = 8\nbogus = 1\n").unwrap();
    let o = cli(dir.path(), &["run-experiment", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
}
