use std::path::Path;
use std::process::{Command, Output};

fn sfag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfag"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn simulate_then_backtest_and_reproduce() {
    let d = tempfile::tempdir().unwrap();
    let o = sfag(d.path(), &["simulate", "--n", "800", "--seed", "3", "--out", "sim"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("sim/returns.csv").exists());

    let o = sfag(d.path(), &["backtest", "sim/returns.csv", "--out", "bt"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(d.path().join("bt/backtest.json")).unwrap();
    assert!(report.contains("\"schema_version\": 1"));

    let o = sfag(d.path(), &["reproduce", "bt/backtest.json", "--out", "again"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seed_flag_overrides_config() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("run.toml"), "seed = 1\n[simulate]\nn = 300\n").unwrap();
    let a = sfag(d.path(), &["simulate", "--config", "run.toml", "--out", "a"]);
    let b = sfag(d.path(), &["simulate", "--config", "run.toml", "--seed", "2", "--out", "b"]);
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0);
    let ra = std::fs::read(d.path().join("a/returns.csv")).unwrap();
    let rb = std::fs::read(d.path().join("b/returns.csv")).unwrap();
    assert_ne!(ra, rb);
    let rep = std::fs::read_to_string(d.path().join("b/simulate.json")).unwrap();
    assert!(rep.contains("\"seed\": 2"));
}

#[test]
fn error_kinds_have_documented_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("bad.csv"), "date,close\n2020-01-01,10\n2020-01-02,x\n").unwrap();
    std::fs::write(p.join("bad.toml"), "[train]\nnope = 1\n").unwrap();
    std::fs::write(p.join("junk.sfag"), b"not a checkpoint").unwrap();

    assert_eq!(code(&sfag(p, &["ingest", "bad.csv"])), 4);
    assert_eq!(code(&sfag(p, &["ingest", "missing.csv"])), 3);
    assert_eq!(code(&sfag(p, &["simulate", "--config", "bad.toml"])), 2);
    assert_eq!(code(&sfag(p, &["simulate", "--config", "nowhere.toml"])), 3);
    assert_eq!(code(&sfag(p, &["generate", "none.sfag"])), 5);
    assert_eq!(code(&sfag(p, &["generate", "junk.sfag"])), 6);
    assert_eq!(code(&sfag(p, &["train", "x.csv", "--objective", "gan"])), 2);
}
