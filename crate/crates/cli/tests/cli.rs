use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn adaptctl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptctl"))
        .args(args)
        .current_dir(dir)
        .env("ADAPTCTL_KNOWLEDGE_DIR", dir)
        .output()
        .unwrap()
}

#[test]
fn run_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = adaptctl(
        dir.path(),
        &[
            "run", "--kp", "70", "--ki", "0.4", "--seed", "3", "--out", "r",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "response.csv",
        "commands.csv",
        "strategy.toml",
        "report.toml",
    ] {
        assert!(dir.path().join("r").join(f).is_file(), "missing {f}");
    }
    let report = std::fs::read_to_string(dir.path().join("r/report.toml")).unwrap();
    assert!(report.starts_with("# adaptctl report v1"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let code = |args: &[&str]| adaptctl(dir.path(), args).status.code();

    assert_eq!(code(&["run", "--scenario", "missing.toml"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(
        code(&["collect", "enactor", "--grid-kp", "10:5:1"]),
        Some(2)
    );
    assert_eq!(code(&["report"]), Some(2));

    std::fs::write(
        dir.path().join("f.txt"),
        "# adaptctl formula v1\nrproc * heart\n",
    )
    .unwrap();
    assert_eq!(code(&["run", "--formula", "f.txt"]), Some(1));
}

#[test]
fn wrong_artifact_kind_is_rejected() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("g.toml"), "# adaptctl scenario v1\n").unwrap();
    let out = adaptctl(dir.path(), &["run", "--goals", "g.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("goals"));
}
