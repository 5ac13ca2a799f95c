//! The command-line tool end to end, including a backend served by the
//! tool itself in a child process.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_denoise");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn external_backend_matches_the_built_in_one() {
    let dir = tempfile::tempdir().unwrap();
    let (data, models) = (dir.path().join("data"), dir.path().join("models"));
    run_ok(&["synth", "--out", path(&data), "--per-class", "60", "--seed", "4"]);
    run_ok(&["train", "--data", path(&data), "--out", path(&models), "--epochs", "4"]);
    let noisy = dir.path().join("noisy.ndjson");
    let test = data.join("test.ndjson");
    run_ok(&["inject", "--corpus", path(&test), "--models", path(&models), "--out", path(&noisy), "--rate", "0.5"]);

    let local = dir.path().join("local.conf");
    std::fs::write(&local, "repetitions = 1\nseed = 5\n").unwrap();
    let external = dir.path().join("external.conf");
    std::fs::write(
        &external,
        format!(
            "repetitions = 1\nseed = 5\nbackend.kind = external\nbackend.command = {BIN} serve --models {}\n",
            path(&models)
        ),
    )
    .unwrap();

    let mut outcomes = Vec::new();
    for (name, config) in [("local", &local), ("external", &external)] {
        let out = dir.path().join(name);
        run_ok(&[
            "evaluate",
            "--models",
            path(&models),
            "--corpus",
            path(&noisy),
            "--out",
            path(&out),
            "--config",
            path(config),
        ]);
        outcomes.push(std::fs::read(out.join("outcomes.ndjson")).unwrap());
    }
    assert!(!outcomes[0].is_empty());
    assert_eq!(outcomes[0], outcomes[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["evaluate", "--no-such-flag"]).status.code(), Some(1));

    let data = dir.path().join("data");
    let models = dir.path().join("models");
    run_ok(&["synth", "--out", path(&data), "--per-class", "20"]);
    run_ok(&["train", "--data", path(&data), "--out", path(&models), "--epochs", "1"]);
    let mut child = Command::new(BIN)
        .args(["denoise", "--models", path(&models)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"def (\n").unwrap();
    assert_eq!(child.wait_with_output().unwrap().status.code(), Some(3));

    let broken = dir.path().join("broken.conf");
    std::fs::write(&broken, "backend.kind = external\nbackend.command = false\n").unwrap();
    let test = data.join("test.ndjson");
    let out = dir.path().join("out");
    let status = run(&[
        "evaluate",
        "--models",
        path(&models),
        "--corpus",
        path(&test),
        "--out",
        path(&out),
        "--config",
        path(&broken),
    ]);
    assert_eq!(status.status.code(), Some(2), "{}", String::from_utf8_lossy(&status.stderr));
}
