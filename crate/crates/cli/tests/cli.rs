//! End-to-end run of the binary over the bundled fixture log: preprocess,
//! train, evaluate (model and baseline), suggest, export-states and
//! dump-schedule, checking files, formats and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ahnqs"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/aol_fixture.tsv")
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn pipeline_end_to_end() {
    let dir = std::env::temp_dir().join(format!("ahnqs-cli-e2e-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    let data = dir.join("data");
    let fixture = fixture();

    // Preprocess with thresholds the fixture survives.
    run(&[
        "preprocess",
        "--input",
        fixture.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
        "--min-query-count",
        "2",
        "--min-session-len",
        "2",
        "--min-user-sessions",
        "1",
        "--valid-window-days",
        "0",
    ]);
    for f in ["corpus.tsv", "vocab.tsv", "stats.json"] {
        assert!(data.join(f).is_file(), "{f} must be written");
    }
    let corpus_text = std::fs::read_to_string(data.join("corpus.tsv")).unwrap();
    for line in corpus_text.lines() {
        assert_eq!(line.split('\t').count(), 4, "corpus line format");
    }
    let vocab_text = std::fs::read_to_string(data.join("vocab.tsv")).unwrap();
    assert!(vocab_text.lines().any(|l| l.ends_with("\trare")));

    // Train twice with the same seed: identical checkpoints.
    let ckpt_a = dir.join("a.ckpt");
    let ckpt_b = dir.join("b.ckpt");
    for ckpt in [&ckpt_a, &ckpt_b] {
        run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--model",
            "hnqs",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--epochs",
            "1",
            "--hidden-dim",
            "4",
            "--batch-size",
            "2",
            "--seed",
            "7",
        ]);
    }
    let bytes_a = std::fs::read(&ckpt_a).unwrap();
    let bytes_b = std::fs::read(&ckpt_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed and flags must give identical checkpoints");

    // Evaluate the checkpoint and the baseline.
    let report = dir.join("report.json");
    let tsv = dir.join("report.tsv");
    let out = run(&[
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt_a.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--tsv",
        tsv.to_str().unwrap(),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["k"], 10);
    assert!(parsed["overall"]["points"].as_u64().unwrap() > 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall"));
    let tsv_text = std::fs::read_to_string(&tsv).unwrap();
    assert!(tsv_text.lines().any(|l| l.starts_with("hnqs\toverall\tmrr@10\t")));

    run(&["evaluate", "--data", data.to_str().unwrap(), "--baseline", "adj"]);

    // One-shot suggestion over a known vocabulary word.
    let out = run(&[
        "suggest",
        "--checkpoint",
        ckpt_a.to_str().unwrap(),
        "--top-k",
        "2",
        "mail",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 2, "--top-k 2 prints two lines: {stdout}");

    // Hidden-state export for user 3's first surviving session.
    let csv = dir.join("states.csv");
    run(&[
        "export-states",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        ckpt_a.to_str().unwrap(),
        "--user",
        "3",
        "--session",
        "0",
        "--out",
        csv.to_str().unwrap(),
    ]);
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = csv_text.lines();
    assert!(lines.next().unwrap().starts_with("unit,q1,"));
    assert_eq!(lines.count(), 4, "one row per hidden unit");

    // Schedule dump.
    let sched = dir.join("schedule.tsv");
    run(&[
        "dump-schedule",
        "--data",
        data.to_str().unwrap(),
        "--batch-size",
        "2",
        "--seed",
        "3",
        "--out",
        sched.to_str().unwrap(),
    ]);
    let sched_text = std::fs::read_to_string(&sched).unwrap();
    assert!(sched_text.starts_with("step\tslot\tuser\tsession\t"));
    assert!(sched_text.lines().count() > 1);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_config_file_overrides_and_flags_win() {
    let dir = std::env::temp_dir().join(format!("ahnqs-cli-cfg-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    let data = dir.join("data");
    run(&[
        "preprocess",
        "--input",
        fixture().to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
        "--min-query-count",
        "2",
        "--min-session-len",
        "2",
        "--min-user-sessions",
        "1",
        "--valid-window-days",
        "0",
    ]);

    // Config file asks for 3 epochs; the flag overrides down to 2. The log
    // then carries exactly two epoch lines.
    let config = dir.join("train.json");
    std::fs::write(&config, r#"{"epochs": 3, "hidden_dim": 4, "batch_size": 2, "seed": 5}"#)
        .unwrap();
    let log = dir.join("train.log");
    run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "nqs",
        "--checkpoint",
        dir.join("m.ckpt").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--epochs",
        "2",
        "--log",
        log.to_str().unwrap(),
    ]);
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(log_text.lines().count(), 2, "flag must override the config file");
    let first: serde_json::Value = serde_json::from_str(log_text.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 0);
    assert!(first["mean_loss"].as_f64().unwrap().is_finite());

    // Unknown keys in the config file are rejected.
    std::fs::write(&config, r#"{"epoch_count": 3}"#).unwrap();
    let out = bin()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--model",
            "nqs",
            "--checkpoint",
            dir.join("m2.ckpt").to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_input_names_path() {
    let out = bin()
        .args(["preprocess", "--input", "/nonexistent/log.tsv", "--out-dir", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/log.tsv"), "stderr: {stderr}");
}

#[test]
fn evaluate_requires_exactly_one_scorer() {
    let out = bin().args(["evaluate", "--data", "/tmp/none"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn interactive_suggest_reports_unknown_and_session_end() {
    use std::io::Write;
    let dir = std::env::temp_dir().join(format!("ahnqs-cli-int-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    let data = dir.join("data");
    run(&[
        "preprocess",
        "--input",
        fixture().to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
        "--min-query-count",
        "2",
        "--min-session-len",
        "2",
        "--min-user-sessions",
        "1",
        "--valid-window-days",
        "0",
    ]);
    let ckpt = dir.join("m.ckpt");
    run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--model",
        "ahnqs",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--epochs",
        "1",
        "--hidden-dim",
        "4",
        "--batch-size",
        "2",
        "--seed",
        "1",
    ]);

    let mut child = bin()
        .args(["suggest", "--checkpoint", ckpt.to_str().unwrap(), "--top-k", "1"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    {
        let stdin = child.stdin.as_mut().unwrap();
        writeln!(stdin, "mail").unwrap();
        writeln!(stdin, "no such query ever").unwrap();
        writeln!(stdin).unwrap(); // blank line: session ends
        writeln!(stdin, "rare").unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("unknown query"), "{stdout}");
    assert!(stdout.contains("session ended"), "{stdout}");

    std::fs::remove_dir_all(&dir).ok();
}
