use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn param_count_resolves_budget() {
    let out = lmn(&["param-count", "--arch", "rnn", "--n-x", "0", "--budget", "1000"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["arch"]["n_h"], 30);
    assert_eq!(v["params"], 961);

    let out = lmn(&["param-count", "--arch", "lmn", "--n-x", "0", "--n-h", "2", "--n-m", "29"]);
    assert_eq!(stdout_json(&out)["params"], 1018);
}

#[test]
fn bad_arguments_fail_with_diagnostic() {
    let out = lmn(&["param-count", "--arch", "rnn", "--n-h", "4", "--budget", "100"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = lmn(&["train", "--config", "/nonexistent/config.json", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));

    assert!(!lmn(&["no-such-command"]).status.success());
}

#[test]
fn gradcheck_passes_for_every_arch() {
    for arch in [
        &["--arch", "rnn", "--n-h", "3"][..],
        &["--arch", "lmn", "--n-h", "3", "--n-m", "4"],
        &["--arch", "lmn", "--n-h", "3", "--n-m", "4", "--hidden-readout"],
        &["--arch", "urnn", "--n-h", "3", "--k", "2"],
        &["--arch", "mslmn", "--n-h", "3", "--module-size", "2", "--modules", "3"],
    ] {
        let mut args = vec!["gradcheck", "--len", "7"];
        args.extend_from_slice(arch);
        let out = lmn(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout_json(&out)["max_relative_error"].as_f64().unwrap() <= 1e-4);
    }
}

#[test]
fn gen_data_fit_laes_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = lmn(&["gen-data", "--task", "pianoroll", "--n-sequences", "4", "--length", "6",
        "--n-notes", "3", "--seed", "1", "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let data = dir.path().join("dataset.jsonl");
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 4);

    let laes_dir = dir.path().join("laes");
    let out = lmn(&["fit-laes", "--data", p(&data), "--out", p(&laes_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(laes_dir.join("laes.json")).unwrap()).unwrap();
    let rank = summary["rank"].as_u64().unwrap() as usize;
    let curve = fs::read_to_string(laes_dir.join("truncation.csv")).unwrap();
    assert_eq!(curve.lines().count(), rank + 1);
    let last: Vec<f64> = curve.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(last[2] <= 1e-8, "exact rank reconstructs: {}", last[2]);

    // train briefly on the same task through a config, then evaluate the checkpoint
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"task": {"kind": "pianoroll", "n_sequences": 4, "length": 6, "n_notes": 3},
            "model": {"arch": "lmn", "n_h": 3, "n_m": 3},
            "train": {"max_epochs": 3}}"#,
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let out = lmn(&["train", "--config", p(&cfg), "--seed", "1", "--out", p(&run_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["seed"], 1);
    let out = lmn(&["eval", "--checkpoint", p(&run_dir.join("checkpoint.json")), "--data", p(&data),
        "--loss", "bce"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_json(&out)["frame_accuracy"].is_number());
}

#[test]
fn sweep_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(
        &cfg,
        r#"{"base": {"task": {"kind": "generation", "length": 20},
                     "model": {"arch": "rnn", "budget": 100},
                     "train": {"max_epochs": 2, "batch_size": 1}},
            "grid": {"seed": [0, 1], "train.learning_rate": [0.01]}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = lmn(&["sweep", "--config", p(&cfg), "--out", p(&out_dir), "--jobs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(out_dir.join("run_001/predictions.csv").exists());
}
