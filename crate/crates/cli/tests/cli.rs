//! End-to-end CLI tests: subcommand flows, file outputs, exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sewa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sewa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_train_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("train.json");
    fs::write(
        &path,
        r#"{
            "dataset": {"kind": "blobs", "n": 150, "p": 2, "classes": 3, "noise": 1.0, "seed": 5},
            "model": {"layer_sizes": [2, 8, 3], "activation": "relu", "loss_kind": "cross_entropy_softmax"},
            "train": {"steps": 80, "lr_schedule": {"kind": "constant", "alpha": 0.2}, "batch_size": 8, "seed": 1, "capture_every": 10},
            "window_k": 6
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn train_average_sewa_flow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path());
    let window_dir = dir.path().join("window");

    let out = sewa(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        window_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(window_dir.join("manifest.json").exists());
    assert!(window_dir.join("ckpt_000000.bin").exists());

    // uniform average over the persisted window
    let avg_path = dir.path().join("uniform.bin");
    let out = sewa(&[
        "average",
        "--window",
        window_dir.to_str().unwrap(),
        "--method",
        "uniform",
        "--out",
        avg_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = fs::read(&avg_path).unwrap();
    assert_eq!(&bytes[..8], b"SEWACKPT");

    // lawa requires --K
    let out = sewa(&[
        "average",
        "--window",
        window_dir.to_str().unwrap(),
        "--method",
        "lawa",
        "--out",
        dir.path().join("lawa.bin").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = sewa(&[
        "average",
        "--window",
        window_dir.to_str().unwrap(),
        "--method",
        "lawa",
        "--K",
        "3",
        "--out",
        dir.path().join("lawa.bin").to_str().unwrap(),
    ]);
    assert!(out.status.success());

    // mask learning over the same window
    let sewa_cfg = dir.path().join("sewa.json");
    fs::write(
        &sewa_cfg,
        r#"{
            "dataset": {"kind": "blobs", "n": 150, "p": 2, "classes": 3, "noise": 1.0, "seed": 5},
            "model": {"layer_sizes": [2, 8, 3], "activation": "relu", "loss_kind": "cross_entropy_softmax"},
            "gs": {"mc_samples": 4, "step_size": 0.1, "iterations": 8, "budget": 2, "seed": 7}
        }"#,
    )
    .unwrap();
    let sewa_out = dir.path().join("sewa_out");
    let out = sewa(&[
        "sewa",
        "--window",
        window_dir.to_str().unwrap(),
        "--config",
        sewa_cfg.to_str().unwrap(),
        "--out",
        sewa_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(sewa_out.join("history.csv").exists());
    assert!(sewa_out.join("mask.json").exists());
    assert!(sewa_out.join("averaged.bin").exists());
    let mask: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sewa_out.join("mask.json")).unwrap()).unwrap();
    assert_eq!(mask["indices"].as_array().unwrap().len(), 2);
}

#[test]
fn bounds_prints_values_and_table() {
    let out = sewa(&[
        "bounds", "--alpha", "0.01", "--L", "1", "--beta", "1", "--c", "1", "--n", "101", "--T",
        "10000", "--k", "1", "--s", "1", "--table",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // reference: high-precision evaluation of the closed forms
    assert!(text.contains("nonconvex_bound = 5.454012708793e0"), "{text}");
    assert!(text.contains("optimal_t0      = 2.727006354396e2"), "{text}");
    assert!(text.contains("sewa"));
    assert!(text.contains("2aLs(T-k/2)/n"));
}

#[test]
fn probe_expansive_writes_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("probe.json");
    let out_dir = dir.path().join("probe_out");
    fs::write(
        &cfg,
        format!(
            r#"{{
                "problem": {{"kind": "quadratic", "beta": 2.0, "dim": 4}},
                "alpha": 1.0,
                "steps": 20,
                "seeds": [1, 2],
                "output_dir": "{}"
            }}"#,
            out_dir.display()
        ),
    )
    .unwrap();
    let out = sewa(&["probe", "--kind", "expansive", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("expansive_seed1.csv")).unwrap();
    assert!(csv.starts_with("step,value"));
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn bench_runs_and_emits_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench_out");
    let cfg = dir.path().join("bench.json");
    fs::write(
        &cfg,
        format!(
            r#"{{
                "dataset": {{"kind": "spirals", "n": 200, "noise": 0.2, "seed": 3}},
                "model": {{"layer_sizes": [2, 8, 2], "activation": "relu", "loss_kind": "cross_entropy_softmax"}},
                "train": {{"steps": 100, "lr_schedule": {{"kind": "constant", "alpha": 0.3}}, "batch_size": 8, "seed": 0, "capture_every": 10}},
                "window_k": 5,
                "methods": [
                    {{"name": "sgd_final"}},
                    {{"name": "uniform"}},
                    {{"name": "random", "budget": 2, "draws": 2}}
                ],
                "seeds": [1, 2],
                "output_dir": "{}"
            }}"#,
            out_dir.display()
        ),
    )
    .unwrap();
    let out = sewa(&["bench", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,K,seed,eval_loss,eval_acc"));
    assert!(out_dir.join("table.txt").exists());
    assert!(out_dir.join("seed_1/window/manifest.json").exists());
}

#[test]
fn exit_codes_contract() {
    // unknown flag -> 1 (config error)
    let out = sewa(&["bounds", "--nonsense"]);
    assert_eq!(out.status.code(), Some(1));

    // malformed config file -> 1
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = sewa(&["bench", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // unknown key in config -> 1 (fail-fast schema)
    let unknown = dir.path().join("unknown.json");
    fs::write(
        &unknown,
        r#"{"dataset": {"kind": "spirals", "n": 100, "noise": 0.1, "seed": 1}, "zzz": 3}"#,
    )
    .unwrap();
    let out = sewa(&["bench", "--config", unknown.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // runtime failure (diverging training) -> 2
    let diverge = dir.path().join("diverge.json");
    let out_dir = dir.path().join("div_out");
    fs::write(
        &diverge,
        format!(
            r#"{{
                "dataset": {{"kind": "blobs", "n": 100, "p": 2, "classes": 2, "noise": 30.0, "seed": 1}},
                "model": {{"layer_sizes": [2, 2], "activation": "identity", "loss_kind": "cross_entropy_softmax"}},
                "train": {{"steps": 50, "lr_schedule": {{"kind": "constant", "alpha": 1e14}}, "batch_size": 4, "seed": 0, "capture_every": 10}},
                "window_k": 2,
                "methods": [{{"name": "uniform"}}],
                "seeds": [1],
                "output_dir": "{}"
            }}"#,
            out_dir.display()
        ),
    )
    .unwrap();
    let out = sewa(&["bench", "--config", diverge.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_window_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_train_config(dir.path());
    let window_dir = dir.path().join("window");
    let out = sewa(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        window_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    // corrupt the first checkpoint's magic
    let ckpt = window_dir.join("ckpt_000000.bin");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[0] = b'Z';
    fs::write(&ckpt, bytes).unwrap();
    let out = sewa(&[
        "average",
        "--window",
        window_dir.to_str().unwrap(),
        "--method",
        "uniform",
        "--out",
        dir.path().join("avg.bin").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
