use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::{json, Value};

fn densecorr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densecorr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn densecorr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(path: &Path, value: &Value) -> String {
    std::fs::write(path, value.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

/// A tiny dataset and a 5-step checkpoint, shared by all tests.
fn fixture() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let ds_cfg = write(
            &dir.join("dataset.json"),
            &json!({
                "width": 32,
                "height": 24,
                "train_scenes_per_object": 1,
                "eval_scenes_per_object": 1,
                "trajectory": {
                    "n_views": 6,
                    "radius_range": [0.16, 0.22],
                    "elevation_range_deg": [35.0, 80.0],
                    "gaze_target": [0.0, 0.0, 0.04],
                    "gaze_noise_deg": 5.0,
                    "roll_deg": 20.0
                }
            }),
        );
        let out = densecorr(&[
            "gen-dataset",
            "--config",
            &ds_cfg,
            "--seed",
            "3",
            "--out",
            dir.join("ds").to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.join("ds/dataset.json").exists());

        let train_cfg = write(
            &dir.join("train.json"),
            &json!({ "dataset": "ds", "checkpoint_every": 2 }),
        );
        let out = densecorr(&[
            "train",
            "--config",
            &train_cfg,
            "--steps",
            "5",
            "--seed",
            "1",
            "--mode",
            "consistent",
            "--out",
            dir.join("run").to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        dir
    })
}

#[test]
fn train_writes_checkpoints_log_and_config() {
    let dir = fixture();
    for f in [
        "checkpoints/final.json",
        "checkpoints/final.bin",
        "checkpoints/step_00002.json",
        "train_log.csv",
        "config.json",
    ] {
        assert!(dir.join("run").join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(dir.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["steps"], 5);
    assert_eq!(cfg["seed"], 1);
}

#[test]
fn eval_writes_metric_files() {
    let dir = fixture();
    let cfg = write(
        &dir.join("eval.json"),
        &json!({ "dataset": "ds", "checkpoint": "run/checkpoints/final", "eval": { "n_pairs": 5 } }),
    );
    let out_dir = dir.join("eval_out");
    let out = densecorr(&["eval", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "pixel_error_cdf.csv",
        "fraction_closer_cdf.csv",
        "queries.csv",
        "summary.json",
    ] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_pairs"], 5);
}

fn match_config(dir: &Path, name: &str, threshold: f64) -> String {
    write(
        &dir.join(name),
        &json!({
            "dataset": "ds",
            "checkpoint": "run/checkpoints/final.json",
            "query": {
                "reference_scene": 0, "reference_frame": 0, "pixel": [16, 12],
                "target_scene": 1, "target_frame": 0, "threshold": threshold
            }
        }),
    )
}

#[test]
fn find_match_reports_and_signals_no_match() {
    let dir = fixture();
    let out_dir = dir.join("match_out");
    let ok = densecorr(&[
        "find-match",
        "--config",
        &match_config(dir, "m1.json", 1e9),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["valid"], true);
    assert!(out_dir.join("match.ppm").exists());

    let none = densecorr(&["find-match", "--config", &match_config(dir, "m2.json", 0.0)]);
    assert_eq!(code(&none), 3);
}

#[test]
fn grasp_demo_outputs_and_exit_codes() {
    let dir = fixture();
    let cfg = |name: &str, test_scene: usize, threshold: f64, opening: f64, radius: f64| {
        write(
            &dir.join(name),
            &json!({
                "dataset": "ds",
                "checkpoint": "run/checkpoints/final",
                "demo": {
                    "test_scene": test_scene,
                    "test_frames": [0],
                    "threshold": threshold,
                    "grasp": {
                        "gripper": { "max_opening": opening },
                        "n_candidates": 200,
                        "target_radius": radius
                    }
                }
            }),
        )
    };
    // Searching the reference frame itself matches the clicked pixel exactly.
    let out_dir = dir.join("grasp_out");
    let ok = densecorr(&[
        "grasp-demo",
        "--config",
        &cfg("g0.json", 0, 1e9, 0.08, 0.02),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let report: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert!(report["grasp"]["collision_free"].as_bool().unwrap());
    assert!(out_dir.join("grasp.json").exists() && out_dir.join("match.ppm").exists());

    let no_match = densecorr(&["grasp-demo", "--config", &cfg("g1.json", 1, -1.0, 0.08, 0.02)]);
    assert_eq!(code(&no_match), 3, "{}", String::from_utf8_lossy(&no_match.stderr));
    // The radius reaches the cloud from any matched pixel, the opening fits nothing.
    let no_grasp = densecorr(&["grasp-demo", "--config", &cfg("g2.json", 1, 1e9, 0.001, 1.0)]);
    assert_eq!(code(&no_grasp), 4, "{}", String::from_utf8_lossy(&no_grasp.stderr));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = fixture();
    let missing_dataset = write(&dir.join("bad_train.json"), &json!({ "steps": 1 }));
    assert_eq!(code(&densecorr(&["train", "--config", &missing_dataset])), 2);

    std::fs::write(dir.join("broken.json"), "{ not json").unwrap();
    assert_eq!(
        code(&densecorr(&[
            "gen-dataset",
            "--config",
            dir.join("broken.json").to_str().unwrap()
        ])),
        2
    );
    assert_eq!(
        code(&densecorr(&[
            "eval",
            "--config",
            dir.join("nope.json").to_str().unwrap()
        ])),
        2
    );
    assert_eq!(code(&densecorr(&["eval"])), 2);
    assert_eq!(code(&densecorr(&["train", "--mode", "bogus"])), 2);

    let bad_weights = write(
        &dir.join("bad_weights.json"),
        &json!({ "dataset": "ds", "comparison_weights": [0.0, 0.0, 0.0, 0.0] }),
    );
    assert_eq!(code(&densecorr(&["train", "--config", &bad_weights])), 2);
}
