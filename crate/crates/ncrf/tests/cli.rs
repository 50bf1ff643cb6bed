//! Smoke tests of the installed binary surface.

use std::path::Path;
use std::process::Command;

fn ncrf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ncrf"))
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "n_train_slides": 2, "n_valid_slides": 1, "n_test_slides": 1,
  "slide_width": 768, "slide_height": 768,
  "train_pos_patches": 20, "train_neg_patches": 20,
  "valid_pos_patches": 8, "valid_neg_patches": 8,
  "epochs": 1, "batch_size": 10
}"#,
    )
    .unwrap();
    path
}

#[test]
fn help_lists_every_subcommand() {
    let out = ncrf().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "train", "infer", "detect", "froc", "gradcheck"] {
        assert!(text.contains(cmd), "--help is missing {cmd}");
    }
}

#[test]
fn full_pipeline_runs_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    let run = dir.path().join("run");

    let out = ncrf()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "synth: {}", String::from_utf8_lossy(&out.stderr));

    let out = ncrf()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(out.status.success(), "train: {}", String::from_utf8_lossy(&out.stderr));

    let ckpt = run.join("checkpoint_final.ncrf");
    let maps = dir.path().join("maps");
    let out = ncrf()
        .args(["infer", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--slide")
        .arg(data.join("test_000.pgm"))
        .arg("--out")
        .arg(&maps)
        .output()
        .unwrap();
    assert!(out.status.success(), "infer: {}", String::from_utf8_lossy(&out.stderr));

    let dets = dir.path().join("dets");
    let out = ncrf()
        .args(["detect", "--config"])
        .arg(&cfg)
        .arg("--map")
        .arg(maps.join("test_000.map.csv"))
        .arg("--out")
        .arg(&dets)
        .output()
        .unwrap();
    assert!(out.status.success(), "detect: {}", String::from_utf8_lossy(&out.stderr));

    let out = ncrf()
        .args(["froc", "--config"])
        .arg(&cfg)
        .arg("--detections")
        .arg(&dets)
        .arg("--manifest")
        .arg(data.join("manifest.json"))
        .args(["--split", "test"])
        .arg("--out")
        .arg(dir.path().join("froc"))
        .output()
        .unwrap();
    assert!(out.status.success(), "froc: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("average froc score"));
}

#[test]
fn gradcheck_exits_zero_on_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = ncrf()
        .args(["gradcheck", "--config"])
        .arg(&cfg)
        .args(["--seed", "1", "--samples", "8"])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("group conv"));
    assert!(text.contains("group w"));
    assert!(text.contains("OK"));
}

#[test]
fn baseline_checkpoint_is_refused_by_crf_inference_with_a_header_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let data = dir.path().join("data");
    assert!(ncrf()
        .args(["synth", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    // baseline training arm
    let run = dir.path().join("base");
    assert!(ncrf()
        .args(["train", "--no-crf", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .status()
        .unwrap()
        .success());
    // CRF inference must refuse it and say why
    let out = ncrf()
        .args(["infer", "--config"])
        .arg(&cfg)
        .arg("--checkpoint")
        .arg(run.join("checkpoint_final.ncrf"))
        .arg("--slide")
        .arg(data.join("test_000.pgm"))
        .arg("--out")
        .arg(dir.path().join("maps"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("crf.w"), "unhelpful refusal: {err}");
}

#[test]
fn bad_config_fails_with_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"embedding_dim": 64}"#).unwrap();
    let out = ncrf()
        .args(["synth", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("embedding_dim"));
}
