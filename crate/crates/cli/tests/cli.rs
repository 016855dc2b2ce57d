use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tstitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tstitch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const TOY: &str = r#"{
  "schema_version": 1,
  "dataset": {"kind": "gmm", "ring": {"components": 8, "radius": 4.0, "std": 0.3}, "seed": 0},
  "roster": [
    {"source": "degraded", "id": "small", "of": "large", "level": 0.5, "cost": 1.0},
    {"source": "oracle", "id": "large", "cost": 10.0}
  ],
  "sampler": {"kind": "ddim", "schedule": {"kind": "karras-power", "steps": 10, "sigma_min": 0.002, "sigma_max": 80.0}},
  "sweep": {"granularity": 2},
  "projections": 16,
  "chains": 64,
  "seeds": [0]
}"#;

const TRAIN: &str = r#"{
  "schema_version": 1,
  "dataset": {"kind": "gmm", "ring": {"components": 4, "radius": 2.0, "std": 0.3}, "seed": 0},
  "roster": [
    {"source": "train", "id": "net", "cost": 1.0, "training": {"steps": 60, "batch": 32, "width": 8, "depth": 1}}
  ],
  "sampler": {"kind": "ddim", "schedule": {"kind": "karras-power", "steps": 10, "sigma_min": 0.002, "sigma_max": 80.0}},
  "chains": 16,
  "seeds": [3]
}"#;

#[test]
fn sweep_then_allocate_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TOY);
    let out_dir = dir.path().join("out");
    let (cfg, out_dir) = (cfg.to_str().unwrap(), out_dir.to_str().unwrap());

    let sweep = tstitch(&["--config", cfg, "--out", out_dir, "sweep"]);
    assert_eq!(code(&sweep), 0, "{}", String::from_utf8_lossy(&sweep.stderr));
    assert!(Path::new(out_dir).join("tables/lookup.csv").exists());
    assert!(Path::new(out_dir).join("manifest.json").exists());

    let alloc = tstitch(&["--config", cfg, "--out", out_dir, "--format", "json", "allocate", "--budget", "60"]);
    assert_eq!(code(&alloc), 0, "{}", String::from_utf8_lossy(&alloc.stderr));
    let v: serde_json::Value = serde_json::from_slice(&alloc.stdout).unwrap();
    assert!(v["chosen"]["total_cost"].as_f64().unwrap() <= 60.0);

    let too_small = tstitch(&["--out", out_dir, "allocate", "--budget", "1"]);
    assert_eq!(code(&too_small), 3);
}

#[test]
fn bad_invocations_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = TOY.replace(r#""kind": "gmm", "#, "");
    let cfg = write_config(dir.path(), &broken);
    let out_dir = dir.path().join("out");
    let out = tstitch(&["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "sweep"]);
    assert_eq!(code(&out), 2);

    let cfg = write_config(dir.path(), TOY);
    let out = tstitch(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "analyze",
        "--mode",
        "spectrum",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid data"));

    let out = tstitch(&["--out", dir.path().join("nowhere").to_str().unwrap(), "allocate", "--budget", "5"]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&tstitch(&["sweep"])), 2);
}

#[test]
fn retraining_writes_byte_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRAIN);
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = tstitch(&["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "train"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        bytes.push(std::fs::read(out_dir.join("checkpoints/net.tstd")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn sampling_a_missing_checkpoint_asks_for_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRAIN);
    let out = tstitch(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "sweep"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `train` first"));
}
