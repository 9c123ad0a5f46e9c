use std::path::PathBuf;
use std::process::{Command, Output};

fn shieldnav() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_shieldnav"));
    for (k, _) in std::env::vars() {
        if k.starts_with("SHIELDNAV__") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Two iterations on four environments, enough to produce a checkpoint.
fn tiny_train(dir: &PathBuf) -> serde_json::Value {
    let out = shieldnav()
        .args(["train", "--seed", "3", "--iterations", "2", "--out"])
        .arg(dir)
        .env("SHIELDNAV__PPO__NUM_ENVS", "4")
        .env("SHIELDNAV__PPO__ROLLOUT_STEPS", "16")
        .env("SHIELDNAV__EVAL__TRIALS", "3")
        .env("SHIELDNAV__EVAL__SEED_GROUPS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn check_lse_prints_a_passing_report() {
    let out = shieldnav().args(["check", "lse"]).output().unwrap();
    assert_eq!(code(&out), 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = shieldnav().args(["train", "--config", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = scratch("bad_config");
    let path = dir.join("c.json");
    std::fs::write(&path, r#"{"ppo": {"learning_rate": -1.0}}"#).unwrap();
    let out = shieldnav().args(["train", "--config"]).arg(&path).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn unknown_ablation_is_a_config_error() {
    let out = shieldnav().args(["train", "--ablate", "no-brakes", "--iterations", "0"]).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_override_is_a_config_error() {
    let out = shieldnav().args(["train"]).env("SHIELDNAV__PPO__BOGUS", "1").output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn train_eval_and_dump_round_trip() {
    let dir = scratch("round_trip");
    let summary = tiny_train(&dir);
    assert_eq!(summary["iterations"], 2);
    let ckpt = PathBuf::from(summary["checkpoint"].as_str().unwrap());
    assert!(ckpt.exists());

    let report_path = dir.join("report.json");
    let out = shieldnav()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["config_hash"], summary["config_hash"]);
    assert_eq!(std::fs::read(&report_path).unwrap(), out.stdout.strip_suffix(b"\n").unwrap());

    let out = shieldnav().args(["dump-traj", "--checkpoint"]).arg(&ckpt).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.contains(','));
    assert!(lines.count() > 0);
}

#[test]
fn eval_rejects_a_mismatched_config() {
    let dir = scratch("mismatch");
    let summary = tiny_train(&dir);
    let ckpt = PathBuf::from(summary["checkpoint"].as_str().unwrap());
    let other = dir.join("other.json");
    std::fs::write(&other, r#"{"seed": 12345}"#).unwrap();
    let out = shieldnav()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--config")
        .arg(&other)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash"));
}
