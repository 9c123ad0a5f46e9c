use std::path::PathBuf;

use shieldnav::config::Config;
use shieldnav::policy::checkpoint::{self, CheckpointMeta};
use shieldnav::world::Scenario;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn scenario_seeds_parse_and_round_trip() {
    for seed in corpus("scenario_json") {
        let s = Scenario::from_json(text(&seed)).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}

#[test]
fn config_seeds_parse() {
    for seed in corpus("config_json") {
        let c = Config::from_json(text(&seed)).unwrap();
        assert_eq!(Config::from_json(&c.to_json_pretty()).unwrap().hash(), c.hash());
    }
}

#[test]
fn checkpoint_seeds_decode() {
    for seed in corpus("checkpoint_blob") {
        checkpoint::decode(&seed).unwrap();
    }
}

#[test]
fn sidecar_seeds_parse() {
    for seed in corpus("sidecar_json") {
        CheckpointMeta::from_json(text(&seed)).unwrap();
    }
}

#[test]
fn env_override_seeds_never_panic() {
    let mut accepted = 0;
    for seed in corpus("env_overrides") {
        let vars = text(&seed).lines().filter_map(|l| l.split_once('='));
        accepted += Config::from_json_with_overrides("{}", vars).is_ok() as usize;
    }
    assert_eq!(accepted, 1);
}
