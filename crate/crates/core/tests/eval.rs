mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shieldnav::config::Config;
use shieldnav::eval::{evaluate, IdlePilot, PolicyPilot};
use shieldnav::world::Difficulty;

#[test]
fn outcomes_partition_the_trials() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (net, params) = common::tiny_net(8, 2, &mut rng);
    let pilot = PolicyPilot { net: &net, params: &params };
    let mut config = Config::default();
    config.eval.randomize = true;
    let report = evaluate(&pilot, &config, Difficulty::Medium, 12, 3, 2).unwrap();
    for g in &report.groups {
        assert_eq!(g.successes + g.collisions + g.timeouts, g.trials);
        assert!((g.sr + g.cr + g.tr - 100.0).abs() < 1e-9);
    }
    assert_eq!(report.seeds, vec![3, 4]);
}

#[test]
fn reports_are_byte_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (net, params) = common::tiny_net(8, 2, &mut rng);
    let pilot = PolicyPilot { net: &net, params: &params };
    let config = Config::default();
    let a = evaluate(&pilot, &config, Difficulty::Hard, 10, 7, 2).unwrap().to_json();
    let b = evaluate(&pilot, &config, Difficulty::Hard, 10, 7, 2).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn idle_pilot_only_times_out() {
    let config = Config::default();
    let report = evaluate(&IdlePilot { alpha: 1.0 }, &config, Difficulty::Easy, 4, 0, 1).unwrap();
    assert_eq!(report.groups[0].timeouts, 4);
    assert_eq!(report.tr.mean, 100.0);
}
