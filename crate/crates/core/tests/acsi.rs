use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shieldnav::acsi::{on_collision, update_curriculum, AcsiConfig, CurriculumState, ResetDecision, StateHistoryRing};
use shieldnav::world::RobotState;

fn snapshot(i: usize) -> RobotState {
    RobotState {
        position: [0.1 * i as f64, -0.05 * i as f64],
        heading: 0.01 * i as f64,
        velocity: [1.0, 0.1 * i as f64, -0.2],
    }
}

fn filled_ring(n: usize) -> StateHistoryRing {
    let cfg = AcsiConfig::default();
    let mut ring = StateHistoryRing::new(cfg.t_hist, 0.1);
    for i in 0..n {
        ring.record_state(snapshot(i), i as f64 * 0.1);
    }
    ring
}

#[test]
fn replay_returns_the_snapshot_one_second_back() {
    let ring = filled_ring(30);
    let mut cs = CurriculumState::new(&AcsiConfig::default());
    cs.p_min = 1.0;
    cs.p_max = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match on_collision(&ring, &cs, 2.95, 1.0, &mut rng) {
        ResetDecision::ReplayCritical { state, recorded_at } => {
            assert!((recorded_at - 1.9).abs() < 1e-12);
            assert_eq!(state, snapshot(19));
        }
        ResetDecision::FullReset => panic!("expected a replay"),
    }
}

#[test]
fn short_history_replays_oldest_snapshot() {
    let ring = filled_ring(4);
    let mut cs = CurriculumState::new(&AcsiConfig::default());
    cs.p_min = 1.0;
    cs.p_max = 1.0;
    let d = on_collision(&ring, &cs, 0.35, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(
        d,
        ResetDecision::ReplayCritical {
            state: snapshot(0),
            recorded_at: 0.0
        }
    );
}

#[test]
fn empty_ring_forces_full_reset() {
    let ring = StateHistoryRing::with_capacity(5);
    let mut cs = CurriculumState::new(&AcsiConfig::default());
    cs.p_min = 1.0;
    cs.p_max = 1.0;
    assert_eq!(on_collision(&ring, &cs, 1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2)), ResetDecision::FullReset);
}

#[test]
fn disabled_curriculum_never_replays() {
    let ring = filled_ring(30);
    let cs = CurriculumState::disabled();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        assert_eq!(on_collision(&ring, &cs, 2.9, 1.0, &mut rng), ResetDecision::FullReset);
    }
}

#[test]
fn curriculum_counts_toward_goal() {
    let cfg = AcsiConfig::default();
    let mut cs = CurriculumState::new(&cfg);
    for _ in 0..10 {
        cs = update_curriculum(cs, 0.2, 0.05);
    }
    assert!((cs.l_goal - 0.5).abs() < 1e-12);
    assert!((cs.p_reset() - 0.3).abs() < 1e-12);
    cs = update_curriculum(cs, 1.0, 0.05);
    assert!((cs.l_goal - 0.5).abs() < 1e-12);
    cs = update_curriculum(cs, 3.0, 0.05);
    assert!((cs.l_goal - 0.45).abs() < 1e-12);
}

#[test]
fn p_reset_matches_closed_form_and_is_monotone() {
    let cfg = AcsiConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ls: Vec<f64> = (0..1000).map(|_| rand::Rng::random_range(&mut rng, -1.0..2.0)).collect();
    ls.sort_by(f64::total_cmp);
    let mut prev = f64::NEG_INFINITY;
    for l in ls {
        let mut cs = CurriculumState::new(&cfg);
        cs.l_goal = l;
        let expected = cfg.p_min + (cfg.p_max - cfg.p_min) * l.clamp(0.0, 1.0);
        assert!((cs.p_reset() - expected).abs() <= 1e-12, "L_goal {l}");
        assert!(cs.p_reset() >= prev);
        prev = cs.p_reset();
    }
}

proptest! {
    #[test]
    fn p_reset_stays_in_bounds(l in -5.0..5.0f64) {
        let mut cs = CurriculumState::new(&AcsiConfig::default());
        cs.l_goal = l;
        let p = cs.p_reset();
        prop_assert!((0.1..=0.5).contains(&p));
    }

    #[test]
    fn ring_never_exceeds_capacity(n in 0usize..200) {
        let ring = filled_ring(n);
        prop_assert_eq!(ring.len(), n.min(30));
        if n > 0 {
            let &(_, t) = ring.oldest().unwrap();
            prop_assert!((t - 0.1 * n.saturating_sub(30) as f64).abs() < 1e-9);
        }
    }
}
