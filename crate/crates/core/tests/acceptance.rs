//! End-to-end acceptance run. Every criterion prints one verdict line; the
//! test fails if any of them fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shieldnav::acsi::{on_collision, AcsiConfig, CurriculumState, ResetDecision, StateHistoryRing};
use shieldnav::checks::{jacobian_error, random_constraints, random_instance, reward_table_error, wall_invariance};
use shieldnav::config::Config;
use shieldnav::eval::{evaluate, PolicyPilot};
use shieldnav::shield::{fuse_lse, project_damped, solve_qp_oracle, FusedBarrier, ShieldParams};
use shieldnav::trainer::{final_checkpoint, log_to_csv, loss_and_grad, LossWeights, Trainer};
use shieldnav::world::{Difficulty, RobotState, NUM_RAYS};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn lse_sandwich() -> Verdict {
    let k = ShieldParams::default().k;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let cs = random_constraints(&mut rng, NUM_RAYS);
        let h = fuse_lse(&cs, k).h;
        let m = cs.residues.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max(m - (NUM_RAYS as f64).ln() / k - h).max(h - m);
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("max violation {:.3e} (<= 1e-9), {:.3} s (< 1 s)", worst.max(0.0), elapsed.as_secs_f64()),
    )
}

fn qp_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let start = Instant::now();
    let (mut worst, mut n) = (0.0f64, 0);
    while n < 10_000 {
        let (u, fb, a) = random_instance(&mut rng, 1.0);
        if fb.grad_norm_sq() < 1e-6 {
            continue;
        }
        let Ok(q) = solve_qp_oracle(u, &fb, a) else { continue };
        let p = project_damped(u, &fb, a, 0.0).u_s.to_array();
        let q = q.to_array();
        worst = worst.max((0..3).map(|j| (p[j] - q[j]).powi(2)).sum::<f64>().sqrt());
        n += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("max |u_s - u_QP| {worst:.3e} (<= 1e-9) on {n} instances, {:.3} s", elapsed.as_secs_f64()),
    )
}

fn damping_bound() -> Verdict {
    let eps_d = ShieldParams::default().eps_d;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut failures = 0;
    for i in 0..10_000 {
        let (u, mut fb, a) = random_instance(&mut rng, 1.0);
        if i % 5 == 0 {
            fb = FusedBarrier::from_parts(fb.h, [0.0; 3]);
        }
        let out = project_damped(u, &fb, a, eps_d);
        let b = dot(fb.grad, u.to_array()) + a * fb.h;
        if !(out.eta <= b.abs() / eps_d && out.u_s.is_finite()) {
            failures += 1;
        }
    }
    verdict(failures == 0, format!("{failures} failures in 10000 instances (2000 with zero gradient)"))
}

fn shield_jacobians() -> Verdict {
    let eps_d = ShieldParams::default().eps_d;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut worst, mut n) = (0.0f64, 0);
    while n < 1000 {
        let (u, fb, a) = random_instance(&mut rng, 1.0);
        if (dot(fb.grad, u.to_array()) + a * fb.h).abs() < 1e-7 {
            continue;
        }
        worst = worst.max(jacobian_error(u, &fb, a, eps_d, 1e-5));
        n += 1;
    }
    verdict(worst <= 1e-4, format!("max relative error {worst:.3e} (<= 1e-4) on {n} instances"))
}

fn end_to_end_gradient() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (net, params) = common::tiny_net(8, 2, &mut rng);
    let batch = common::random_batch(&net, &params, 2, 2, &mut rng);
    let w = LossWeights::from_config(&Config::default());
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (_, analytic, _) = loss_and_grad(&net, &params, &batch, &idx, &w, 2).unwrap();
    let numeric = common::numeric_gradient(&params, 1e-6, |p| loss_and_grad(&net, p, &batch, &idx, &w, 2).unwrap().0.l_total);
    let err = common::relative_error(&analytic, &numeric);
    verdict(
        err <= 1e-3,
        format!("relative error {err:.3e} (<= 1e-3) over {} parameters, 4 transitions", params.len()),
    )
}

fn forward_invariance() -> Verdict {
    let mut lines = Vec::new();
    let mut worst = f64::INFINITY;
    for alpha in [0.5, 1.0, 2.0] {
        let r = wall_invariance(alpha, 0.0, 10.0, 1e-3);
        worst = worst.min(r.min_h);
        lines.push(format!("alpha {alpha}: min h {:.4}", r.min_h));
    }
    let damped = wall_invariance(1.0, ShieldParams::default().eps_d, 10.0, 1e-3);
    verdict(
        worst >= -0.01,
        format!(
            "{} (>= -0.01); with eps_d = {} the final margin is {:.3}",
            lines.join(", "),
            damped.eps_d,
            damped.final_h
        ),
    )
}

fn acsi_statistics() -> Verdict {
    let cfg = AcsiConfig::default();
    let mut ring = StateHistoryRing::new(cfg.t_hist, 0.1);
    for i in 0..30 {
        ring.record_state(RobotState::at_rest([i as f64, 0.0], 0.0), i as f64 * 0.1);
    }
    let mut half = CurriculumState::new(&cfg);
    half.p_min = 0.5;
    half.p_max = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let n = 10_000;
    let replays = (0..n)
        .filter(|_| matches!(on_collision(&ring, &half, 2.9, cfg.t_back, &mut rng), ResetDecision::ReplayCritical { .. }))
        .count();
    let sigmas = (replays as f64 - 0.5 * n as f64).abs() / (n as f64 * 0.25).sqrt();
    let mut closed = 0.0f64;
    for (l, p) in [(0.0, 0.1), (1.0, 0.5), (2.5, 0.5), (0.5, 0.3)] {
        let mut cs = CurriculumState::new(&cfg);
        cs.l_goal = l;
        closed = closed.max((cs.p_reset() - p).abs());
    }
    verdict(
        sigmas <= 3.0 && closed <= 1e-12,
        format!(
            "replay fraction {:.4} ({sigmas:.2} sigma <= 3); closed-form error {closed:.1e} (<= 1e-12)",
            replays as f64 / n as f64
        ),
    )
}

fn reward_table() -> Verdict {
    let (worst, cases) = reward_table_error();
    verdict(worst <= 1e-12, format!("max deviation {worst:.1e} (<= 1e-12) over {cases} hand-built states"))
}

fn training_smoke() -> Verdict {
    let config = Config::default();
    let dir = scratch("smoke");
    let start = Instant::now();
    let mut trainer = Trainer::new(config.clone()).unwrap();
    trainer.train(Some(&dir), |_| {}).unwrap();
    let trained = start.elapsed();
    let pilot = PolicyPilot {
        net: &trainer.net,
        params: &trainer.params,
    };
    let report = evaluate(&pilot, &config, Difficulty::Easy, 100, config.seed, 1).unwrap();
    let elapsed = start.elapsed();
    assert!(final_checkpoint(&dir).exists());
    verdict(
        report.sr.mean >= 80.0 && elapsed < Duration::from_secs(30 * 60),
        format!(
            "Easy SR {:.0}% CR {:.0}% TR {:.0}% (SR >= 80%), {} iterations x {} envs, train {:.0} s, total {:.0} s (< 1800 s)",
            report.sr.mean,
            report.cr.mean,
            report.tr.mean,
            config.ppo.iterations,
            config.ppo.num_envs,
            trained.as_secs_f64(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Training budget shared by the ablation runs.
fn ablation_config(seed: u64, flag: Option<&str>) -> Config {
    let mut c = Config { seed, ..Config::default() };
    c.world.difficulty = Difficulty::Hard;
    c.ppo.iterations = 40;
    if let Some(f) = flag {
        c.ablation.apply_flag(f).unwrap();
    }
    c
}

fn ablation_direction() -> Verdict {
    let seeds = [0u64, 1, 2];
    let mean = |flag: Option<&str>| -> f64 {
        let mut total = 0.0;
        for &s in &seeds {
            let config = ablation_config(s, flag);
            let mut trainer = Trainer::new(config.clone()).unwrap();
            trainer.train(None, |_| {}).unwrap();
            let pilot = PolicyPilot {
                net: &trainer.net,
                params: &trainer.params,
            };
            total += evaluate(&pilot, &config, Difficulty::Hard, 100, 100 + s, 1).unwrap().sr.mean;
        }
        total / seeds.len() as f64
    };
    let full = mean(None);
    let no_shield = mean(Some("no-shield"));
    let no_acsi = mean(Some("no-acsi"));
    verdict(
        full >= no_shield && full >= no_acsi,
        format!("Hard mean SR over 3 seeds: full {full:.1}%, no-shield {no_shield:.1}%, no-acsi {no_acsi:.1}%"),
    )
}

fn train_and_eval_csvs(tag: &str) -> (String, String) {
    let mut config = common::quick_config(7, 8, 32, 3);
    config.eval.trials = 20;
    let dir = scratch(tag);
    let mut trainer = Trainer::new(config.clone()).unwrap();
    trainer.train(Some(&dir), |_| {}).unwrap();
    let pilot = PolicyPilot {
        net: &trainer.net,
        params: &trainer.params,
    };
    let report = evaluate(&pilot, &config, Difficulty::Easy, config.eval.trials, config.seed, 2).unwrap();
    let train_csv = std::fs::read_to_string(dir.join("train_log.csv")).unwrap();
    (train_csv, log_to_csv(&report.groups))
}

fn determinism() -> Verdict {
    let a = train_and_eval_csvs("determinism_a");
    let b = train_and_eval_csvs("determinism_b");
    let rows = a.0.lines().count() - 1;
    verdict(
        a == b,
        format!("train log ({rows} rows) identical: {}, eval metrics identical: {}", a.0 == b.0, a.1 == b.1),
    )
}

#[test]
fn acceptance_criteria() {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 11] = [
        ("LSE sandwich", lse_sandwich),
        ("QP-oracle equivalence", qp_equivalence),
        ("Damping boundedness", damping_bound),
        ("Shield Jacobians", shield_jacobians),
        ("End-to-end gradient", end_to_end_gradient),
        ("Forward invariance", forward_invariance),
        ("ACSI statistics", acsi_statistics),
        ("Reward table", reward_table),
        ("Training smoke", training_smoke),
        ("Ablation direction", ablation_direction),
        ("Determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2}. {name}: {} [{:.1} s]", i + 1, v.detail, start.elapsed().as_secs_f64());
        if !v.passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
