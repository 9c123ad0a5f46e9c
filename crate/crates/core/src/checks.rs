//! Self-contained verification suites with machine-readable reports.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acsi::{on_collision, AcsiConfig, CurriculumState, ResetDecision, StateHistoryRing};
use crate::shield::{build_constraints, fuse_lse, project_damped, shield_backward, solve_qp_oracle, ConstraintSet, FusedBarrier, ShieldParams, Vec3};
use crate::trainer::reward::{compute_reward, StepEvents, StuckTracker, REWARD_WEIGHTS};
use crate::world::{cast_lidar, Difficulty, LidarScan, Rect, RobotState, Scenario, VelocityCommand, NUM_RAYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Shield,
    Gradients,
    Acsi,
    Rewards,
    Lse,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Shield, Suite::Gradients, Suite::Acsi, Suite::Rewards, Suite::Lse];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Shield => "shield",
            Suite::Gradients => "gradients",
            Suite::Acsi => "acsi",
            Suite::Rewards => "rewards",
            Suite::Lse => "lse",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected shield, gradients, acsi, rewards or lse)"))
    }
}

/// One named check inside a suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub tolerance: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<CheckResult>) -> Self {
        SuiteReport {
            suite,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn metrics(&self) -> BTreeMap<String, f64> {
        self.checks.iter().map(|c| (c.name.clone(), c.observed)).collect()
    }
}

fn at_most(name: &str, observed: f64, tolerance: f64, samples: usize) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: observed <= tolerance,
        observed,
        tolerance,
        samples,
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = match suite {
        Suite::Lse => lse_checks(&mut rng),
        Suite::Shield => shield_checks(&mut rng),
        Suite::Gradients => gradient_checks(&mut rng),
        Suite::Acsi => acsi_checks(&mut rng),
        Suite::Rewards => reward_checks(),
    };
    SuiteReport::new(suite, checks)
}

/// Random residues and per-ray unit gradients.
pub fn random_constraints(rng: &mut impl Rng, n: usize) -> ConstraintSet {
    ConstraintSet {
        residues: (0..n).map(|_| rng.random_range(-1.0..3.0)).collect(),
        gradients: (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                [-a.cos(), -a.sin(), 0.0]
            })
            .collect(),
    }
}

fn lse_checks(rng: &mut impl Rng) -> Vec<CheckResult> {
    let k = ShieldParams::default().k;
    let n = 10_000;
    let mut sandwich = 0.0f64;
    let mut convex = 0.0f64;
    for _ in 0..n {
        let cs = random_constraints(rng, NUM_RAYS);
        let fb = fuse_lse(&cs, k);
        let m = cs.residues.iter().copied().fold(f64::INFINITY, f64::min);
        let lower = m - (NUM_RAYS as f64).ln() / k;
        sandwich = sandwich.max(lower - fb.h).max(fb.h - m);
        let mut g = [0.0; 3];
        for (w, gi) in fb.weights.iter().zip(&cs.gradients) {
            for j in 0..3 {
                g[j] += w * gi[j];
            }
        }
        let err = (0..3).map(|j| (g[j] - fb.grad[j]).powi(2)).sum::<f64>().sqrt();
        convex = convex.max(err);
    }
    vec![
        at_most("sandwich_max_violation", sandwich.max(0.0), 1e-9, n),
        at_most("gradient_convex_combination_error", convex, 1e-12, n),
    ]
}

/// A random shield instance `(ū, fused barrier, α)`.
pub fn random_instance(rng: &mut impl Rng, grad_scale: f64) -> (VelocityCommand, FusedBarrier, f64) {
    let u = VelocityCommand::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let g: Vec3 = std::array::from_fn(|_| grad_scale * rng.random_range(-1.0..1.0));
    let fb = FusedBarrier::from_parts(rng.random_range(-1.0..1.0), g);
    (u, fb, rng.random_range(0.05..3.0))
}

fn shield_checks(rng: &mut impl Rng) -> Vec<CheckResult> {
    let n = 10_000;
    let mut oracle_err = 0.0f64;
    let mut counted = 0;
    while counted < n {
        let (u, fb, a) = random_instance(rng, 1.0);
        if fb.grad_norm_sq() < 1e-6 {
            continue;
        }
        let Ok(q) = solve_qp_oracle(u, &fb, a) else { continue };
        counted += 1;
        let p = project_damped(u, &fb, a, 0.0).u_s.to_array();
        let q = q.to_array();
        oracle_err = oracle_err.max((0..3).map(|j| (p[j] - q[j]).powi(2)).sum::<f64>().sqrt());
    }
    let eps_d = ShieldParams::default().eps_d;
    let mut damping_failures = 0usize;
    let mut margin = 0.0f64;
    let mut inactive_changed = 0usize;
    for i in 0..n {
        let (u, mut fb, a) = random_instance(rng, 1.0);
        if i % 10 == 0 {
            fb.grad = [0.0; 3];
        }
        let out = project_damped(u, &fb, a, eps_d);
        let b = fb.grad.iter().zip(u.to_array()).map(|(g, v)| g * v).sum::<f64>() + a * fb.h;
        if out.eta.partial_cmp(&(b.abs() / eps_d)).is_none_or(|o| o.is_gt()) || !out.u_s.is_finite() {
            damping_failures += 1;
        }
        if b >= 0.0 && out.u_s != u {
            inactive_changed += 1;
        }
        if fb.grad_norm_sq().sqrt() > crate::shield::SINGULAR_GRADIENT {
            let exact = project_damped(u, &fb, a, 0.0).u_s.to_array();
            let after = fb.grad.iter().zip(exact).map(|(g, v)| g * v).sum::<f64>() + a * fb.h;
            margin = margin.max(-after);
        }
    }
    let invariance = [0.5, 1.0, 2.0]
        .iter()
        .map(|&alpha| wall_invariance(alpha, 0.0, 10.0, 1e-3).min_h)
        .fold(f64::INFINITY, f64::min);
    vec![
        at_most("oracle_equivalence_max_error", oracle_err, 1e-9, n),
        at_most("damping_bound_failures", damping_failures as f64, 0.0, n),
        at_most("inactive_passthrough_changes", inactive_changed as f64, 0.0, n),
        at_most("post_projection_margin_violation", margin.max(0.0), 1e-9, n),
        at_most("wall_invariance_min_margin_deficit", (-invariance).max(0.0), 0.01, 3),
    ]
}

/// Largest relative difference between two Jacobian blocks.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt())
        .max(1e-6);
    diff / scale
}

/// Analytic vs central-difference Jacobians of the damped projection;
/// returns the worst relative error over both blocks.
pub fn jacobian_error(u: VelocityCommand, fb: &FusedBarrier, alpha: f64, eps_d: f64, step: f64) -> f64 {
    let out = project_damped(u, fb, alpha, eps_d);
    let base = u.to_array();
    let mut fd_u = [0.0; 9];
    let mut an_u = [0.0; 9];
    for j in 0..3 {
        let mut p = base;
        let mut m = base;
        p[j] += step;
        m[j] -= step;
        let up = project_damped(VelocityCommand::from_array(p), fb, alpha, eps_d).u_s.to_array();
        let um = project_damped(VelocityCommand::from_array(m), fb, alpha, eps_d).u_s.to_array();
        for i in 0..3 {
            fd_u[i * 3 + j] = (up[i] - um[i]) / (2.0 * step);
            an_u[i * 3 + j] = out.jac_u[i][j];
        }
    }
    let ap = project_damped(u, fb, alpha + step, eps_d).u_s.to_array();
    let am = project_damped(u, fb, alpha - step, eps_d).u_s.to_array();
    let fd_a: [f64; 3] = std::array::from_fn(|i| (ap[i] - am[i]) / (2.0 * step));
    // Cross-check the vector-Jacobian product against the stored Jacobians.
    let (gu, ga) = shield_backward(&out, [1.0, 1.0, 1.0]);
    let col: [f64; 3] = std::array::from_fn(|j| (0..3).map(|i| out.jac_u[i][j]).sum());
    let vjp = rel_err(&gu, &col).max((ga - out.jac_alpha.iter().sum::<f64>()).abs());
    rel_err(&an_u, &fd_u).max(rel_err(&out.jac_alpha, &fd_a)).max(vjp)
}

fn gradient_checks(rng: &mut impl Rng) -> Vec<CheckResult> {
    let n = 1000;
    let eps_d = ShieldParams::default().eps_d;
    let mut worst = 0.0f64;
    let mut counted = 0;
    let mut active = 0;
    while counted < n {
        let (u, fb, a) = random_instance(rng, 1.0);
        let b = fb.grad.iter().zip(u.to_array()).map(|(g, v)| g * v).sum::<f64>() + a * fb.h;
        if b.abs() < 1e-7 {
            continue;
        }
        counted += 1;
        active += (b < 0.0) as usize;
        worst = worst.max(jacobian_error(u, &fb, a, eps_d, 1e-5));
    }
    let mut eta_alpha = 0.0f64;
    for _ in 0..n {
        let (u, mut fb, a) = random_instance(rng, 1.0);
        fb.h = -fb.h.abs() - 1e-3;
        let out = project_damped(u, &fb, a, eps_d);
        if out.active {
            let expected = -fb.h / (fb.grad_norm_sq() + eps_d);
            eta_alpha = eta_alpha.max((out.d_eta_d_alpha - expected).abs());
        }
    }
    vec![
        at_most("jacobian_max_relative_error", worst, 1e-4, n),
        CheckResult {
            name: "active_instances".into(),
            passed: active > 0 && active < n,
            observed: active as f64,
            tolerance: n as f64,
            samples: n,
        },
        at_most("d_eta_d_alpha_error", eta_alpha, 1e-12, n),
    ]
}

fn acsi_checks(rng: &mut impl Rng) -> Vec<CheckResult> {
    let cfg = AcsiConfig::default();
    let mut closed = 0.0f64;
    for (l, p) in [(0.0, 0.1), (1.0, 0.5), (3.0, 0.5), (0.5, 0.3)] {
        let mut cs = CurriculumState::new(&cfg);
        cs.l_goal = l;
        closed = closed.max((cs.p_reset() - p).abs());
    }
    let mut monotone_failures = 0;
    let mut prev = f64::NEG_INFINITY;
    let mut cs = CurriculumState::new(&cfg);
    for i in 0..1000 {
        cs.l_goal = -1.0 + 3.0 * i as f64 / 999.0;
        let expected = cfg.p_min + (cfg.p_max - cfg.p_min) * cs.l_goal.clamp(0.0, 1.0);
        closed = closed.max((cs.p_reset() - expected).abs());
        if cs.p_reset() < prev {
            monotone_failures += 1;
        }
        prev = cs.p_reset();
    }
    let mut ring = StateHistoryRing::new(cfg.t_hist, 0.1);
    for i in 0..30 {
        ring.record_state(RobotState::at_rest([i as f64, 0.0], 0.0), i as f64 * 0.1);
    }
    let mut half = CurriculumState::new(&cfg);
    half.p_min = 0.5;
    half.p_max = 0.5;
    let trials = 10_000;
    let replays = (0..trials)
        .filter(|_| matches!(on_collision(&ring, &half, 2.9, cfg.t_back, rng), ResetDecision::ReplayCritical { .. }))
        .count();
    let sigma = (trials as f64 * 0.25).sqrt();
    let z = (replays as f64 - 0.5 * trials as f64).abs() / sigma;
    vec![
        at_most("closed_form_max_error", closed, 1e-12, 1004),
        at_most("monotonicity_failures", monotone_failures as f64, 0.0, 1000),
        at_most("replay_fraction_sigma", z, 3.0, trials),
    ]
}

/// Independent scalar evaluation of the seven reward rows, unweighted.
pub fn reference_reward_terms(d: f64, heading_error: f64, open_bearing: f64, v: [f64; 3], stuck: bool, collided: bool) -> [f64; 7] {
    let p = 1.0 / (1.0 + 2.0 * d * d);
    let one = |c: bool| if c { 1.0 } else { 0.0 };
    [
        one(collided),
        p * one(d < 0.5),
        heading_error.cos() * v[0] + p,
        if d > 1.0 { open_bearing.cos() * v[0] } else { p },
        one(d > 1.0 && stuck && v[0] > 0.0 && v[2].abs() < 1.0),
        (1.0 + 4.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])) * one(collided),
        0.0,
    ]
}

/// Hand-built states covering every reward row; returns the worst absolute
/// difference between [`compute_reward`] and the reference.
pub fn reward_table_error() -> (f64, usize) {
    let bearings = LidarScan::uniform(1.0).bearings();
    let mut worst = 0.0f64;
    let mut cases = 0;
    let speeds = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.7, -0.3, 0.4], [-0.4, 0.2, 1.5], [0.05, 0.0, 0.0]];
    for &d in &[0.0, 0.3, 0.5, 0.9, 1.0, 1.5, 4.0] {
        for &bearing in &[0.0, 0.7, -2.0] {
            for v in speeds {
                for &open in &[20usize, 5, 33] {
                    for &(stuck, collided) in &[(false, false), (true, false), (false, true), (true, true)] {
                        let state = RobotState {
                            position: [1.0, -2.0],
                            heading: 0.4,
                            velocity: v,
                        };
                        let world_bearing = state.heading + bearing;
                        let goal = [1.0 + d * world_bearing.cos(), -2.0 + d * world_bearing.sin()];
                        let mut scan = LidarScan::uniform(1.0);
                        scan.ranges[open] = 2.5;
                        let mut tracker = StuckTracker::new(4);
                        for k in 0..4 {
                            let step = if stuck { 0.01 } else { 0.5 };
                            tracker.push([k as f64 * step, 0.0]);
                        }
                        let events = StepEvents {
                            terminated: collided,
                            collided,
                        };
                        let r = compute_reward(&state, &scan, goal, &tracker, events);
                        let theta = if d > 0.0 { bearing } else { 0.0 };
                        let dist = (goal[0] - 1.0).hypot(goal[1] + 2.0);
                        let reference = reference_reward_terms(dist, theta, bearings[open], v, stuck, collided);
                        let comps = r.components();
                        for i in 0..7 {
                            worst = worst.max((comps[i] - REWARD_WEIGHTS[i] * reference[i]).abs());
                        }
                        worst = worst.max((r.total - comps.iter().sum::<f64>()).abs());
                        cases += 1;
                    }
                }
            }
        }
    }
    (worst, cases)
}

fn reward_checks() -> Vec<CheckResult> {
    let (worst, cases) = reward_table_error();
    vec![at_most("reward_table_max_error", worst, 1e-12, cases)]
}

/// Trace of the wall-approach experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceResult {
    pub alpha: f64,
    pub eps_d: f64,
    pub initial_h: f64,
    pub min_h: f64,
    pub final_h: f64,
}

/// Drives a robot straight at a single wall with a saturated nominal command,
/// integrating `ẋ = u_s` with step `dt`, and records the fused margin.
pub fn wall_invariance(alpha: f64, eps_d: f64, duration: f64, dt: f64) -> InvarianceResult {
    // A room whose only wall within sensor range is x = 2.
    let scenario = Scenario::new(
        Rect {
            min: [-100.0, -100.0],
            max: [2.0, 100.0],
        },
        vec![],
        Difficulty::Easy,
        0,
    );
    let params = ShieldParams::default();
    let mut state = RobotState::at_rest([0.0, 0.0], 0.0);
    let u_bar = VelocityCommand::new(1.7, 0.0, 0.0);
    let fused = |s: &RobotState| fuse_lse(&build_constraints(&cast_lidar(&scenario, s), &params), params.k);
    let initial_h = fused(&state).h;
    let mut min_h = initial_h;
    let mut h = initial_h;
    let steps = (duration / dt).round() as usize;
    for _ in 0..steps {
        let fb = fused(&state);
        let u = project_damped(u_bar, &fb, alpha, eps_d).u_s.to_array();
        let (s, c) = state.heading.sin_cos();
        state.position[0] += dt * (c * u[0] - s * u[1]);
        state.position[1] += dt * (s * u[0] + c * u[1]);
        state.heading += dt * u[2];
        h = fused(&state).h;
        min_h = min_h.min(h);
    }
    InvarianceResult {
        alpha,
        eps_d,
        initial_h,
        min_h,
        final_h: h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn cheap_suites_pass() {
        for s in [Suite::Lse, Suite::Acsi, Suite::Rewards, Suite::Gradients] {
            let r = run_suite(s, 0);
            assert!(r.passed, "{}", r.to_json());
        }
    }
}
