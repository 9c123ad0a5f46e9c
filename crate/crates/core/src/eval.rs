//! Success / collision / timeout evaluation and trajectory dumps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::Result;
use crate::policy::{ActorCritic, Observation, OBS_DIM};
use crate::shield::{build_constraints, fuse_lse, project_damped, ShieldOutput};
use crate::trainer::{derive_seed, EpisodeRules, NavEnv, RandomizationDraw};
use crate::world::{generate_scenario_with, Difficulty, Scenario, VelocityCommand};

/// Anything that maps an observation and its history to `(ū, α)`.
pub trait Pilot: Sync {
    fn act(&self, obs: &Observation, history: &[f64]) -> Result<(VelocityCommand, f64)>;
    fn history_len(&self) -> usize;
}

/// Deterministic policy: the Gaussian mean.
pub struct PolicyPilot<'a> {
    pub net: &'a ActorCritic,
    pub params: &'a [f64],
}

impl Pilot for PolicyPilot<'_> {
    fn act(&self, obs: &Observation, history: &[f64]) -> Result<(VelocityCommand, f64)> {
        let o = ndarray::ArrayView2::from_shape((1, OBS_DIM), obs.as_slice()).expect("one row");
        let h = ndarray::ArrayView2::from_shape((1, history.len()), history).expect("one row");
        let out = self.net.infer(self.params, o, h)?.get(0);
        Ok((VelocityCommand::from_array(out.mean), out.alpha))
    }

    fn history_len(&self) -> usize {
        self.net.config.history_len
    }
}

/// Always commands zero velocity.
pub struct IdlePilot {
    pub alpha: f64,
}

impl Pilot for IdlePilot {
    fn act(&self, _: &Observation, _: &[f64]) -> Result<(VelocityCommand, f64)> {
        Ok((VelocityCommand::ZERO, self.alpha))
    }

    fn history_len(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialResult {
    pub index: usize,
    pub scenario_seed: u64,
    pub outcome: Outcome,
    pub duration: f64,
    pub path_length: f64,
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub omega_z: f64,
    pub h: f64,
    pub alpha: f64,
    pub eta: f64,
}

/// Runs one evaluation episode in `scenario` (which must carry a task).
pub fn run_trial(pilot: &dyn Pilot, config: &Config, scenario: &Scenario, rng_seed: u64, mut trace: Option<&mut Vec<TrajRow>>) -> Result<(Outcome, f64, f64)> {
    let task = scenario
        .task
        .ok_or_else(|| crate::Error::InvalidScenario("evaluation scenario has no task".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let draw = if config.eval.randomize {
        RandomizationDraw::sample(&config.randomization, &mut rng)
    } else {
        RandomizationDraw::nominal()
    };
    let mut env = NavEnv::new(
        config.world.clone(),
        EpisodeRules::evaluation(config),
        pilot.history_len(),
        scenario.clone(),
        task,
        rng,
    );
    env.apply_randomization(draw);
    env.replay(env.state);
    let sp = config.shield;
    let shield_on = !config.ablation.no_shield;
    loop {
        let hist = env.history().flatten();
        let (u_bar, alpha) = pilot.act(env.observation(), &hist)?;
        let fb = fuse_lse(&build_constraints(env.observed_scan(), &sp), sp.k);
        let so = if shield_on {
            project_damped(u_bar, &fb, alpha, sp.eps_d)
        } else {
            ShieldOutput::passthrough(u_bar)
        };
        if let Some(rows) = trace.as_deref_mut() {
            let s = env.state;
            rows.push(TrajRow {
                t: env.time(),
                x: s.position[0],
                y: s.position[1],
                theta: s.heading,
                v_x: s.velocity[0],
                v_y: s.velocity[1],
                omega_z: s.velocity[2],
                h: fb.h,
                alpha,
                eta: so.eta,
            });
        }
        let o = env.step(so.u_s);
        let outcome = if o.collided {
            Some(Outcome::Collision)
        } else if o.success {
            Some(Outcome::Success)
        } else if o.timeout {
            Some(Outcome::Timeout)
        } else {
            None
        };
        if let Some(outcome) = outcome {
            return Ok((outcome, env.time(), env.path_length));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub seed: u64,
    pub trials: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub sr: f64,
    pub cr: f64,
    pub tr: f64,
    /// Path length over episode duration, averaged over successful trials (m/s).
    pub avg_speed: f64,
}

impl GroupReport {
    pub fn from_trials(seed: u64, trials: &[TrialResult]) -> Self {
        let count = |o: Outcome| trials.iter().filter(|t| t.outcome == o).count();
        let (s, c, t) = (count(Outcome::Success), count(Outcome::Collision), count(Outcome::Timeout));
        let n = trials.len().max(1) as f64;
        let speeds: Vec<f64> = trials
            .iter()
            .filter(|t| t.outcome == Outcome::Success && t.duration > 0.0)
            .map(|t| t.path_length / t.duration)
            .collect();
        GroupReport {
            seed,
            trials: trials.len(),
            successes: s,
            collisions: c,
            timeouts: t,
            sr: 100.0 * s as f64 / n,
            cr: 100.0 * c as f64 / n,
            tr: 100.0 * t as f64 / n,
            avg_speed: if speeds.is_empty() {
                0.0
            } else {
                speeds.iter().sum::<f64>() / speeds.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub difficulty: Difficulty,
    pub trials_per_group: usize,
    pub seeds: Vec<u64>,
    pub sr: MeanStd,
    pub cr: MeanStd,
    pub tr: MeanStd,
    pub avg_speed: MeanStd,
    pub groups: Vec<GroupReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EvalReport {
    pub fn from_groups(difficulty: Difficulty, groups: Vec<GroupReport>) -> Self {
        let pick = |f: fn(&GroupReport) -> f64| MeanStd::of(&groups.iter().map(f).collect::<Vec<_>>());
        EvalReport {
            difficulty,
            trials_per_group: groups.first().map_or(0, |g| g.trials),
            seeds: groups.iter().map(|g| g.seed).collect(),
            sr: pick(|g| g.sr),
            cr: pick(|g| g.cr),
            tr: pick(|g| g.tr),
            avg_speed: pick(|g| g.avg_speed),
            groups,
            config_hash: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Runs `scenarios` in parallel and reports in trial order.
pub fn evaluate_scenarios(pilot: &dyn Pilot, config: &Config, scenarios: &[Scenario], seed: u64) -> Result<Vec<TrialResult>> {
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, sc)| {
            let (outcome, duration, path_length) = run_trial(pilot, config, sc, derive_seed(seed, i as u64), None)?;
            Ok(TrialResult {
                index: i,
                scenario_seed: sc.seed,
                outcome,
                duration,
                path_length,
            })
        })
        .collect()
}

/// Scenario seed of trial `trial` in seed group `group_seed`.
pub fn trial_scenario_seed(group_seed: u64, trial: usize) -> u64 {
    derive_seed(group_seed, 1_000_000 + trial as u64)
}

pub fn group_seeds(seed: u64, groups: usize) -> Vec<u64> {
    (0..groups).map(|g| seed.wrapping_add(g as u64)).collect()
}

/// `trials` procedurally generated episodes for each of `groups` seed groups.
pub fn evaluate(pilot: &dyn Pilot, config: &Config, difficulty: Difficulty, trials: usize, seed: u64, groups: usize) -> Result<EvalReport> {
    let mut reports = Vec::with_capacity(groups);
    for gs in group_seeds(seed, groups) {
        let scenarios = (0..trials)
            .into_par_iter()
            .map(|i| generate_scenario_with(&config.world.scenario, difficulty, trial_scenario_seed(gs, i)))
            .collect::<Result<Vec<_>>>()?;
        let results = evaluate_scenarios(pilot, config, &scenarios, gs)?;
        reports.push(GroupReport::from_trials(gs, &results));
    }
    Ok(EvalReport::from_groups(difficulty, reports))
}
