//! PPO training over vectorised navigation environments.

mod env;
pub mod losses;
mod ppo;
mod randomization;
pub mod reward;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use env::{EnvCounters, EpisodeRules, NavEnv, StepOutcome, TrainEnv, TrainStep};
pub use ppo::{clip_grad_norm, loss_and_grad, ppo_update, Adam, LossReport, LossWeights, TransitionBatch};
pub use randomization::{noise, RandomizationDraw};
pub use reward::{compute_reward, RewardBreakdown, StepEvents, StuckTracker};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::policy::checkpoint::{self, CheckpointMeta, FORMAT_VERSION};
use crate::policy::gaussian::sample;
use crate::policy::{ActorCritic, ACTION_DIM, OBS_DIM};
use crate::shield::{build_constraints, fuse_lse, project_damped};
use crate::world::VelocityCommand;

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Aggregate statistics of one rollout.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RolloutStats {
    pub transitions: u64,
    pub reward_sums: [f64; 7],
    pub total_reward: f64,
    pub alpha_sum: f64,
    pub shield_active: u64,
    pub projections: u64,
    pub counters: EnvCounters,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub env_steps: u64,
    pub r_term: f64,
    pub r_reach: f64,
    pub r_velo: f64,
    pub r_clear: f64,
    pub r_stuck: f64,
    pub r_coll: f64,
    pub r_omega: f64,
    pub r_total: f64,
    pub l_ppo: f64,
    pub l_shield: f64,
    pub l_range: f64,
    pub l_smooth: f64,
    pub l_reg: f64,
    pub l_total: f64,
    pub entropy: f64,
    pub mean_alpha: f64,
    pub shield_active_fraction: f64,
    pub mean_p_reset: f64,
    pub replays: u64,
    pub full_resets: u64,
    pub successes: u64,
    pub collisions: u64,
    pub timeouts: u64,
    pub sr_estimate: f64,
}

struct EnvRecord {
    action: [f64; ACTION_DIM],
    log_prob: f64,
    shielded: [f64; ACTION_DIM],
    h: f64,
    grad: [f64; 3],
    active: bool,
    projected: bool,
    step: TrainStep,
}

fn fill_inputs(envs: &[TrainEnv], obs: &mut Array2<f64>, hist: &mut Array2<f64>) {
    for (k, te) in envs.iter().enumerate() {
        obs.row_mut(k)
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(te.env.observation().as_slice());
        te.env.history().flatten_into(hist.row_mut(k).as_slice_mut().expect("standard layout"));
    }
}

/// Adds `γ V(s_T)` to the reward of transitions cut by goal-stay success or
/// the time cap, using the inputs captured before the reset.
fn bootstrap_truncated(envs: &[TrainEnv], net: &ActorCritic, params: &[f64], t: usize, gamma: f64, rewards: &mut [f64]) -> Result<()> {
    let cut: Vec<usize> = (0..envs.len()).filter(|&k| envs[k].truncated_inputs.is_some()).collect();
    if cut.is_empty() {
        return Ok(());
    }
    let mut obs = Array2::zeros((cut.len(), OBS_DIM));
    let mut hist = Array2::zeros((cut.len(), net.history_dim()));
    for (r, &k) in cut.iter().enumerate() {
        let (o, h) = envs[k].truncated_inputs.as_ref().expect("filtered");
        obs.row_mut(r).as_slice_mut().expect("standard layout").copy_from_slice(o.as_slice());
        hist.row_mut(r).as_slice_mut().expect("standard layout").copy_from_slice(h);
    }
    let out = net.infer(params, obs.view(), hist.view())?;
    for (r, &k) in cut.iter().enumerate() {
        rewards[t * envs.len() + k] += gamma * out.value[r];
    }
    Ok(())
}

/// Steps every environment `config.ppo.rollout_steps` times under the
/// stochastic policy and returns the transitions with advantages filled in.
pub fn run_episode_loop(
    envs: &mut [TrainEnv],
    net: &ActorCritic,
    params: &[f64],
    config: &Config,
    rng: &mut impl Rng,
) -> Result<(TransitionBatch, RolloutStats)> {
    let n = envs.len();
    let steps = config.ppo.rollout_steps;
    let rows = n * steps;
    let hd = net.history_dim();
    let shield_enabled = !config.ablation.no_shield;
    let sp = config.shield;
    let mut batch = TransitionBatch {
        num_envs: n,
        steps,
        observations: Array2::zeros((rows, OBS_DIM)),
        histories: Array2::zeros((rows, hd)),
        latents: Array2::zeros((rows, net.config.latent_dim)),
        next_observations: Array2::zeros((rows, OBS_DIM)),
        next_histories: Array2::zeros((rows, hd)),
        next_valid: vec![false; rows],
        actions: vec![[0.0; ACTION_DIM]; rows],
        shielded: vec![[0.0; ACTION_DIM]; rows],
        alphas: vec![0.0; rows],
        log_probs: vec![0.0; rows],
        rewards: vec![0.0; rows],
        values: vec![0.0; rows],
        dones: vec![false; rows],
        barrier_h: vec![0.0; rows],
        barrier_grad: vec![[0.0; 3]; rows],
        betas: vec![0.0; rows],
        advantages: vec![],
        returns: vec![],
    };
    let mut stats = RolloutStats::default();
    let mut obs = Array2::zeros((n, OBS_DIM));
    let mut hist = Array2::zeros((n, hd));
    for te in envs.iter_mut() {
        te.counters = EnvCounters::default();
    }
    for t in 0..steps {
        fill_inputs(envs, &mut obs, &mut hist);
        let z = net.encoder.infer(params, hist.view());
        let x = ActorCritic::joint_state(obs.view(), z.view());
        let (out, _) = net.heads(params, x.view());
        if out.mean.iter().chain(out.value.iter()).chain(out.alpha.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "rollout forward",
                detail: format!("policy output at rollout step {t}"),
            });
        }
        let records: Vec<EnvRecord> = envs
            .par_iter_mut()
            .enumerate()
            .map(|(k, te)| -> Result<EnvRecord> {
                let o = out.get(k);
                let (action, log_prob) = sample(&o.mean, &o.log_std, &mut te.env.rng);
                let fb = fuse_lse(&build_constraints(te.env.observed_scan(), &sp), sp.k);
                let u_bar = VelocityCommand::from_array(action);
                let (u_s, active) = if shield_enabled {
                    let so = project_damped(u_bar, &fb, o.alpha, sp.eps_d);
                    (so.u_s, so.active)
                } else {
                    (u_bar, false)
                };
                let step = te.step(u_s)?;
                Ok(EnvRecord {
                    action,
                    log_prob,
                    shielded: u_s.to_array(),
                    h: fb.h,
                    grad: fb.grad,
                    active,
                    projected: shield_enabled,
                    step,
                })
            })
            .collect::<Result<_>>()?;
        for (k, rec) in records.into_iter().enumerate() {
            let i = t * n + k;
            batch.observations.row_mut(i).assign(&obs.row(k));
            batch.histories.row_mut(i).assign(&hist.row(k));
            batch.latents.row_mut(i).assign(&z.row(k));
            batch.actions[i] = rec.action;
            batch.shielded[i] = rec.shielded;
            batch.alphas[i] = out.alpha[k];
            batch.log_probs[i] = rec.log_prob;
            batch.values[i] = out.value[k];
            batch.barrier_h[i] = rec.h;
            batch.barrier_grad[i] = rec.grad;
            let r = rec.step.outcome.reward;
            batch.rewards[i] = r.total * config.ppo.reward_scale;
            batch.dones[i] = rec.step.done();
            batch.next_valid[i] = !rec.step.done();
            batch.betas[i] = rng.random_range(-1.0..=1.0);
            for (s, c) in stats.reward_sums.iter_mut().zip(r.components()) {
                *s += c;
            }
            stats.total_reward += r.total;
            stats.alpha_sum += out.alpha[k];
            stats.shield_active += rec.active as u64;
            stats.projections += rec.projected as u64;
            stats.transitions += 1;
        }
        bootstrap_truncated(envs, net, params, t, config.ppo.gamma, &mut batch.rewards)?;
        fill_inputs(envs, &mut obs, &mut hist);
        for k in 0..n {
            let i = t * n + k;
            batch.next_observations.row_mut(i).assign(&obs.row(k));
            batch.next_histories.row_mut(i).assign(&hist.row(k));
        }
    }
    fill_inputs(envs, &mut obs, &mut hist);
    let last = net.infer(params, obs.view(), hist.view())?;
    let last_values: Vec<f64> = last.value.to_vec();
    batch.compute_advantages(&last_values, config.ppo.gamma, config.ppo.gae_lambda);
    for te in envs.iter() {
        stats.counters.add(&te.counters);
    }
    Ok((batch, stats))
}

/// Full training state.
pub struct Trainer {
    pub config: Config,
    pub net: ActorCritic,
    pub params: Vec<f64>,
    pub adam: Adam,
    pub envs: Vec<TrainEnv>,
    rng: ChaCha8Rng,
    pub iteration: usize,
    pub env_steps: u64,
    /// Number of shield projections evaluated so far (rollouts and losses).
    pub projections: u64,
}

impl Trainer {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let net = ActorCritic::new(config.net.clone());
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
        let params = net.init_params(&mut init_rng);
        let envs = (0..config.ppo.num_envs)
            .into_par_iter()
            .map(|e| TrainEnv::new(&config, derive_seed(config.seed, 1000 + e as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            adam: Adam::new(net.num_params(), &config.ppo),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1)),
            config,
            net,
            params,
            envs,
            iteration: 0,
            env_steps: 0,
            projections: 0,
        })
    }

    /// One rollout followed by one PPO update.
    pub fn iterate(&mut self) -> Result<LogRow> {
        let (batch, stats) = run_episode_loop(&mut self.envs, &self.net, &self.params, &self.config, &mut self.rng)?;
        let (loss, proj) = ppo_update(&self.net, &mut self.params, &mut self.adam, &batch, &self.config, &mut self.rng)?;
        self.projections += proj + stats.projections;
        self.iteration += 1;
        self.env_steps += stats.transitions;
        let n = stats.transitions.max(1) as f64;
        let c = stats.counters;
        let mean_p = self.envs.iter().map(|e| e.curriculum.p_reset()).sum::<f64>() / self.envs.len() as f64;
        let episodes = c.episodes();
        Ok(LogRow {
            iteration: self.iteration,
            env_steps: self.env_steps,
            r_term: stats.reward_sums[0] / n,
            r_reach: stats.reward_sums[1] / n,
            r_velo: stats.reward_sums[2] / n,
            r_clear: stats.reward_sums[3] / n,
            r_stuck: stats.reward_sums[4] / n,
            r_coll: stats.reward_sums[5] / n,
            r_omega: stats.reward_sums[6] / n,
            r_total: stats.total_reward / n,
            l_ppo: loss.l_ppo,
            l_shield: loss.l_shield,
            l_range: loss.l_range,
            l_smooth: loss.l_smooth,
            l_reg: loss.l_reg,
            l_total: loss.l_total,
            entropy: loss.entropy,
            mean_alpha: stats.alpha_sum / n,
            shield_active_fraction: stats.shield_active as f64 / n,
            mean_p_reset: mean_p,
            replays: c.replays,
            full_resets: c.full_resets,
            successes: c.successes,
            collisions: c.collisions,
            timeouts: c.timeouts,
            sr_estimate: if episodes > 0 { c.successes as f64 / episodes as f64 } else { 0.0 },
        })
    }

    pub fn checkpoint_meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            config_hash: self.config.hash(),
            step: self.env_steps,
            net: self.net.config.clone(),
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.net, &self.params, &self.checkpoint_meta())
    }

    /// Trains for `config.ppo.iterations`. With an output directory, writes
    /// `train_log.csv`, `config.json`, periodic checkpoints and `policy.bin`.
    pub fn train(&mut self, out_dir: Option<&Path>, mut on_row: impl FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        let mut log = Vec::with_capacity(self.config.ppo.iterations);
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.json");
            std::fs::write(&cfg_path, self.config.to_json_pretty()).map_err(|e| Error::io(&cfg_path, e))?;
        }
        while self.iteration < self.config.ppo.iterations {
            let row = match self.iterate() {
                Ok(row) => row,
                Err(e @ Error::NonFinite { .. }) => {
                    if let Some(dir) = out_dir {
                        let dump = dir.join("nonfinite_params.bin");
                        let _ = checkpoint::encode(&self.net, &self.params).map(|b| std::fs::write(dump, b));
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            on_row(&row);
            log.push(row);
            if let Some(dir) = out_dir {
                write_log(&dir.join("train_log.csv"), &log)?;
                let every = self.config.checkpoint_every;
                if every > 0 && self.iteration.is_multiple_of(every) {
                    self.save_checkpoint(&dir.join(format!("policy_{:05}.bin", self.iteration)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save_checkpoint(&final_checkpoint(dir))?;
        }
        Ok(log)
    }
}

pub fn final_checkpoint(dir: &Path) -> PathBuf {
    dir.join("policy.bin")
}

/// Writes rows as CSV with a header.
pub fn write_log<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// CSV text for rows, header included.
pub fn log_to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
}
