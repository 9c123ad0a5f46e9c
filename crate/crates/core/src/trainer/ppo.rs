//! PPO objective with shield and regularisation terms, and the Adam update.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::losses::{clipped_surrogate, compute_gae, range_loss, range_loss_grad, shield_loss, shield_loss_grads};
use crate::config::{Config, PpoConfig};
use crate::error::{Error, Result};
use crate::policy::gaussian::{entropy, log_prob, log_prob_grads};
use crate::policy::{ActorCritic, OutputGrads, ACTION_DIM, OBS_DIM};
use crate::shield::{project_damped, shield_backward, FusedBarrier, ShieldOutput};
use crate::world::VelocityCommand;

/// Rollout samples, stored time-major: row `t * num_envs + e`.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub num_envs: usize,
    pub steps: usize,
    pub observations: Array2<f64>,
    pub histories: Array2<f64>,
    pub latents: Array2<f64>,
    /// Joint-state inputs of the following step, valid where `next_valid`.
    pub next_observations: Array2<f64>,
    pub next_histories: Array2<f64>,
    pub next_valid: Vec<bool>,
    /// Sampled nominal commands ū.
    pub actions: Vec<[f64; ACTION_DIM]>,
    /// Executed shielded commands u_s.
    pub shielded: Vec<[f64; ACTION_DIM]>,
    pub alphas: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Fused barrier value and gradient seen by the shield.
    pub barrier_h: Vec<f64>,
    pub barrier_grad: Vec<[f64; 3]>,
    /// Interpolation coefficients for the smoothness term.
    pub betas: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills advantages and returns from per-environment GAE and normalises
    /// the advantages over the whole batch.
    pub fn compute_advantages(&mut self, last_values: &[f64], gamma: f64, lambda: f64) {
        let (n, t_len) = (self.num_envs, self.steps);
        assert_eq!(last_values.len(), n);
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for (e, &last) in last_values.iter().enumerate() {
            let idx: Vec<usize> = (0..t_len).map(|t| t * n + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, last, gamma, lambda);
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.returns[i] = ret[k];
            }
        }
        normalize(&mut self.advantages);
    }
}

fn normalize(v: &mut [f64]) {
    if v.len() < 2 {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for x in v.iter_mut() {
        *x = (*x - mean) / std;
    }
}

/// Loss terms averaged over a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossReport {
    /// Clipped surrogate + value loss − entropy bonus.
    pub l_ppo: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub l_shield: f64,
    pub l_range: f64,
    pub l_smooth: f64,
    pub l_reg: f64,
    pub l_total: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

impl LossReport {
    fn add_scaled(&mut self, o: &LossReport, w: f64) {
        self.l_ppo += w * o.l_ppo;
        self.policy_loss += w * o.policy_loss;
        self.value_loss += w * o.value_loss;
        self.l_shield += w * o.l_shield;
        self.l_range += w * o.l_range;
        self.l_smooth += w * o.l_smooth;
        self.l_reg += w * o.l_reg;
        self.l_total += w * o.l_total;
        self.entropy += w * o.entropy;
        self.clip_fraction += w * o.clip_fraction;
        self.approx_kl += w * o.approx_kl;
    }

    fn is_finite(&self) -> bool {
        [self.l_ppo, self.l_shield, self.l_range, self.l_smooth, self.l_total, self.entropy]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Coefficients of the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lambda_shield: f64,
    pub lambda_reg: f64,
    pub lambda_pi: f64,
    pub lambda_v: f64,
    pub alpha_min: f64,
    pub eps_d: f64,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    /// When false, u_s = ū and the projection is never evaluated.
    pub shield_enabled: bool,
}

impl LossWeights {
    pub fn from_config(config: &Config) -> Self {
        let p = &config.ppo;
        let ab = config.ablation;
        LossWeights {
            clip_ratio: p.clip_ratio,
            entropy_coef: p.entropy_coef,
            value_coef: p.value_coef,
            lambda_shield: if ab.no_shield { 0.0 } else { p.lambda_shield },
            lambda_reg: if ab.no_reg { 0.0 } else { p.lambda_reg },
            lambda_pi: p.lambda_pi,
            lambda_v: p.lambda_v,
            alpha_min: config.shield.alpha_min,
            eps_d: config.shield.eps_d,
            u_min: config.world.u_min,
            u_max: config.world.u_max,
            shield_enabled: !ab.no_shield,
        }
    }
}

fn gather(src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    src.select(Axis(0), idx)
}

/// Sum-normalised partial loss and gradient of one chunk.
fn chunk_loss(net: &ActorCritic, params: &[f64], batch: &TransitionBatch, idx: &[usize], w: &LossWeights, m: f64, m_valid: f64) -> (LossReport, Vec<f64>, u64) {
    let mut grads = vec![0.0; params.len()];
    let mut rep = LossReport::default();
    let mut projections = 0u64;
    let obs = gather(&batch.observations, idx);
    let hist = gather(&batch.histories, idx);
    let (z, enc_cache) = net.encode(params, hist.view());
    let x = ActorCritic::joint_state(obs.view(), z.view());
    let (out, tape) = net.heads(params, x.view());
    let log_std = out.log_std;
    let mut g = OutputGrads::zeros(idx.len());

    for (r, &i) in idx.iter().enumerate() {
        let mean: [f64; 3] = std::array::from_fn(|j| out.mean[[r, j]]);
        let alpha = out.alpha[r];
        let value = out.value[r];

        let lp = log_prob(&mean, &log_std, &batch.actions[i]);
        let (surr, d_surr) = clipped_surrogate(lp, batch.log_probs[i], batch.advantages[i], w.clip_ratio);
        rep.policy_loss -= surr / m;
        let ratio = (lp - batch.log_probs[i]).exp();
        if (ratio - 1.0).abs() > w.clip_ratio {
            rep.clip_fraction += 1.0 / m;
        }
        rep.approx_kl += ((ratio - 1.0) - (lp - batch.log_probs[i])) / m;
        let (d_mean_lp, d_ls_lp) = log_prob_grads(&mean, &log_std, &batch.actions[i]);
        let d_lp = -d_surr / m;
        for j in 0..3 {
            g.mean[[r, j]] += d_lp * d_mean_lp[j];
            g.log_std[j] += d_lp * d_ls_lp[j];
        }

        let verr = value - batch.returns[i];
        rep.value_loss += verr * verr / m;
        g.value[r] += w.value_coef * 2.0 * verr / m;

        let sh: ShieldOutput = if w.shield_enabled {
            projections += 1;
            let fb = FusedBarrier::from_parts(batch.barrier_h[i], batch.barrier_grad[i]);
            project_damped(VelocityCommand::from_array(mean), &fb, alpha, w.eps_d)
        } else {
            ShieldOutput::passthrough(VelocityCommand::from_array(mean))
        };
        let u_s = sh.u_s.to_array();
        rep.l_shield += shield_loss(mean, u_s, alpha, w.alpha_min) / m;
        rep.l_range += range_loss(u_s, w.u_min, w.u_max) / m;
        let (d_mean_sh, d_us_sh, d_alpha_sh) = shield_loss_grads(mean, u_s, alpha, w.alpha_min);
        let d_us_rg = range_loss_grad(u_s, w.u_min, w.u_max);
        let upstream: [f64; 3] = std::array::from_fn(|j| (w.lambda_shield * d_us_sh[j] + w.lambda_reg * d_us_rg[j]) / m);
        let (d_mean_up, d_alpha_up) = shield_backward(&sh, upstream);
        for j in 0..3 {
            g.mean[[r, j]] += d_mean_up[j] + w.lambda_shield * d_mean_sh[j] / m;
        }
        g.alpha[r] += d_alpha_up + w.lambda_shield * d_alpha_sh / m;
    }

    // Smoothness term on rows whose successor belongs to the same trajectory.
    let valid: Vec<usize> = (0..idx.len()).filter(|&r| batch.next_valid[idx[r]]).collect();
    let mut dz = x.slice(s![.., OBS_DIM..]).mapv(|_| 0.0);
    let smooth_on = !valid.is_empty() && w.lambda_reg != 0.0 && (w.lambda_pi != 0.0 || w.lambda_v != 0.0);
    let mut smooth_state = None;
    if smooth_on {
        let rows: Vec<usize> = valid.iter().map(|&r| idx[r]).collect();
        let obs1 = gather(&batch.next_observations, &rows);
        let hist1 = gather(&batch.next_histories, &rows);
        let (z1, enc1) = net.encode(params, hist1.view());
        let x1 = ActorCritic::joint_state(obs1.view(), z1.view());
        let xv = x.select(Axis(0), &valid);
        let betas: Vec<f64> = rows.iter().map(|&i| batch.betas[i]).collect();
        let xbar = super::losses::interpolate(xv.view(), x1.view(), &betas);
        let (outbar, tape_bar) = net.heads(params, xbar.view());
        let mut gbar = OutputGrads::zeros(valid.len());
        let (c_pi, c_v) = (w.lambda_reg * w.lambda_pi, w.lambda_reg * w.lambda_v);
        let mut l_smooth = 0.0;
        for (k, &r) in valid.iter().enumerate() {
            for j in 0..3 {
                let diff = out.mean[[r, j]] - outbar.mean[[k, j]];
                l_smooth += w.lambda_pi * diff * diff / (3.0 * m_valid);
                let d = c_pi * 2.0 * diff / (3.0 * m_valid);
                g.mean[[r, j]] += d;
                gbar.mean[[k, j]] -= d;
            }
            let diff = out.value[r] - outbar.value[k];
            l_smooth += w.lambda_v * diff * diff / m_valid;
            let d = c_v * 2.0 * diff / m_valid;
            g.value[r] += d;
            gbar.value[k] -= d;
        }
        rep.l_smooth = l_smooth;
        smooth_state = Some((valid, betas, enc1, tape_bar, gbar));
    }

    let mut dx = net.heads_backward(params, &tape, &g, &mut grads);
    net.log_std_backward(params, g.log_std, &mut grads);
    if let Some((valid, betas, enc1, tape_bar, gbar)) = smooth_state {
        let dxbar = net.heads_backward(params, &tape_bar, &gbar, &mut grads);
        let mut dz1 = Array2::zeros((valid.len(), dz.ncols()));
        for (k, &r) in valid.iter().enumerate() {
            let b = betas[k];
            for c in 0..dx.ncols() {
                dx[[r, c]] += (1.0 - b) * dxbar[[k, c]];
            }
            for c in 0..dz1.ncols() {
                dz1[[k, c]] = b * dxbar[[k, OBS_DIM + c]];
            }
        }
        net.encode_backward(params, &enc1, dz1, &mut grads);
    }
    dz.assign(&dx.slice(s![.., OBS_DIM..]));
    net.encode_backward(params, &enc_cache, dz, &mut grads);

    rep.l_reg = rep.l_range + rep.l_smooth;
    (rep, grads, projections)
}

/// Total loss and gradient over the rows `idx`, split into `chunks` parallel
/// pieces that are summed in a fixed order.
pub fn loss_and_grad(
    net: &ActorCritic,
    params: &[f64],
    batch: &TransitionBatch,
    idx: &[usize],
    w: &LossWeights,
    chunks: usize,
) -> Result<(LossReport, Vec<f64>, u64)> {
    if idx.is_empty() {
        return Err(Error::Shape("empty minibatch".into()));
    }
    let m = idx.len() as f64;
    let m_valid = idx.iter().filter(|&&i| batch.next_valid[i]).count().max(1) as f64;
    let size = idx.len().div_ceil(chunks.max(1));
    let parts: Vec<(LossReport, Vec<f64>, u64)> = idx.par_chunks(size).map(|c| chunk_loss(net, params, batch, c, w, m, m_valid)).collect();
    let mut rep = LossReport::default();
    let mut grads = vec![0.0; params.len()];
    let mut projections = 0;
    for (r, g, p) in &parts {
        rep.add_scaled(r, 1.0);
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
        projections += p;
    }
    let log_std = net.log_std(params);
    rep.entropy = entropy(&log_std);
    net.log_std_backward(params, [-w.entropy_coef; ACTION_DIM], &mut grads);
    rep.l_ppo = rep.policy_loss + w.value_coef * rep.value_loss - w.entropy_coef * rep.entropy;
    rep.l_total = rep.l_ppo + w.lambda_shield * rep.l_shield + w.lambda_reg * rep.l_reg;
    if !rep.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            stage: "ppo loss",
            detail: format!("{rep:?} on rows {:?}", &idx[..idx.len().min(16)]),
        });
    }
    Ok((rep, grads, projections))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: &PpoConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Scales `grads` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Runs the configured epochs of shuffled minibatch updates; returns the
/// average report and the number of projections evaluated.
pub fn ppo_update(
    net: &ActorCritic,
    params: &mut [f64],
    adam: &mut Adam,
    batch: &TransitionBatch,
    config: &Config,
    rng: &mut impl Rng,
) -> Result<(LossReport, u64)> {
    let w = LossWeights::from_config(config);
    let p = &config.ppo;
    let n = batch.len();
    let mb = n.div_ceil(p.minibatches);
    let mut order: Vec<usize> = (0..n).collect();
    let mut avg = LossReport::default();
    let mut count = 0.0;
    let mut projections = 0;
    for _ in 0..p.epochs {
        order.shuffle(rng);
        for idx in order.chunks(mb) {
            let (rep, mut grads, proj) = loss_and_grad(net, params, batch, idx, &w, p.grad_chunks)?;
            clip_grad_norm(&mut grads, p.max_grad_norm);
            adam.step(params, &grads);
            avg.add_scaled(&rep, 1.0);
            count += 1.0;
            projections += proj;
        }
    }
    let mut out = LossReport::default();
    out.add_scaled(&avg, 1.0 / count);
    Ok((out, projections))
}
