#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use shieldnav::config::Config;
use shieldnav::policy::{gaussian, ActorCritic, NetConfig, OBS_DIM};
use shieldnav::trainer::TransitionBatch;

/// Small network used by gradient checks.
pub fn tiny_net(width: usize, history_len: usize, rng: &mut impl Rng) -> (ActorCritic, Vec<f64>) {
    let mut cfg = NetConfig::uniform(width, history_len);
    // Larger output gains move the policy away from the all-zero mean.
    cfg.nav_output_gain = 1.0;
    let net = ActorCritic::new(cfg);
    let params = net.init_params(rng);
    (net, params)
}

/// A hand-made batch: random inputs, old log-probs a little off the current
/// policy, and barrier data that puts some rows inside the shield.
pub fn random_batch(net: &ActorCritic, params: &[f64], num_envs: usize, steps: usize, rng: &mut impl Rng) -> TransitionBatch {
    let rows = num_envs * steps;
    let hd = net.history_dim();
    let fill = |r: usize, c: usize, rng: &mut dyn rand::RngCore| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let observations = fill(rows, OBS_DIM, rng);
    let histories = fill(rows, hd, rng);
    let out = net.infer(params, observations.view(), histories.view()).expect("finite forward");
    let mut actions = Vec::with_capacity(rows);
    let mut log_probs = Vec::with_capacity(rows);
    for i in 0..rows {
        let o = out.get(i);
        let (a, _) = gaussian::sample(&o.mean, &o.log_std, rng);
        actions.push(a);
        log_probs.push(gaussian::log_prob(&o.mean, &o.log_std, &a) + rng.random_range(-0.1..0.1));
    }
    let barrier_h: Vec<f64> = (0..rows)
        .map(|i| {
            if i % 3 == 0 {
                rng.random_range(-3.0..-0.5)
            } else {
                rng.random_range(-0.5..1.0)
            }
        })
        .collect();
    let barrier_grad = (0..rows)
        .map(|_| std::array::from_fn(|j| if j < 2 { rng.random_range(-1.5..1.5) } else { 0.0 }))
        .collect();
    TransitionBatch {
        num_envs,
        steps,
        observations,
        histories,
        latents: Array2::zeros((rows, net.config.latent_dim)),
        next_observations: fill(rows, OBS_DIM, rng),
        next_histories: fill(rows, hd, rng),
        next_valid: (0..rows).map(|i| i % 4 != 3).collect(),
        actions,
        shielded: vec![[0.0; 3]; rows],
        alphas: out.alpha.to_vec(),
        log_probs,
        rewards: (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
        values: out.value.to_vec(),
        dones: vec![false; rows],
        barrier_h,
        barrier_grad,
        betas: (0..rows).map(|_| rng.random_range(-1.0..=1.0)).collect(),
        advantages: (0..rows).map(|_| rng.random_range(-1.5..1.5)).collect(),
        returns: (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Config with a short, cheap training run.
pub fn quick_config(seed: u64, num_envs: usize, rollout_steps: usize, iterations: usize) -> Config {
    let mut c = Config { seed, ..Config::default() };
    c.ppo.num_envs = num_envs;
    c.ppo.rollout_steps = rollout_steps;
    c.ppo.iterations = iterations;
    c.checkpoint_every = 0;
    c
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
