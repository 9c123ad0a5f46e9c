//! Diagonal Gaussian action distribution.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::network::ACTION_DIM;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

pub fn log_prob(mean: &[f64; ACTION_DIM], log_std: &[f64; ACTION_DIM], action: &[f64; ACTION_DIM]) -> f64 {
    (0..ACTION_DIM)
        .map(|j| {
            let z = (action[j] - mean[j]) * (-log_std[j]).exp();
            -0.5 * z * z - log_std[j] - HALF_LN_TWO_PI
        })
        .sum()
}

/// `(∂ log p/∂mean, ∂ log p/∂log_std)`.
pub fn log_prob_grads(mean: &[f64; ACTION_DIM], log_std: &[f64; ACTION_DIM], action: &[f64; ACTION_DIM]) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
    let mut d_mean = [0.0; ACTION_DIM];
    let mut d_log_std = [0.0; ACTION_DIM];
    for j in 0..ACTION_DIM {
        let inv_var = (-2.0 * log_std[j]).exp();
        let diff = action[j] - mean[j];
        d_mean[j] = diff * inv_var;
        d_log_std[j] = diff * diff * inv_var - 1.0;
    }
    (d_mean, d_log_std)
}

pub fn entropy(log_std: &[f64; ACTION_DIM]) -> f64 {
    log_std.iter().map(|l| l + 0.5 + HALF_LN_TWO_PI).sum()
}

/// Draws an action and returns it with its log-density.
pub fn sample(mean: &[f64; ACTION_DIM], log_std: &[f64; ACTION_DIM], rng: &mut impl Rng) -> ([f64; ACTION_DIM], f64) {
    let action = std::array::from_fn(|j| {
        let eps: f64 = StandardNormal.sample(rng);
        mean[j] + log_std[j].exp() * eps
    });
    let lp = log_prob(mean, log_std, &action);
    (action, lp)
}
