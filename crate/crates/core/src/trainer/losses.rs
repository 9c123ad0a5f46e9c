//! Scalar loss terms and advantage estimation.

use ndarray::{Array2, ArrayView2};

use crate::policy::ActorCritic;

/// `‖u_s − ū‖² + [α_min − α]₊²`.
pub fn shield_loss(u_bar: [f64; 3], u_s: [f64; 3], alpha: f64, alpha_min: f64) -> f64 {
    let gap = (alpha_min - alpha).max(0.0);
    (0..3).map(|j| (u_s[j] - u_bar[j]).powi(2)).sum::<f64>() + gap * gap
}

/// Partial derivatives of [`shield_loss`] with respect to `(ū, u_s, α)`,
/// treating its arguments as independent.
pub fn shield_loss_grads(u_bar: [f64; 3], u_s: [f64; 3], alpha: f64, alpha_min: f64) -> ([f64; 3], [f64; 3], f64) {
    let d_us: [f64; 3] = std::array::from_fn(|j| 2.0 * (u_s[j] - u_bar[j]));
    let d_ubar = d_us.map(|v| -v);
    let d_alpha = -2.0 * (alpha_min - alpha).max(0.0);
    (d_ubar, d_us, d_alpha)
}

/// `Σ_j (u_j − clip(u_j, u_min_j, u_max_j))²`.
pub fn range_loss(u: [f64; 3], u_min: [f64; 3], u_max: [f64; 3]) -> f64 {
    (0..3).map(|j| (u[j] - u[j].clamp(u_min[j], u_max[j])).powi(2)).sum()
}

pub fn range_loss_grad(u: [f64; 3], u_min: [f64; 3], u_max: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|j| 2.0 * (u[j] - u[j].clamp(u_min[j], u_max[j])))
}

/// Rows `x + β (x_next − x)` with one `β` per row.
pub fn interpolate(x: ArrayView2<'_, f64>, x_next: ArrayView2<'_, f64>, beta: &[f64]) -> Array2<f64> {
    assert_eq!(x.dim(), x_next.dim());
    assert_eq!(x.nrows(), beta.len());
    let mut out = x.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += beta[i] * (x_next[[i, j]] - x[[i, j]]);
        }
    }
    out
}

/// Lipschitz smoothness penalty on joint states:
/// `λ_π·MSE(π(x), π(x̄)) + λ_V·MSE(V(x), V(x̄))`, averaged over rows and
/// action components.
pub fn smooth_loss(net: &ActorCritic, params: &[f64], x: ArrayView2<'_, f64>, x_next: ArrayView2<'_, f64>, beta: &[f64], lambda_pi: f64, lambda_v: f64) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    let xbar = interpolate(x, x_next, beta);
    let (a, _) = net.heads(params, x);
    let (b, _) = net.heads(params, xbar.view());
    let n = x.nrows() as f64;
    let mse_pi = (&a.mean - &b.mean).mapv(|v| v * v).sum() / (n * a.mean.ncols() as f64);
    let mse_v = (&a.value - &b.value).mapv(|v| v * v).sum() / n;
    lambda_pi * mse_pi + lambda_v * mse_v
}

/// Generalised advantage estimates for one trajectory segment.
///
/// `dones[t]` marks that the transition at `t` ended an episode, so no value
/// is bootstrapped across it. `last_value` is `V` of the state following the
/// final transition. Returns `(advantages, returns)`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n);
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)` and its derivative with
/// respect to the new log-probability.
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let ratio = (logp_new - logp_old).exp();
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::NetConfig;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shield_loss_values() {
        assert_eq!(shield_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 0.5, 0.1), 0.0);
        let l = shield_loss([0.0; 3], [0.3, 0.0, 0.0], 0.05, 0.1);
        assert!((l - 0.0925).abs() < 1e-15);
        let (_, _, da) = shield_loss_grads([0.0; 3], [0.0; 3], 0.05, 0.1);
        assert!((da + 2.0 * 0.05).abs() < 1e-15);
        assert_eq!(shield_loss_grads([0.0; 3], [0.0; 3], 0.2, 0.1).2, 0.0);
    }

    #[test]
    fn range_loss_values() {
        let (lo, hi) = ([-0.5, -0.8, -1.0], [1.7, 0.8, 1.0]);
        assert_eq!(range_loss([0.5, 0.1, -0.3], lo, hi), 0.0);
        assert_eq!(range_loss_grad([0.5, 0.1, -0.3], lo, hi), [0.0; 3]);
        assert!((range_loss([2.0, 0.0, 0.0], lo, hi) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn gae_lambda_one_is_discounted_return() {
        let r = [1.0, -0.5, 2.0, 0.25, 3.0, -1.0];
        let v = [0.3, 0.1, -0.2, 0.7, 0.05, 0.4];
        let dones = [false, false, true, false, false, false];
        let last = 0.9;
        let g = 0.97;
        let (adv, _) = compute_gae(&r, &v, &dones, last, g, 1.0);
        for t in 0..r.len() {
            let mut ret = 0.0;
            let mut disc = 1.0;
            let mut k = t;
            loop {
                ret += disc * r[k];
                disc *= g;
                if dones[k] {
                    break;
                }
                k += 1;
                if k == r.len() {
                    ret += disc * last;
                    break;
                }
            }
            assert!((adv[t] - (ret - v[t])).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn surrogate_at_ratio_one() {
        let (s, d) = clipped_surrogate(-1.3, -1.3, 0.0, 0.2);
        assert_eq!((s, d), (0.0, 0.0));
        let (s, d) = clipped_surrogate(0.5, 0.0, 1.0, 0.2);
        assert!((s - 1.2).abs() < 1e-15);
        assert_eq!(d, 0.0);
        let (s, d) = clipped_surrogate(0.5, 0.0, -1.0, 0.2);
        assert!((s + 0.5f64.exp()).abs() < 1e-12);
        assert_eq!(d, s);
    }

    #[test]
    fn smooth_loss_trivial_cases() {
        let net = ActorCritic::new(NetConfig::uniform(8, 2));
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let x = Array2::from_shape_fn((4, net.joint_dim()), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin());
        let y = Array2::from_shape_fn((4, net.joint_dim()), |(i, j)| ((i * 3 + j) as f64 * 0.11).cos());
        let beta = [0.3, -0.7, 0.9, -0.1];
        assert_eq!(smooth_loss(&net, &params, x.view(), y.view(), &[0.0; 4], 0.05, 0.005), 0.0);
        assert_eq!(smooth_loss(&net, &params, x.view(), x.view(), &beta, 0.05, 0.005), 0.0);
        assert!(smooth_loss(&net, &params, x.view(), y.view(), &beta, 0.05, 0.005) > 0.0);
        let zeros = vec![0.0; net.num_params()];
        assert_eq!(smooth_loss(&net, &zeros, x.view(), y.view(), &beta, 0.05, 0.005), 0.0);
    }
}
