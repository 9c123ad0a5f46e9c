//! Per-episode domain randomization.

use rand::Rng;
use serde::Serialize;

use crate::config::RandomizationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomizationDraw {
    pub ray_delay_ms: f64,
    /// Half-widths of the uniform noise added to each observation.
    pub gravity_noise: f64,
    pub lin_vel_noise: f64,
    pub ang_vel_noise: f64,
    pub friction_factor: f64,
    pub mass_kg: f64,
    pub extero_period_ms: f64,
}

impl RandomizationDraw {
    /// No delay, no noise, nominal plant.
    pub fn nominal() -> Self {
        RandomizationDraw {
            ray_delay_ms: 0.0,
            gravity_noise: 0.0,
            lin_vel_noise: 0.0,
            ang_vel_noise: 0.0,
            friction_factor: 0.0,
            mass_kg: 0.0,
            extero_period_ms: 100.0,
        }
    }

    pub fn sample(cfg: &RandomizationConfig, rng: &mut impl Rng) -> Self {
        if !cfg.enabled {
            return RandomizationDraw {
                extero_period_ms: cfg.extero_period_ms,
                ..Self::nominal()
            };
        }
        let uniform = |rng: &mut dyn rand::RngCore, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
        RandomizationDraw {
            ray_delay_ms: uniform(rng, cfg.ray_delay_ms),
            gravity_noise: cfg.gravity_noise,
            lin_vel_noise: cfg.lin_vel_noise,
            ang_vel_noise: cfg.ang_vel_noise,
            friction_factor: uniform(rng, cfg.friction_factor),
            mass_kg: uniform(rng, cfg.mass_kg),
            extero_period_ms: cfg.extero_period_ms,
        }
    }

    /// Exteroception ticks of lag, `round(delay / period)`.
    pub fn delay_ticks(&self) -> usize {
        (self.ray_delay_ms / self.extero_period_ms).round().max(0.0) as usize
    }

    /// Velocity-tracking time constant after friction and mass perturbation.
    pub fn scaled_tau(&self, tau_v: f64) -> f64 {
        let friction_scale = (1.0 / (1.0 + self.friction_factor)).clamp(0.5, 2.0);
        tau_v * (1.0 + 0.1 * self.mass_kg) * friction_scale
    }

    pub fn is_noiseless(&self) -> bool {
        self.gravity_noise == 0.0 && self.lin_vel_noise == 0.0 && self.ang_vel_noise == 0.0
    }
}

/// Uniform noise in `[-a, a]`, or exactly zero when `a = 0`.
pub fn noise(rng: &mut impl Rng, a: f64) -> f64 {
    if a > 0.0 {
        rng.random_range(-a..=a)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delay_rounding() {
        let mut d = RandomizationDraw::nominal();
        d.ray_delay_ms = 40.0;
        assert_eq!(d.delay_ticks(), 0);
        d.ray_delay_ms = 80.0;
        assert_eq!(d.delay_ticks(), 1);
        d.ray_delay_ms = 49.9;
        assert_eq!(d.delay_ticks(), 0);
    }

    #[test]
    fn tau_mapping() {
        let mut d = RandomizationDraw::nominal();
        assert_eq!(d.scaled_tau(0.2), 0.2);
        d.mass_kg = 1.5;
        d.friction_factor = -0.2;
        assert!((d.scaled_tau(0.2) - 0.2 * 1.15 * 1.25).abs() < 1e-15);
        d.friction_factor = 1.25;
        d.mass_kg = 0.0;
        assert!((d.scaled_tau(0.2) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn draws_in_range() {
        let cfg = RandomizationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let d = RandomizationDraw::sample(&cfg, &mut rng);
            assert!((40.0..80.0).contains(&d.ray_delay_ms));
            assert!((-0.2..1.25).contains(&d.friction_factor));
            assert!((-1.5..1.5).contains(&d.mass_kg));
            assert!(d.scaled_tau(0.2) > 0.0);
        }
        let off = RandomizationConfig { enabled: false, ..cfg };
        let d = RandomizationDraw::sample(&off, &mut rng);
        assert_eq!(d, RandomizationDraw::nominal());
    }
}
