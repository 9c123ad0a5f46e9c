//! Differentiable multi-ray barrier layer.
//!
//! Each LiDAR ray contributes a residue `h_i = ρ_i - d_safe`. The residues are
//! fused into one smooth margin with a log-sum-exp soft minimum, and the
//! nominal command is corrected along the fused gradient by a damped
//! closed-form half-space projection:
//!
//! ```text
//! h   = -(1/k) ln Σ exp(-k h_i)
//! b   = <∇h, ū> + α h
//! η   = max(0, -b / (‖∇h‖² + ε_d))
//! u_s = ū + η ∇h
//! ```
//!
//! The projection is piecewise smooth, so its Jacobians with respect to the
//! nominal command and the gain are returned alongside the output and used
//! by [`shield_backward`].

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{LidarScan, VelocityCommand, NUM_RAYS};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

static PROJECTIONS: AtomicU64 = AtomicU64::new(0);

/// Number of [`project_damped`] calls made by this process.
pub fn projection_count() -> u64 {
    PROJECTIONS.load(Ordering::Relaxed)
}

/// Gradient-norm threshold below which the undamped oracle refuses to solve.
pub const SINGULAR_GRADIENT: f64 = 1e-3;

#[inline]
fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShieldParams {
    /// Safety radius subtracted from every ray (m).
    pub d_safe: f64,
    /// LSE smoothing coefficient (1/m).
    pub k: f64,
    pub eps_d: f64,
    pub alpha_min: f64,
}

impl Default for ShieldParams {
    fn default() -> Self {
        ShieldParams {
            d_safe: 0.45,
            k: 10.0,
            eps_d: 1.0,
            alpha_min: 0.1,
        }
    }
}

impl ShieldParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [("d_safe", self.d_safe), ("k", self.k), ("eps_d", self.eps_d), ("alpha_min", self.alpha_min)];
        let bad: Vec<String> = fields
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v > 0.0))
            .map(|(n, v)| format!("shield.{n} must be finite and > 0 (got {v})"))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { problems: bad })
        }
    }
}

/// Per-ray residues and their gradients in command space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub residues: Vec<f64>,
    pub gradients: Vec<Vec3>,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }
}

/// Residues `ρ_i - d_safe`; moving along a ray shortens it, so each gradient
/// is the negated unit bearing. The yaw component is zero for a centred
/// sensor.
pub fn build_constraints(scan: &LidarScan, params: &ShieldParams) -> ConstraintSet {
    let bearings = scan.bearings();
    let residues = scan.ranges.iter().map(|r| r - params.d_safe).collect();
    let gradients = bearings
        .iter()
        .map(|b| {
            let (s, c) = b.sin_cos();
            [-c, -s, 0.0]
        })
        .collect();
    debug_assert_eq!(scan.ranges.len(), NUM_RAYS);
    ConstraintSet { residues, gradients }
}

/// Soft-minimum fused barrier.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedBarrier {
    pub h: f64,
    pub grad: Vec3,
    pub weights: Vec<f64>,
    pub k: f64,
}

impl FusedBarrier {
    /// A barrier given directly by its value and gradient, with no
    /// per-ray decomposition.
    pub fn from_parts(h: f64, grad: Vec3) -> Self {
        FusedBarrier {
            h,
            grad,
            weights: vec![1.0],
            k: f64::INFINITY,
        }
    }

    pub fn grad_norm_sq(&self) -> f64 {
        dot3(&self.grad, &self.grad)
    }
}

/// Max-shifted log-sum-exp fusion of the residues.
///
/// # Panics
/// If the constraint set is empty.
pub fn fuse_lse(cs: &ConstraintSet, k: f64) -> FusedBarrier {
    assert!(!cs.is_empty(), "cannot fuse an empty constraint set");
    debug_assert!(k > 0.0);
    let h_min = cs.residues.iter().copied().fold(f64::INFINITY, f64::min);
    // exp(-k (h_i - h_min)) <= 1 for every ray, and equals 1 for the minimum.
    let mut weights: Vec<f64> = cs.residues.iter().map(|h| (-k * (h - h_min)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let h = h_min - total.ln() / k;
    let mut grad = [0.0; 3];
    for (w, g) in weights.iter_mut().zip(&cs.gradients) {
        *w /= total;
        for j in 0..3 {
            grad[j] += *w * g[j];
        }
    }
    FusedBarrier { h, grad, weights, k }
}

/// Shielded command together with the local Jacobians of the projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldOutput {
    pub u_s: VelocityCommand,
    pub eta: f64,
    pub active: bool,
    /// `∂u_s/∂ū`, row-major: `jac_u[i][j] = ∂u_s[i]/∂ū[j]`.
    pub jac_u: Mat3,
    pub jac_alpha: Vec3,
    /// `∂η/∂α`, zero when inactive.
    pub d_eta_d_alpha: f64,
    /// Constraint value `<∇h, ū> + α h` before correction.
    pub b: f64,
}

impl ShieldOutput {
    pub fn passthrough(u: VelocityCommand) -> Self {
        ShieldOutput {
            u_s: u,
            eta: 0.0,
            active: false,
            jac_u: IDENTITY,
            jac_alpha: [0.0; 3],
            d_eta_d_alpha: 0.0,
            b: f64::INFINITY,
        }
    }
}

/// Damped closed-form projection of `u_bar` onto the barrier half-space.
///
/// At the switching surface `b = 0` the inactive branch (identity Jacobian) is
/// taken. A zero denominator (possible only with `eps_d = 0` and a vanishing
/// gradient) leaves the command unchanged.
pub fn project_damped(u_bar: VelocityCommand, fb: &FusedBarrier, alpha: f64, eps_d: f64) -> ShieldOutput {
    PROJECTIONS.fetch_add(1, Ordering::Relaxed);
    let g = fb.grad;
    let u = u_bar.to_array();
    let b = dot3(&g, &u) + alpha * fb.h;
    let denom = dot3(&g, &g) + eps_d;
    if b >= 0.0 || denom <= 0.0 || !b.is_finite() {
        return ShieldOutput {
            b,
            ..ShieldOutput::passthrough(u_bar)
        };
    }
    let eta = -b / denom;
    let u_s = [u[0] + eta * g[0], u[1] + eta * g[1], u[2] + eta * g[2]];
    let mut jac_u = IDENTITY;
    for (i, row) in jac_u.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v -= g[i] * g[j] / denom;
        }
    }
    let d_eta_d_alpha = -fb.h / denom;
    let jac_alpha = [d_eta_d_alpha * g[0], d_eta_d_alpha * g[1], d_eta_d_alpha * g[2]];
    ShieldOutput {
        u_s: VelocityCommand::from_array(u_s),
        eta,
        active: eta > 0.0,
        jac_u,
        jac_alpha,
        d_eta_d_alpha,
        b,
    }
}

/// Exact minimiser of `½‖u - ū‖²` subject to `<∇h, u> + α h ≥ 0`.
///
/// Solved through the single-constraint KKT system: the multiplier is
/// `λ = max(0, -b/‖∇h‖²)` and `u = ū + λ ∇h`. Intended for verification.
pub fn solve_qp_oracle(u_bar: VelocityCommand, fb: &FusedBarrier, alpha: f64) -> Result<VelocityCommand> {
    let g = fb.grad;
    let gg = dot3(&g, &g);
    let norm = gg.sqrt();
    if norm <= SINGULAR_GRADIENT {
        return Err(Error::SingularGradient {
            norm,
            threshold: SINGULAR_GRADIENT,
        });
    }
    let u = u_bar.to_array();
    let slack = dot3(&g, &u) + alpha * fb.h;
    if slack >= 0.0 {
        return Ok(u_bar);
    }
    let lambda = -slack / gg;
    Ok(VelocityCommand::from_array([u[0] + lambda * g[0], u[1] + lambda * g[1], u[2] + lambda * g[2]]))
}

/// Vector-Jacobian product through the projection. `h` and `∇h` depend only
/// on the observation and receive no gradient.
pub fn shield_backward(out: &ShieldOutput, upstream: Vec3) -> (Vec3, f64) {
    let mut grad_u = [0.0; 3];
    for (j, gu) in grad_u.iter_mut().enumerate() {
        *gu = (0..3).map(|i| out.jac_u[i][j] * upstream[i]).sum();
    }
    let grad_alpha = dot3(&out.jac_alpha, &upstream);
    (grad_u, grad_alpha)
}

/// Full forward pass from a scan: constraints, fusion and projection.
pub fn shield_scan(scan: &LidarScan, u_bar: VelocityCommand, alpha: f64, params: &ShieldParams) -> (FusedBarrier, ShieldOutput) {
    let fb = fuse_lse(&build_constraints(scan, params), params.k);
    let out = project_damped(u_bar, &fb, alpha, params.eps_d);
    (fb, out)
}
