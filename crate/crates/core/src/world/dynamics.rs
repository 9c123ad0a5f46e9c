use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::geometry::Vec2;

/// Body-frame velocity command `[v_x, v_y, ω_z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl VelocityCommand {
    pub const ZERO: VelocityCommand = VelocityCommand { vx: 0.0, vy: 0.0, wz: 0.0 };

    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        VelocityCommand { vx, vy, wz }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vy, self.wz]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        VelocityCommand { vx: a[0], vy: a[1], wz: a[2] }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.wz.is_finite()
    }

    /// Componentwise clamp into `[lo, hi]`.
    pub fn clamp(self, lo: [f64; 3], hi: [f64; 3]) -> Self {
        let a = self.to_array();
        VelocityCommand::from_array([a[0].clamp(lo[0], hi[0]), a[1].clamp(lo[1], hi[1]), a[2].clamp(lo[2], hi[2])])
    }
}

/// Planar pose plus body-frame velocity `(v_x, v_y, ω_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: [f64; 3],
}

impl RobotState {
    pub fn at_rest(position: Vec2, heading: f64) -> Self {
        RobotState {
            position,
            heading: wrap_angle(heading),
            velocity: [0.0; 3],
        }
    }

    /// World-frame vector expressed in the body frame.
    pub fn to_body(&self, world: Vec2) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        [c * world[0] + s * world[1], -s * world[0] + c * world[1]]
    }

    /// Planar speed `‖(v_x, v_y)‖`.
    pub fn planar_speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let mut t = (theta + PI).rem_euclid(two_pi) - PI;
    if t <= -PI {
        t += two_pi;
    }
    t
}

/// Stand-in for the low-level locomotion controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Velocity-tracking time constant in seconds; `0` means instantaneous tracking.
    pub tau_v: f64,
    /// Absolute velocity ceiling per body axis.
    pub velocity_ceiling: [f64; 3],
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            tau_v: 0.2,
            velocity_ceiling: [17.0, 8.0, 10.0],
        }
    }
}

/// First-order velocity tracking followed by kinematic pose integration.
///
/// The body velocity relaxes toward `command` with the exact discretisation
/// `v += (u - v)(1 - exp(-dt/τ))`, then the pose advances with the new
/// velocity rotated into the world frame at the current heading.
pub fn step_dynamics(state: &RobotState, command: VelocityCommand, dt: f64, params: &DynamicsParams) -> RobotState {
    debug_assert!(dt > 0.0, "dt must be positive");
    let gain = if params.tau_v > 0.0 { -(-dt / params.tau_v).exp_m1() } else { 1.0 };
    let u = command.to_array();
    let mut velocity = state.velocity;
    for (j, v) in velocity.iter_mut().enumerate() {
        let next = *v + (u[j] - *v) * gain;
        let cap = params.velocity_ceiling[j];
        *v = next.clamp(-cap, cap);
    }
    let (s, c) = state.heading.sin_cos();
    let [vx, vy, wz] = velocity;
    RobotState {
        position: [state.position[0] + (c * vx - s * vy) * dt, state.position[1] + (s * vx + c * vy) * dt],
        heading: wrap_angle(state.heading + wz * dt),
        velocity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instant() -> DynamicsParams {
        DynamicsParams {
            tau_v: 0.0,
            ..DynamicsParams::default()
        }
    }

    #[test]
    fn zero_command_is_a_fixed_point() {
        let s = RobotState::at_rest([1.0, -2.0], 0.3);
        let next = step_dynamics(&s, VelocityCommand::ZERO, 0.02, &DynamicsParams::default());
        assert_eq!(next, s);
    }

    #[test]
    fn pure_translation() {
        let s = RobotState::at_rest([0.0, 0.0], 0.0);
        let next = step_dynamics(&s, VelocityCommand::new(1.0, 0.0, 0.0), 0.1, &instant());
        assert!((next.position[0] - 0.1).abs() < 1e-15);
        assert_eq!(next.position[1], 0.0);
        assert_eq!(next.heading, 0.0);
    }

    #[test]
    fn pure_rotation() {
        let s = RobotState::at_rest([0.5, 0.5], 0.0);
        let next = step_dynamics(&s, VelocityCommand::new(0.0, 0.0, 1.0), 0.1, &instant());
        assert_eq!(next.position, [0.5, 0.5]);
        assert!((next.heading - 0.1).abs() < 1e-15);
    }

    #[test]
    fn tracking_relaxes_toward_command() {
        let p = DynamicsParams::default();
        let mut s = RobotState::at_rest([0.0, 0.0], 0.0);
        let cmd = VelocityCommand::new(1.0, 0.0, 0.0);
        s = step_dynamics(&s, cmd, 0.2, &p);
        // One time constant: 1 - e^-1 of the way there.
        assert!((s.velocity[0] - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(2.0 * PI + 0.5) - 0.5).abs() < 1e-12);
        for k in -20..20 {
            let t = wrap_angle(k as f64 * 0.77);
            assert!(t > -PI && t <= PI);
        }
    }
}
