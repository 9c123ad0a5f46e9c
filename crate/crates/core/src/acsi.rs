//! Adaptive collision-state initialisation.
//!
//! Each environment keeps a short ring of recent robot states. When the
//! robot collides, it is reset, with probability `P_reset`, to the state it
//! was in `t_back` seconds earlier (same room, same goal, same pose and
//! velocity), otherwise the episode is fully reset. `P_reset` follows a
//! goal-success curriculum:
//!
//! ```text
//! P_reset = P_min + (P_max - P_min) · clip(L_goal, 0, 1)
//! L_goal += step · (1[d < d_up] - 1[d > d_down])   at every episode end
//! ```

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::RobotState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcsiConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub d_up: f64,
    pub d_down: f64,
    pub step_increment: f64,
    /// Look-back between the collision and the replayed state (s).
    pub t_back: f64,
    /// Horizon kept in the state ring (s).
    pub t_hist: f64,
}

impl Default for AcsiConfig {
    fn default() -> Self {
        AcsiConfig {
            p_min: 0.1,
            p_max: 0.5,
            d_up: 0.5,
            d_down: 2.0,
            step_increment: 0.05,
            t_back: 1.0,
            t_hist: 3.0,
        }
    }
}

impl AcsiConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.p_min) || !(0.0..=1.0).contains(&self.p_max) || self.p_min > self.p_max {
            problems.push(format!(
                "acsi.p_min/p_max must satisfy 0 <= p_min <= p_max <= 1 (got {} / {})",
                self.p_min, self.p_max
            ));
        }
        if !(self.d_up >= 0.0 && self.d_down >= self.d_up) {
            problems.push("acsi.d_down must be >= acsi.d_up >= 0".into());
        }
        if !(self.step_increment.is_finite() && self.step_increment > 0.0) {
            problems.push("acsi.step_increment must be > 0".into());
        }
        if !(self.t_back > 0.0 && self.t_hist >= self.t_back) {
            problems.push("acsi.t_hist must be >= acsi.t_back > 0".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { problems })
        }
    }
}

pub const TIME_EPSILON: f64 = 1e-9;

/// Recent `(state, time)` snapshots of one environment, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct StateHistoryRing {
    snapshots: VecDeque<(RobotState, f64)>,
    capacity: usize,
}

impl StateHistoryRing {
    /// Capacity `⌈t_hist / dt⌉`.
    pub fn new(t_hist: f64, dt: f64) -> Self {
        let capacity = ((t_hist / dt) - 1e-9).ceil().max(1.0) as usize;
        Self::with_capacity(capacity)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0);
        StateHistoryRing {
            snapshots: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn clear(&mut self) {
        self.snapshots.clear();
    }

    pub fn oldest(&self) -> Option<&(RobotState, f64)> {
        self.snapshots.front()
    }

    /// Appends a snapshot, evicting the oldest when full. Timestamps must not
    /// decrease.
    pub fn record_state(&mut self, state: RobotState, t: f64) {
        if let Some(&(_, last)) = self.snapshots.back() {
            debug_assert!(t >= last, "timestamps must be monotone ({t} < {last})");
        }
        if self.snapshots.len() == self.capacity {
            self.snapshots.pop_front();
        }
        self.snapshots.push_back((state, t));
    }

    /// Latest snapshot whose timestamp is `<= t`, up to a rounding slack of
    /// [`TIME_EPSILON`].
    pub fn query(&self, t: f64) -> Option<&(RobotState, f64)> {
        self.snapshots.iter().rev().find(|(_, ts)| *ts <= t + TIME_EPSILON)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub l_goal: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub d_up: f64,
    pub d_down: f64,
}

impl CurriculumState {
    pub fn new(config: &AcsiConfig) -> Self {
        CurriculumState {
            l_goal: 0.0,
            p_min: config.p_min,
            p_max: config.p_max,
            d_up: config.d_up,
            d_down: config.d_down,
        }
    }

    /// Curriculum that never replays.
    pub fn disabled() -> Self {
        CurriculumState {
            l_goal: 0.0,
            p_min: 0.0,
            p_max: 0.0,
            d_up: 0.0,
            d_down: f64::INFINITY,
        }
    }

    pub fn p_reset(&self) -> f64 {
        self.p_min + (self.p_max - self.p_min) * self.l_goal.clamp(0.0, 1.0)
    }

    /// Applies the episode-end update for terminal goal distance `d`.
    pub fn update(&mut self, d: f64, step: f64) {
        debug_assert!(d >= 0.0);
        if d < self.d_up {
            self.l_goal += step;
        } else if d > self.d_down {
            self.l_goal -= step;
        }
    }
}

/// Functional form of [`CurriculumState::update`].
pub fn update_curriculum(cs: CurriculumState, d: f64, step: f64) -> CurriculumState {
    let mut next = cs;
    next.update(d, step);
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResetDecision {
    /// Restore this recorded state in the same scenario with the same goal.
    ReplayCritical {
        state: RobotState,
        recorded_at: f64,
    },
    FullReset,
}

/// Reset decision after a collision at time `now`.
///
/// With probability `P_reset` the snapshot from `t_back` before the collision
/// is replayed. If the ring does not reach that far back the oldest snapshot
/// is used; an empty ring always yields a full reset.
pub fn on_collision(ring: &StateHistoryRing, cs: &CurriculumState, now: f64, t_back: f64, rng: &mut impl Rng) -> ResetDecision {
    let p = cs.p_reset();
    // Draw unconditionally so the stream does not depend on the ring.
    let replay = rng.random::<f64>() < p;
    if !replay {
        return ResetDecision::FullReset;
    }
    match ring.query(now - t_back).or_else(|| ring.oldest()) {
        Some(&(state, recorded_at)) => ResetDecision::ReplayCritical { state, recorded_at },
        None => ResetDecision::FullReset,
    }
}
