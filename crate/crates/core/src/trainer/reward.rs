//! Per-step navigation reward.

use std::collections::VecDeque;

use serde::Serialize;

use crate::world::{LidarScan, RobotState, Vec2, NUM_RAYS};

/// Weights of `(term, reach, velo, clear, stuck, coll, ω)`.
pub const REWARD_WEIGHTS: [f64; 7] = [-100.0, 10.0, 15.0, 15.0, -5.0, -4.0, -0.05];

pub const COMPONENT_NAMES: [&str; 7] = ["r_term", "r_reach", "r_velo", "r_clear", "r_stuck", "r_coll", "r_omega"];

const REACH_RADIUS: f64 = 0.5;
const NEAR_GOAL: f64 = 1.0;
const STUCK_DISPLACEMENT: f64 = 0.1;
const STUCK_MAX_YAW_RATE: f64 = 1.0;

/// Weighted reward terms of one policy step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RewardBreakdown {
    pub r_term: f64,
    pub r_reach: f64,
    pub r_velo: f64,
    pub r_clear: f64,
    pub r_stuck: f64,
    pub r_coll: f64,
    pub r_omega: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn components(&self) -> [f64; 7] {
        [self.r_term, self.r_reach, self.r_velo, self.r_clear, self.r_stuck, self.r_coll, self.r_omega]
    }

    /// Builds a breakdown from unweighted terms.
    pub fn from_raw(raw: [f64; 7]) -> Self {
        let w: [f64; 7] = std::array::from_fn(|i| raw[i] * REWARD_WEIGHTS[i]);
        RewardBreakdown {
            r_term: w[0],
            r_reach: w[1],
            r_velo: w[2],
            r_clear: w[3],
            r_stuck: w[4],
            r_coll: w[5],
            r_omega: w[6],
            total: w.iter().sum(),
        }
    }
}

/// Recent positions at policy rate, used to detect a robot that pushes
/// forward without making progress.
#[derive(Debug, Clone, PartialEq)]
pub struct StuckTracker {
    window: usize,
    positions: VecDeque<Vec2>,
}

impl StuckTracker {
    pub fn new(window: usize) -> Self {
        assert!(window > 0);
        StuckTracker {
            window,
            positions: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn clear(&mut self) {
        self.positions.clear();
    }

    pub fn push(&mut self, p: Vec2) {
        if self.positions.len() == self.window {
            self.positions.pop_front();
        }
        self.positions.push_back(p);
    }

    pub fn is_full(&self) -> bool {
        self.positions.len() == self.window
    }

    /// Largest displacement of any tracked position from the first one.
    pub fn max_displacement(&self) -> Option<f64> {
        let first = *self.positions.front()?;
        Some(self.positions.iter().map(|p| (p[0] - first[0]).hypot(p[1] - first[1])).fold(0.0, f64::max))
    }
}

/// Angle of the goal in the body frame.
pub fn heading_error(state: &RobotState, goal: Vec2) -> f64 {
    let b = state.to_body([goal[0] - state.position[0], goal[1] - state.position[1]]);
    b[1].atan2(b[0])
}

/// Bearing of the longest ray; ties go to the smallest `|bearing|`.
pub fn open_direction(scan: &LidarScan) -> f64 {
    let bearings = scan.bearings();
    let mut best = 0;
    for i in 1..NUM_RAYS {
        let (r, rb) = (scan.ranges[i], scan.ranges[best]);
        if r > rb || (r == rb && bearings[i].abs() < bearings[best].abs()) {
            best = i;
        }
    }
    bearings[best]
}

/// Smallest range inside `|bearing| <= half_angle`.
pub fn front_clearance(scan: &LidarScan, half_angle: f64) -> f64 {
    scan.bearings()
        .iter()
        .zip(scan.ranges.iter())
        .filter(|(b, _)| b.abs() <= half_angle + 1e-12)
        .map(|(_, r)| *r)
        .fold(f64::INFINITY, f64::min)
}

/// What happened during the step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepEvents {
    /// The episode segment ended by a collision.
    pub terminated: bool,
    pub collided: bool,
}

/// Evaluates the seven reward terms at the post-step state.
pub fn compute_reward(state: &RobotState, scan: &LidarScan, goal: Vec2, stuck: &StuckTracker, events: StepEvents) -> RewardBreakdown {
    let d = (goal[0] - state.position[0]).hypot(goal[1] - state.position[1]);
    let [vx, vy, wz] = state.velocity;
    let proximity = 1.0 / (1.0 + 2.0 * d * d);
    let theta = heading_error(state, goal);
    let phi = open_direction(scan);
    let ind = |b: bool| if b { 1.0 } else { 0.0 };

    let term = ind(events.terminated);
    let reach = proximity * ind(d < REACH_RADIUS);
    let velo = theta.cos() * vx + proximity;
    let clear = ind(d > NEAR_GOAL) * phi.cos() * vx + ind(d <= NEAR_GOAL) * proximity;
    let stuck_now = stuck.is_full() && stuck.max_displacement().is_some_and(|m| m < STUCK_DISPLACEMENT);
    let stuck_term = ind(d > NEAR_GOAL) * ind(stuck_now) * ind(vx > 0.0) * ind(wz.abs() < STUCK_MAX_YAW_RATE);
    let coll = (1.0 + 4.0 * (vx * vx + vy * vy + wz * wz)) * ind(events.collided);
    // Roll and pitch rates do not exist in the planar plant.
    let omega = 0.0;
    RewardBreakdown::from_raw([term, reach, velo, clear, stuck_term, coll, omega])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::LidarScan;

    fn at(x: f64, y: f64, heading: f64, v: [f64; 3]) -> RobotState {
        RobotState {
            position: [x, y],
            heading,
            velocity: v,
        }
    }

    #[test]
    fn reach_at_goal() {
        let r = compute_reward(
            &at(0.0, 0.0, 0.0, [0.0; 3]),
            &LidarScan::uniform(3.0),
            [0.0, 0.0],
            &StuckTracker::new(20),
            StepEvents::default(),
        );
        assert_eq!(r.r_reach, 10.0);
        let r = compute_reward(
            &at(0.5, 0.0, 0.0, [0.0; 3]),
            &LidarScan::uniform(3.0),
            [0.0, 0.0],
            &StuckTracker::new(20),
            StepEvents::default(),
        );
        assert_eq!(r.r_reach, 0.0);
    }

    #[test]
    fn velocity_term() {
        let r = compute_reward(
            &at(0.0, 0.0, 0.0, [1.0, 0.0, 0.0]),
            &LidarScan::uniform(3.0),
            [1.0, 0.0],
            &StuckTracker::new(20),
            StepEvents::default(),
        );
        assert!((r.r_velo / 15.0 - (1.0 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn total_is_sum() {
        let mut stuck = StuckTracker::new(3);
        for _ in 0..3 {
            stuck.push([2.0, 2.0]);
        }
        let r = compute_reward(
            &at(2.0, 2.0, 0.3, [0.4, -0.2, 0.5]),
            &LidarScan::uniform(1.0),
            [-2.0, 1.0],
            &stuck,
            StepEvents {
                terminated: true,
                collided: true,
            },
        );
        assert_eq!(r.total, r.components().iter().sum::<f64>());
        assert_eq!(r.r_term, -100.0);
        assert_eq!(r.r_stuck, -5.0);
        assert!((r.r_coll + 4.0 * (1.0 + 4.0 * (0.16 + 0.04 + 0.25))).abs() < 1e-12);
    }

    #[test]
    fn open_direction_ties_prefer_front() {
        assert_eq!(open_direction(&LidarScan::uniform(3.0)), 0.0);
        let mut s = LidarScan::uniform(1.0);
        s.ranges[15] = 2.0;
        s.ranges[30] = 2.0;
        assert_eq!(open_direction(&s), s.bearings()[15]);
    }

    #[test]
    fn stuck_tracker_displacement() {
        let mut t = StuckTracker::new(3);
        assert_eq!(t.max_displacement(), None);
        t.push([0.0, 0.0]);
        t.push([3.0, 4.0]);
        t.push([1.0, 0.0]);
        assert_eq!(t.max_displacement(), Some(5.0));
        t.push([1.0, 1.0]);
        assert_eq!(t.max_displacement(), Some(20.0f64.sqrt()));
    }

    #[test]
    fn front_cone() {
        let mut s = LidarScan::uniform(3.0);
        s.ranges[20] = 0.7;
        s.ranges[0] = 0.2;
        assert_eq!(front_clearance(&s, std::f64::consts::PI / 6.0), 0.7);
    }
}
