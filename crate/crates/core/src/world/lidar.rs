use std::f64::consts::PI;

use super::dynamics::RobotState;
use super::scenario::Scenario;

pub const NUM_RAYS: usize = 41;
pub const MIN_RANGE: f64 = 0.1;
pub const MAX_RANGE: f64 = 3.0;

const FIRST_BEARING: f64 = -2.0 * PI / 3.0;
const BEARING_STEP: f64 = PI / 30.0;

/// Body-frame ray bearings, `-2π/3` to `2π/3` in steps of `π/30`.
pub fn ray_bearings() -> [f64; NUM_RAYS] {
    std::array::from_fn(|i| FIRST_BEARING + i as f64 * BEARING_STEP)
}

/// One 41-ray range scan, each range clamped to `[MIN_RANGE, MAX_RANGE]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarScan {
    pub ranges: [f64; NUM_RAYS],
}

impl LidarScan {
    pub fn uniform(range: f64) -> Self {
        LidarScan {
            ranges: [range.clamp(MIN_RANGE, MAX_RANGE); NUM_RAYS],
        }
    }

    pub fn bearings(&self) -> [f64; NUM_RAYS] {
        ray_bearings()
    }

    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn cast_lidar(scenario: &Scenario, state: &RobotState) -> LidarScan {
    let origin = state.position;
    let bearings = ray_bearings();
    let ranges = std::array::from_fn(|i| {
        let (s, c) = (state.heading + bearings[i]).sin_cos();
        let dir = [c, s];
        let mut t = scenario.extent.ray_exit(origin, dir);
        for ob in &scenario.obstacles {
            if let Some(hit) = ob.ray_hit(origin, dir) {
                t = t.min(hit);
            }
        }
        t.clamp(MIN_RANGE, MAX_RANGE)
    });
    LidarScan { ranges }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Difficulty, Obstacle, Rect};

    fn room(obstacles: Vec<Obstacle>) -> Scenario {
        Scenario::new(Rect::centered(10.0, 10.0), obstacles, Difficulty::Easy, 0)
    }

    #[test]
    fn bearings_span_and_step() {
        let b = ray_bearings();
        assert!((b[0] + 2.0 * PI / 3.0).abs() < 1e-15);
        assert!((b[40] - 2.0 * PI / 3.0).abs() < 1e-12);
        assert!(b[20].abs() < 1e-15);
    }

    #[test]
    fn empty_room_centered_reads_max_range() {
        let scan = cast_lidar(&room(vec![]), &RobotState::at_rest([0.0, 0.0], 0.0));
        assert!(scan.ranges.iter().all(|&r| r == MAX_RANGE));
    }

    #[test]
    fn wall_one_metre_ahead() {
        let scan = cast_lidar(&room(vec![]), &RobotState::at_rest([4.0, 0.0], 0.0));
        assert!((scan.ranges[20] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn circle_ahead() {
        let s = room(vec![Obstacle::Circle {
            center: [2.0, 0.0],
            radius: 0.5,
        }]);
        let scan = cast_lidar(&s, &RobotState::at_rest([0.0, 0.0], 0.0));
        assert!((scan.ranges[20] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn inside_obstacle_clamps_to_min() {
        let s = room(vec![Obstacle::Box {
            center: [0.0, 0.0],
            half_extents: [0.5, 0.5],
        }]);
        let scan = cast_lidar(&s, &RobotState::at_rest([0.0, 0.0], 0.0));
        assert!(scan.ranges.iter().all(|&r| r == MIN_RANGE));
    }
}
