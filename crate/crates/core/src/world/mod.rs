//! Planar obstacle rooms, ray-cast LiDAR, collision queries and the
//! velocity-tracking robot plant.

mod dynamics;
pub mod geometry;
mod lidar;
mod scenario;

pub use dynamics::{step_dynamics, wrap_angle, DynamicsParams, RobotState, VelocityCommand};
pub use geometry::{Obstacle, Rect, Vec2};
pub use lidar::{cast_lidar, ray_bearings, LidarScan, MAX_RANGE, MIN_RANGE, NUM_RAYS};
pub use scenario::{
    check_collision, generate_scenario, generate_scenario_with, Collision, Contact, ContactSource, Difficulty, FreeSpace, Scenario, ScenarioSpec, Task,
};
