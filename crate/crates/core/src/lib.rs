//! Safety-shielded LiDAR navigation: a differentiable log-sum-exp barrier
//! layer in front of a PPO-trained velocity policy, with collision-state
//! replay for curriculum resets.

pub mod acsi;
pub mod checks;
pub mod config;
pub mod error;
pub mod eval;
pub mod policy;
pub mod shield;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
