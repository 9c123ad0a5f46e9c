//! Actor-critic networks with hand-written reverse-mode gradients.

pub mod checkpoint;
pub mod gaussian;
mod network;
pub mod nn;
mod observation;

pub use network::{ActorCritic, HeadTape, NetConfig, OutputGrads, PolicyBatch, PolicyOutput, Tape, ACTION_DIM, LOG_STD_MAX, LOG_STD_MIN};
pub use observation::{HistoryBuffer, Observation, GOAL_CLIP_RADIUS, OBS_DIM};
