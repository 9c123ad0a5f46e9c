use crate::world::{LidarScan, MAX_RANGE, NUM_RAYS};

pub const OBS_DIM: usize = 3 + 3 + 3 + 2 + NUM_RAYS;

/// Goal vectors longer than this are rescaled onto the circle.
pub const GOAL_CLIP_RADIUS: f64 = 5.0;

const LIN_VEL: usize = 0;
const ANG_VEL: usize = 3;
const GRAVITY: usize = 6;
const GOAL: usize = 9;
const RANGES: usize = 11;

/// Flat policy observation: base linear velocity, base angular velocity,
/// projected gravity, body-frame goal and normalised ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Default for Observation {
    fn default() -> Self {
        Observation([0.0; OBS_DIM])
    }
}

impl Observation {
    pub fn new(lin_vel: [f64; 3], ang_vel: [f64; 3], gravity: [f64; 3], goal_body: [f64; 2], scan: &LidarScan) -> Self {
        let mut o = [0.0; OBS_DIM];
        o[LIN_VEL..LIN_VEL + 3].copy_from_slice(&lin_vel);
        o[ANG_VEL..ANG_VEL + 3].copy_from_slice(&ang_vel);
        o[GRAVITY..GRAVITY + 3].copy_from_slice(&gravity);
        let dist = goal_body[0].hypot(goal_body[1]);
        let scale = if dist > GOAL_CLIP_RADIUS { GOAL_CLIP_RADIUS / dist } else { 1.0 };
        o[GOAL] = goal_body[0] * scale;
        o[GOAL + 1] = goal_body[1] * scale;
        for (dst, r) in o[RANGES..].iter_mut().zip(scan.ranges.iter()) {
            *dst = r / MAX_RANGE;
        }
        Observation(o)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn lin_vel(&self) -> [f64; 3] {
        [self.0[LIN_VEL], self.0[LIN_VEL + 1], self.0[LIN_VEL + 2]]
    }

    pub fn ang_vel(&self) -> [f64; 3] {
        [self.0[ANG_VEL], self.0[ANG_VEL + 1], self.0[ANG_VEL + 2]]
    }

    pub fn gravity(&self) -> [f64; 3] {
        [self.0[GRAVITY], self.0[GRAVITY + 1], self.0[GRAVITY + 2]]
    }

    pub fn goal(&self) -> [f64; 2] {
        [self.0[GOAL], self.0[GOAL + 1]]
    }

    /// Ranges in `[MIN_RANGE/MAX_RANGE, 1]`.
    pub fn normalized_ranges(&self) -> &[f64] {
        &self.0[RANGES..]
    }
}

/// Ring of the `H` most recent observations, zero-filled before warm-up.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    frames: Vec<[f64; OBS_DIM]>,
    head: usize,
    pushed: usize,
}

impl HistoryBuffer {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "history length must be positive");
        HistoryBuffer {
            frames: vec![[0.0; OBS_DIM]; len],
            head: 0,
            pushed: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.frames.len()
    }

    pub fn is_warm(&self) -> bool {
        self.pushed >= self.frames.len()
    }

    pub fn push(&mut self, obs: &Observation) {
        self.frames[self.head] = obs.0;
        self.head = (self.head + 1) % self.frames.len();
        self.pushed += 1;
    }

    pub fn clear(&mut self) {
        for f in &mut self.frames {
            *f = [0.0; OBS_DIM];
        }
        self.head = 0;
        self.pushed = 0;
    }

    /// Writes the frames oldest-first into `out` (`H × OBS_DIM` values).
    pub fn flatten_into(&self, out: &mut [f64]) {
        let n = self.frames.len();
        assert_eq!(out.len(), n * OBS_DIM);
        for k in 0..n {
            let frame = &self.frames[(self.head + k) % n];
            out[k * OBS_DIM..(k + 1) * OBS_DIM].copy_from_slice(frame);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.frames.len() * OBS_DIM];
        self.flatten_into(&mut v);
        v
    }
}
