//! Run configuration: JSON documents checked against the default schema,
//! with environment-variable overrides.
//!
//! Any key can be overridden with `SHIELDNAV__<SECTION>__<KEY>=<json or text>`,
//! e.g. `SHIELDNAV__PPO__LEARNING_RATE=1e-4`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::acsi::AcsiConfig;
use crate::error::{Error, Result};
use crate::policy::NetConfig;
use crate::shield::ShieldParams;
use crate::world::{Difficulty, ScenarioSpec};

pub const ENV_PREFIX: &str = "SHIELDNAV__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub scenario: ScenarioSpec,
    pub difficulty: Difficulty,
    /// Inflated collision radius used while training (m).
    pub train_footprint: f64,
    pub tau_v: f64,
    pub sim_dt: f64,
    /// Dynamics substeps per policy tick.
    pub substeps: usize,
    pub goal_radius: f64,
    /// Continuous time inside the goal radius that ends a training episode (s).
    pub goal_stay: f64,
    pub episode_duration: f64,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    /// Policy ticks of position history used by the stuck detector.
    pub stuck_window: usize,
    /// Half-angle of the frontal clearance cone (rad).
    pub front_cone: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            scenario: ScenarioSpec::default(),
            difficulty: Difficulty::Easy,
            train_footprint: 0.40,
            tau_v: 0.2,
            sim_dt: 0.02,
            substeps: 5,
            goal_radius: 0.5,
            goal_stay: 2.0,
            episode_duration: 60.0,
            u_min: [-0.5, -0.8, -1.0],
            u_max: [1.7, 0.8, 1.0],
            stuck_window: 20,
            front_cone: std::f64::consts::PI / 6.0,
        }
    }
}

impl WorldConfig {
    pub fn policy_dt(&self) -> f64 {
        self.sim_dt * self.substeps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub num_envs: usize,
    pub rollout_steps: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub lambda_shield: f64,
    pub lambda_reg: f64,
    pub lambda_pi: f64,
    pub lambda_v: f64,
    /// Multiplier applied to environment rewards before advantage estimation.
    pub reward_scale: f64,
    /// Fixed number of chunks a minibatch is split into for parallel gradients.
    pub grad_chunks: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            num_envs: 64,
            rollout_steps: 64,
            iterations: 150,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 4,
            minibatches: 4,
            learning_rate: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_ratio: 0.2,
            entropy_coef: 0.003,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            lambda_shield: 0.1,
            lambda_reg: 1.0,
            lambda_pi: 0.05,
            lambda_v: 0.005,
            reward_scale: 0.01,
            grad_chunks: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationConfig {
    pub enabled: bool,
    pub ray_delay_ms: [f64; 2],
    pub gravity_noise: f64,
    pub lin_vel_noise: f64,
    pub ang_vel_noise: f64,
    pub friction_factor: [f64; 2],
    pub mass_kg: [f64; 2],
    /// Exteroception update period used to convert delays into ticks (ms).
    pub extero_period_ms: f64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            enabled: true,
            ray_delay_ms: [40.0, 80.0],
            gravity_noise: 0.05,
            lin_vel_noise: 0.1,
            ang_vel_noise: 0.1,
            friction_factor: [-0.2, 1.25],
            mass_kg: [-1.5, 1.5],
            extero_period_ms: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub footprint: f64,
    pub timeout: f64,
    pub goal_radius: f64,
    pub goal_stay: f64,
    pub trials: usize,
    pub seed_groups: usize,
    /// Apply observation noise and delays during evaluation.
    pub randomize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            footprint: 0.35,
            timeout: 30.0,
            goal_radius: 0.5,
            goal_stay: 0.5,
            trials: 100,
            seed_groups: 3,
            randomize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub no_acsi: bool,
    pub no_shield: bool,
    pub no_reg: bool,
}

impl Ablation {
    pub fn apply_flag(&mut self, flag: &str) -> Result<()> {
        match flag {
            "no-acsi" => self.no_acsi = true,
            "no-shield" => self.no_shield = true,
            "no-reg" => self.no_reg = true,
            other => return Err(Error::config(format!("unknown ablation `{other}` (expected no-acsi, no-shield or no-reg)"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub world: WorldConfig,
    pub shield: ShieldParams,
    pub acsi: AcsiConfig,
    pub net: NetConfig,
    pub ppo: PpoConfig,
    pub randomization: RandomizationConfig,
    pub eval: EvalConfig,
    pub ablation: Ablation,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Compares `doc` against the schema implied by `reference`, collecting every
/// unknown key and type mismatch.
fn check_schema(doc: &Value, reference: &Value, path: &str, problems: &mut Vec<String>) {
    match (doc, reference) {
        (Value::Object(d), Value::Object(r)) => {
            for (k, v) in d {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match r.get(k) {
                    None => problems.push(format!("unknown key `{p}`")),
                    Some(rv) => check_schema(v, rv, &p, problems),
                }
            }
        }
        (Value::Array(d), Value::Array(r)) => {
            if let Some(proto) = r.first() {
                for (i, v) in d.iter().enumerate() {
                    check_schema(v, proto, &format!("{path}[{i}]"), problems);
                }
            }
        }
        (d, r) if kind(d) == kind(r) => {}
        // The task of a scenario may be absent in the reference.
        (_, Value::Null) => {}
        (d, r) => problems.push(format!("key `{path}` should be a {} but is a {}", kind(r), kind(d))),
    }
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> std::result::Result<(), String> {
    let mut cur = doc;
    for (i, key) in path.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(format!("`{}` is not a section", path[..i].join("."))),
        };
        if i + 1 == path.len() {
            obj.insert(key.clone(), value);
            return Ok(());
        }
        cur = obj.entry(key.clone()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err("empty override path".into())
}

impl Config {
    /// Parses a config document (missing keys take defaults) and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_overrides(text, std::iter::empty::<(String, String)>())
    }

    /// Like [`Config::from_json`], applying `(VAR, value)` overrides whose
    /// names start with [`ENV_PREFIX`] before validation.
    pub fn from_json_with_overrides<I, K, V>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut doc: Value = if text.trim().is_empty() {
            Value::Object(Map::new())
        } else {
            serde_json::from_str(text).map_err(|e| Error::config(format!("malformed JSON: {e}")))?
        };
        if !doc.is_object() {
            return Err(Error::config(format!("top level must be an object, found a {}", kind(&doc))));
        }
        let mut problems = Vec::new();
        let mut overrides: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| k.as_ref().strip_prefix(ENV_PREFIX).map(|rest| (rest.to_string(), v.as_ref().to_string())))
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            let path: Vec<String> = key.split("__").map(|s| s.to_ascii_lowercase()).collect();
            if path.iter().any(|s| s.is_empty()) {
                problems.push(format!("malformed override variable `{ENV_PREFIX}{key}`"));
                continue;
            }
            let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
            if let Err(e) = set_path(&mut doc, &path, value) {
                problems.push(format!("override `{ENV_PREFIX}{key}`: {e}"));
            }
        }
        let reference = serde_json::to_value(Config::default())?;
        check_schema(&doc, &reference, "", &mut problems);
        if !problems.is_empty() {
            return Err(Error::Config { problems });
        }
        let config: Config = serde_json::from_value(doc).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_with_overrides(&text, std::env::vars())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialization is infallible");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut collect = |r: Result<()>| {
            if let Err(Error::Config { problems: p }) = r {
                problems.extend(p);
            }
        };
        collect(self.shield.validate());
        collect(self.acsi.validate());
        collect(self.net.validate());
        let w = &self.world;
        let positive = [
            ("world.train_footprint", w.train_footprint),
            ("world.sim_dt", w.sim_dt),
            ("world.goal_radius", w.goal_radius),
            ("world.goal_stay", w.goal_stay),
            ("world.episode_duration", w.episode_duration),
            ("world.scenario.room_size", w.scenario.room_size),
            ("world.scenario.spawn_clearance", w.scenario.spawn_clearance),
            ("ppo.learning_rate", self.ppo.learning_rate),
            ("ppo.clip_ratio", self.ppo.clip_ratio),
            ("ppo.adam_eps", self.ppo.adam_eps),
            ("ppo.max_grad_norm", self.ppo.max_grad_norm),
            ("ppo.reward_scale", self.ppo.reward_scale),
            ("eval.footprint", self.eval.footprint),
            ("eval.timeout", self.eval.timeout),
            ("eval.goal_radius", self.eval.goal_radius),
            ("randomization.extero_period_ms", self.randomization.extero_period_ms),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{name} must be finite and > 0 (got {v})"));
            }
        }
        let non_negative = [
            ("world.tau_v", w.tau_v),
            ("ppo.entropy_coef", self.ppo.entropy_coef),
            ("ppo.value_coef", self.ppo.value_coef),
            ("ppo.lambda_shield", self.ppo.lambda_shield),
            ("ppo.lambda_reg", self.ppo.lambda_reg),
            ("ppo.lambda_pi", self.ppo.lambda_pi),
            ("ppo.lambda_v", self.ppo.lambda_v),
            ("eval.goal_stay", self.eval.goal_stay),
            ("randomization.gravity_noise", self.randomization.gravity_noise),
            ("randomization.lin_vel_noise", self.randomization.lin_vel_noise),
            ("randomization.ang_vel_noise", self.randomization.ang_vel_noise),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} must be finite and >= 0 (got {v})"));
            }
        }
        let counts = [
            ("world.substeps", w.substeps),
            ("world.stuck_window", w.stuck_window),
            ("ppo.num_envs", self.ppo.num_envs),
            ("ppo.rollout_steps", self.ppo.rollout_steps),
            ("ppo.epochs", self.ppo.epochs),
            ("ppo.minibatches", self.ppo.minibatches),
            ("ppo.grad_chunks", self.ppo.grad_chunks),
            ("eval.trials", self.eval.trials),
            ("eval.seed_groups", self.eval.seed_groups),
        ];
        for (name, v) in counts {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [("ppo.gamma", self.ppo.gamma), ("ppo.gae_lambda", self.ppo.gae_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} must lie in [0, 1] (got {v})"));
            }
        }
        for (name, v) in [("ppo.adam_beta1", self.ppo.adam_beta1), ("ppo.adam_beta2", self.ppo.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                problems.push(format!("{name} must lie in [0, 1) (got {v})"));
            }
        }
        if (0..3).any(|j| w.u_min[j].partial_cmp(&w.u_max[j]).is_none_or(|o| o.is_gt())) {
            problems.push(format!("world.u_min {:?} must be <= world.u_max {:?} componentwise", w.u_min, w.u_max));
        }
        let r = &self.randomization;
        for (name, range) in [
            ("randomization.ray_delay_ms", r.ray_delay_ms),
            ("randomization.friction_factor", r.friction_factor),
            ("randomization.mass_kg", r.mass_kg),
        ] {
            if !(range[0].is_finite() && range[1].is_finite() && range[0] <= range[1]) {
                problems.push(format!("{name} must be an ordered finite range (got {range:?})"));
            }
        }
        if r.ray_delay_ms[0] < 0.0 {
            problems.push("randomization.ray_delay_ms must be non-negative".into());
        }
        if r.friction_factor[0] <= -1.0 {
            problems.push("randomization.friction_factor must stay above -1".into());
        }
        if w.scenario.obstacle_counts.iter().any(|&c| c > 1024) {
            problems.push("world.scenario.obstacle_counts must be <= 1024".into());
        }
        let s = &w.scenario;
        if !(s.circle_radius[0] > 0.0 && s.circle_radius[0] <= s.circle_radius[1])
            || !(s.box_half_extent[0] > 0.0 && s.box_half_extent[0] <= s.box_half_extent[1])
            || 2.0 * s.circle_radius[1].max(s.box_half_extent[1]) >= s.room_size
        {
            problems.push("world.scenario obstacle size ranges must be ordered, positive and fit in the room".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { problems })
        }
    }
}
