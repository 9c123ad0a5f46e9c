use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{hstack, inverse_softplus, sigmoid, softplus, Activation, Layout, Mlp, MlpCache};
use super::observation::OBS_DIM;
use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 3;
pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub history_len: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub backbone_hidden: Vec<usize>,
    pub nav_hidden: Vec<usize>,
    pub alpha_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Gain produced by the α head at initialisation.
    pub initial_alpha: f64,
    pub nav_output_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            history_len: 10,
            encoder_hidden: vec![128],
            latent_dim: 32,
            backbone_hidden: vec![256, 128],
            nav_hidden: vec![64],
            alpha_hidden: vec![32],
            critic_hidden: vec![256, 128],
            init_log_std: -0.5,
            initial_alpha: 1.0,
            nav_output_gain: 0.01,
        }
    }
}

impl NetConfig {
    /// Every hidden layer `width` wide; used for gradient checks.
    pub fn uniform(width: usize, history_len: usize) -> Self {
        NetConfig {
            history_len,
            encoder_hidden: vec![width],
            latent_dim: width,
            backbone_hidden: vec![width, width],
            nav_hidden: vec![width],
            alpha_hidden: vec![width],
            critic_hidden: vec![width, width],
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.history_len == 0 {
            problems.push("net.history_len must be >= 1".to_string());
        }
        if self.latent_dim == 0 {
            problems.push("net.latent_dim must be >= 1".to_string());
        }
        for (name, v) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("backbone_hidden", &self.backbone_hidden),
            ("nav_hidden", &self.nav_hidden),
            ("alpha_hidden", &self.alpha_hidden),
            ("critic_hidden", &self.critic_hidden),
        ] {
            if v.contains(&0) {
                problems.push(format!("net.{name} contains a zero width"));
            }
        }
        if self.backbone_hidden.is_empty() {
            problems.push("net.backbone_hidden must have at least one layer".to_string());
        }
        if !(self.initial_alpha.is_finite() && self.initial_alpha > 0.0) {
            problems.push("net.initial_alpha must be > 0".to_string());
        }
        if !self.init_log_std.is_finite() || !self.nav_output_gain.is_finite() {
            problems.push("net.init_log_std and net.nav_output_gain must be finite".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { problems })
        }
    }
}

/// Policy outputs for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub alpha: f64,
    pub value: f64,
}

/// Policy outputs for a batch.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub mean: Array2<f64>,
    pub log_std: [f64; ACTION_DIM],
    pub alpha_raw: Array1<f64>,
    pub alpha: Array1<f64>,
    pub value: Array1<f64>,
}

impl PolicyBatch {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn get(&self, i: usize) -> PolicyOutput {
        PolicyOutput {
            mean: [self.mean[[i, 0]], self.mean[[i, 1]], self.mean[[i, 2]]],
            log_std: self.log_std,
            alpha: self.alpha[i],
            value: self.value[i],
        }
    }
}

/// Tape for the heads evaluated on a joint state `x = [o, z]`.
#[derive(Debug, Clone)]
pub struct HeadTape {
    backbone: MlpCache,
    nav: MlpCache,
    alpha: MlpCache,
    critic: MlpCache,
    alpha_raw: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Tape {
    encoder: MlpCache,
    heads: HeadTape,
}

/// Loss gradients with respect to the network outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub mean: Array2<f64>,
    /// Gradient with respect to the clamped log-std, summed over the batch.
    pub log_std: [f64; ACTION_DIM],
    /// Gradient with respect to α (after the Softplus).
    pub alpha: Array1<f64>,
    pub value: Array1<f64>,
}

impl OutputGrads {
    pub fn zeros(batch: usize) -> Self {
        OutputGrads {
            mean: Array2::zeros((batch, ACTION_DIM)),
            log_std: [0.0; ACTION_DIM],
            alpha: Array1::zeros(batch),
            value: Array1::zeros(batch),
        }
    }
}

/// History encoder, shared backbone, navigation and α heads, and critic.
///
/// ```text
/// hist ──encoder──▶ z ─┐
///                  o ──┴─▶ x ──backbone──▶ f ──nav──▶ ū
///                          │                └─α head─▶ softplus ▶ α
///                          └──critic──▶ V
/// ```
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub config: NetConfig,
    pub layout: Layout,
    pub encoder: Mlp,
    pub backbone: Mlp,
    pub nav: Mlp,
    pub alpha_head: Mlp,
    pub critic: Mlp,
    log_std: usize,
}

fn sizes(input: usize, hidden: &[usize], output: Option<usize>) -> Vec<usize> {
    let mut v = vec![input];
    v.extend_from_slice(hidden);
    v.extend(output);
    v
}

/// Softplus floored at the smallest positive double: far below zero the raw
/// output would otherwise underflow to α = 0.
fn positive_alpha(raw: f64) -> f64 {
    softplus(raw).max(f64::MIN_POSITIVE)
}

impl ActorCritic {
    pub fn new(config: NetConfig) -> Self {
        let mut layout = Layout::default();
        let hist_dim = config.history_len * OBS_DIM;
        let joint = OBS_DIM + config.latent_dim;
        let encoder = Mlp::register(
            &mut layout,
            "encoder",
            &sizes(hist_dim, &config.encoder_hidden, Some(config.latent_dim)),
            Activation::Elu,
            Activation::Elu,
        );
        let backbone = Mlp::register(
            &mut layout,
            "backbone",
            &sizes(joint, &config.backbone_hidden, None),
            Activation::Elu,
            Activation::Elu,
        );
        let feat = backbone.output_dim();
        let nav = Mlp::register(
            &mut layout,
            "nav",
            &sizes(feat, &config.nav_hidden, Some(ACTION_DIM)),
            Activation::Elu,
            Activation::Identity,
        );
        let alpha_head = Mlp::register(
            &mut layout,
            "alpha",
            &sizes(feat, &config.alpha_hidden, Some(1)),
            Activation::Elu,
            Activation::Identity,
        );
        let critic = Mlp::register(
            &mut layout,
            "critic",
            &sizes(joint, &config.critic_hidden, Some(1)),
            Activation::Elu,
            Activation::Identity,
        );
        let log_std = layout.push("log_std", vec![ACTION_DIM]);
        ActorCritic {
            config,
            layout,
            encoder,
            backbone,
            nav,
            alpha_head,
            critic,
            log_std,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn history_dim(&self) -> usize {
        self.config.history_len * OBS_DIM
    }

    pub fn joint_dim(&self) -> usize {
        OBS_DIM + self.config.latent_dim
    }

    pub fn log_std_offset(&self) -> usize {
        self.log_std
    }

    /// Offsets covered by the α head (the "shield parameters").
    pub fn alpha_head_range(&self) -> std::ops::Range<usize> {
        let first = self.alpha_head.layers.first().expect("non-empty head");
        let last = self.alpha_head.layers.last().expect("non-empty head");
        first.weight..last.bias + last.fan_out
    }

    pub fn critic_range(&self) -> std::ops::Range<usize> {
        let first = self.critic.layers.first().expect("non-empty critic");
        let last = self.critic.layers.last().expect("non-empty critic");
        first.weight..last.bias + last.fan_out
    }

    /// Orthogonal initialisation with unit gain, a small final gain on the
    /// navigation head, and the α head biased to output `initial_alpha`.
    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params()];
        self.encoder.init_orthogonal(&mut p, 1.0, 1.0, rng);
        self.backbone.init_orthogonal(&mut p, 1.0, 1.0, rng);
        self.nav.init_orthogonal(&mut p, 1.0, self.config.nav_output_gain, rng);
        self.alpha_head.init_orthogonal(&mut p, 1.0, 0.01, rng);
        self.critic.init_orthogonal(&mut p, 1.0, 1.0, rng);
        let last = self.alpha_head.layers.last().expect("non-empty head");
        p[last.bias] = inverse_softplus(self.config.initial_alpha);
        for j in 0..ACTION_DIM {
            p[self.log_std + j] = self.config.init_log_std;
        }
        p
    }

    pub fn log_std(&self, params: &[f64]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|j| params[self.log_std + j].clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub fn encode(&self, params: &[f64], hist: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        self.encoder.forward(params, hist)
    }

    pub fn joint_state(obs: ArrayView2<'_, f64>, latent: ArrayView2<'_, f64>) -> Array2<f64> {
        hstack(obs, latent)
    }

    /// Evaluates backbone, both actor heads and the critic on joint states.
    pub fn heads(&self, params: &[f64], x: ArrayView2<'_, f64>) -> (PolicyBatch, HeadTape) {
        let (feat, backbone) = self.backbone.forward(params, x);
        let (mean, nav) = self.nav.forward(params, feat.view());
        let (raw, alpha) = self.alpha_head.forward(params, feat.view());
        let (value, critic) = self.critic.forward(params, x);
        let alpha_raw = raw.column(0).to_owned();
        let batch = PolicyBatch {
            mean,
            log_std: self.log_std(params),
            alpha: alpha_raw.mapv(positive_alpha),
            alpha_raw: alpha_raw.clone(),
            value: value.column(0).to_owned(),
        };
        let tape = HeadTape {
            backbone,
            nav,
            alpha,
            critic,
            alpha_raw,
        };
        (batch, tape)
    }

    /// Backward through [`ActorCritic::heads`]; returns `∂L/∂x`. The log-std
    /// gradient is not handled here.
    pub fn heads_backward(&self, params: &[f64], tape: &HeadTape, g: &OutputGrads, grads: &mut [f64]) -> Array2<f64> {
        let d_raw = Array2::from_shape_fn((g.alpha.len(), 1), |(i, _)| g.alpha[i] * sigmoid(tape.alpha_raw[i]));
        let mut d_feat = self.nav.backward(params, &tape.nav, g.mean.clone(), grads);
        d_feat += &self.alpha_head.backward(params, &tape.alpha, d_raw, grads);
        let mut dx = self.backbone.backward(params, &tape.backbone, d_feat, grads);
        let d_value = g.value.clone().insert_axis(Axis(1));
        dx += &self.critic.backward(params, &tape.critic, d_value, grads);
        dx
    }

    /// Accumulates the log-std gradient, respecting the clamp.
    pub fn log_std_backward(&self, params: &[f64], d_log_std: [f64; ACTION_DIM], grads: &mut [f64]) {
        for (j, d) in d_log_std.iter().enumerate() {
            let raw = params[self.log_std + j];
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                grads[self.log_std + j] += d;
            }
        }
    }

    pub fn encode_backward(&self, params: &[f64], cache: &MlpCache, d_latent: Array2<f64>, grads: &mut [f64]) {
        self.encoder.backward(params, cache, d_latent, grads);
    }

    /// Full forward pass recording a tape.
    pub fn forward(&self, params: &[f64], obs: ArrayView2<'_, f64>, hist: ArrayView2<'_, f64>) -> Result<(PolicyBatch, Tape)> {
        self.check_shapes(params, obs, hist)?;
        let (z, encoder) = self.encode(params, hist);
        let x = Self::joint_state(obs, z.view());
        let (out, heads) = self.heads(params, x.view());
        check_finite(&out)?;
        Ok((out, Tape { encoder, heads }))
    }

    pub fn infer(&self, params: &[f64], obs: ArrayView2<'_, f64>, hist: ArrayView2<'_, f64>) -> Result<PolicyBatch> {
        self.check_shapes(params, obs, hist)?;
        let z = self.encoder.infer(params, hist);
        let x = Self::joint_state(obs, z.view());
        let feat = self.backbone.infer(params, x.view());
        let mean = self.nav.infer(params, feat.view());
        let alpha_raw = self.alpha_head.infer(params, feat.view()).column(0).to_owned();
        let value = self.critic.infer(params, x.view()).column(0).to_owned();
        let out = PolicyBatch {
            mean,
            log_std: self.log_std(params),
            alpha: alpha_raw.mapv(positive_alpha),
            alpha_raw,
            value,
        };
        check_finite(&out)?;
        Ok(out)
    }

    /// Reverse pass through the whole network.
    pub fn backward(&self, params: &[f64], tape: &Tape, g: &OutputGrads, grads: &mut [f64]) -> Result<()> {
        if grads.len() != params.len() || params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "gradient buffer {} / params {} / layout {}",
                grads.len(),
                params.len(),
                self.num_params()
            )));
        }
        if g.mean.nrows() != tape.heads.alpha_raw.len() {
            return Err(Error::Shape(format!(
                "output gradients for {} samples, tape recorded {}",
                g.mean.nrows(),
                tape.heads.alpha_raw.len()
            )));
        }
        let dx = self.heads_backward(params, &tape.heads, g, grads);
        self.log_std_backward(params, g.log_std, grads);
        let dz = dx.slice(s![.., OBS_DIM..]).to_owned();
        self.encode_backward(params, &tape.encoder, dz, grads);
        Ok(())
    }

    fn check_shapes(&self, params: &[f64], obs: ArrayView2<'_, f64>, hist: ArrayView2<'_, f64>) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.num_params(), params.len())));
        }
        if obs.ncols() != OBS_DIM || hist.ncols() != self.history_dim() || obs.nrows() != hist.nrows() {
            return Err(Error::Shape(format!(
                "observation batch {:?} / history batch {:?}, expected (_, {OBS_DIM}) / (_, {})",
                obs.dim(),
                hist.dim(),
                self.history_dim()
            )));
        }
        Ok(())
    }
}

fn check_finite(out: &PolicyBatch) -> Result<()> {
    let bad = |name: &'static str, a: &[f64]| a.iter().position(|v| !v.is_finite()).map(|i| (name, i));
    let found = bad("mean", out.mean.as_slice().unwrap_or(&[]))
        .or_else(|| bad("alpha", out.alpha.as_slice().unwrap_or(&[])))
        .or_else(|| bad("value", out.value.as_slice().unwrap_or(&[])));
    match found {
        None => Ok(()),
        Some((name, i)) => Err(Error::NonFinite {
            stage: "policy forward",
            detail: format!("{name} has a non-finite entry at flat index {i}"),
        }),
    }
}
