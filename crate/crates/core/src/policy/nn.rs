//! Minimal batched MLPs over a flat parameter vector.
//!
//! Every weight matrix and bias lives in one contiguous `Vec<f64>`, addressed
//! through a [`Layout`]. Forward passes return a cache (the tape) holding each
//! layer's input and pre-activation; backward passes consume it, accumulate
//! into a gradient vector of the same layout and return the input gradient.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    len: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let offset = self.len;
        let spec = TensorSpec {
            name: name.into(),
            shape,
            offset,
        };
        self.len += spec.len();
        self.tensors.push(spec);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Elu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the `fan_out × fan_in` weight matrix.
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn weight_view<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.fan_out, self.fan_in), &params[self.weight..self.weight + self.fan_out * self.fan_in]).expect("layout guarantees shape")
    }

    pub fn bias_view<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[self.bias..self.bias + self.fan_out])
    }

    fn weight_view_mut<'a>(&self, params: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.fan_out, self.fan_in), &mut params[self.weight..self.weight + self.fan_out * self.fan_in])
            .expect("layout guarantees shape")
    }

    fn bias_view_mut<'a>(&self, params: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut params[self.bias..self.bias + self.fan_out])
    }
}

/// Activation applied after each hidden layer and after the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Tape of one MLP forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// Registers the layers `sizes[0] → sizes[1] → … → sizes[n]` in `layout`.
    pub fn register(layout: &mut Layout, name: &str, sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = layout.push(format!("{name}.{i}.weight"), vec![w[1], w[0]]);
                let bias = layout.push(format!("{name}.{i}.bias"), vec![w[1]]);
                Linear {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight,
                    bias,
                }
            })
            .collect();
        Mlp { layers, hidden, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        debug_assert_eq!(x.ncols(), self.input_dim());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight_view(params).t());
            z += &layer.bias_view(params);
            let act = self.activation(i);
            let out = z.mapv(|v| act.apply(v));
            inputs.push(current);
            pre.push(z);
            current = out;
        }
        (current, MlpCache { inputs, pre })
    }

    /// Forward pass without recording a tape.
    pub fn infer(&self, params: &[f64], x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut current = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight_view(params).t());
            z += &layer.bias_view(params);
            let act = self.activation(i);
            z.mapv_inplace(|v| act.apply(v));
            current = z;
        }
        current
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, dy: Array2<f64>, grads: &mut [f64]) -> Array2<f64> {
        let mut delta = dy;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = self.activation(i);
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta).and(&cache.pre[i]).for_each(|d, &z| *d *= act.derivative(z));
            }
            {
                let mut gw = layer.weight_view_mut(grads);
                gw += &delta.t().dot(&cache.inputs[i]);
            }
            {
                let mut gb = layer.bias_view_mut(grads);
                gb += &delta.sum_axis(Axis(0));
            }
            delta = delta.dot(&layer.weight_view(params));
        }
        delta
    }

    /// Orthogonal initialisation: hidden layers use `gain`, the final layer
    /// `output_gain`. Biases start at zero.
    pub fn init_orthogonal(&self, params: &mut [f64], gain: f64, output_gain: f64, rng: &mut impl Rng) {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let g = if i + 1 == n { output_gain } else { gain };
            let q = orthogonal(layer.fan_out, layer.fan_in, rng);
            let mut w = layer.weight_view_mut(params);
            w.assign(&(q * g));
            layer.bias_view_mut(params).fill(0.0);
        }
    }
}

/// Random `rows × cols` matrix with orthonormal rows (if `rows ≤ cols`) or
/// orthonormal columns, by modified Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let (long, short) = if rows <= cols { (cols, rows) } else { (rows, cols) };
    // `short` vectors of length `long`.
    let mut basis = Array2::<f64>::zeros((short, long));
    for mut v in basis.rows_mut() {
        for x in v.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
    }
    for i in 0..short {
        for j in 0..i {
            let (done, mut rest) = basis.view_mut().split_at(Axis(0), i);
            let prev = done.row(j);
            let mut cur = rest.row_mut(0);
            let proj = cur.dot(&prev);
            cur.scaled_add(-proj, &prev);
        }
        let mut cur = basis.row_mut(i);
        let norm = cur.dot(&cur).sqrt();
        if norm > 1e-12 {
            cur /= norm;
        }
    }
    if rows <= cols {
        basis
    } else {
        basis.t().to_owned()
    }
}

/// Horizontal concatenation `[a, b]`.
pub fn hstack(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(&a);
    out.slice_mut(s![.., a.ncols()..]).assign(&b);
    out
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn column(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(rng: &mut ChaCha8Rng) -> (Mlp, Vec<f64>) {
        let mut layout = Layout::default();
        let mlp = Mlp::register(&mut layout, "m", &[4, 6, 5, 2], Activation::Elu, Activation::Identity);
        let mut p = vec![0.0; layout.len()];
        mlp.init_orthogonal(&mut p, 1.0, 1.0, rng);
        for v in p.iter_mut() {
            *v += 0.1 * (rng.random::<f64>() - 0.5);
        }
        (mlp, p)
    }

    #[test]
    fn orthogonal_rows_and_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(4, 9), (9, 4), (5, 5)] {
            let q = orthogonal(r, c, &mut rng);
            let gram = if r <= c { q.dot(&q.t()) } else { q.t().dot(&q) };
            for ((i, j), v) in gram.indexed_iter() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut layout = Layout::default();
        let mlp = Mlp::register(&mut layout, "m", &[3, 2], Activation::Elu, Activation::Identity);
        let mut p = vec![0.0; layout.len()];
        p[mlp.layers[0].bias] = 0.25;
        p[mlp.layers[0].bias + 1] = -1.5;
        let y = mlp.infer(&p, Array2::zeros((1, 3)).view());
        assert_eq!(y.row(0).to_vec(), vec![0.25, -1.5]);
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mlp, p) = net(&mut rng);
        let x = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let w = Array2::from_shape_fn((3, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let loss = |p: &[f64], x: &Array2<f64>| (mlp.infer(p, x.view()) * &w).sum();
        let (_, cache) = mlp.forward(&p, x.view());
        let mut grads = vec![0.0; p.len()];
        let dx = mlp.backward(&p, &cache, w.clone(), &mut grads);
        let step = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += step;
            b[i] -= step;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * step);
            assert!((fd - grads[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grads[i]);
        }
        for ((r, c), g) in dx.indexed_iter() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[[r, c]] += step;
            b[[r, c]] -= step;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * step);
            assert!((fd - g).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn softplus_helpers() {
        assert!((softplus(inverse_softplus(1.0)) - 1.0).abs() < 1e-14);
        assert!(softplus(-50.0) > 0.0);
        assert_eq!(softplus(100.0), 100.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
