//! Multilayer perceptrons with explicit reverse-mode gradients, the
//! tanh-squashed Gaussian policy head and first-order parameter updates.
//!
//! All passes are batched: rows are samples, columns are features. Weights
//! are stored `(in, out)` so a layer is `x·W + b`.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// Smooth rectifier `ln(1 + e^x)`.
    Softplus,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Softplus => 3,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Softplus,
            other => return Err(Error::Checkpoint(format!("unknown activation code {other}"))),
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => crate::constraints::sigmoid(z),
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(in, out)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    /// One activation per layer; the last one is the output activation.
    activations: Vec<Activation>,
}

/// Gradients with the same layout as the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            layers: mlp.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// Flattened view in checkpoint order (per layer: weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(Dense::len).sum());
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Domain(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        let activations = (0..n).map(|i| if i + 1 == n { output } else { hidden }).collect();
        Ok(Mlp { layers, activations })
    }

    pub fn from_layers(layers: Vec<Dense>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() || layers.len() != activations.len() {
            return Err(Error::Shape {
                context: "mlp activations",
                expected: layers.len(),
                actual: activations.len(),
            });
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape {
                    context: "mlp layer chain",
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape {
                    context: "mlp bias",
                    expected: l.outputs(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(Mlp { layers, activations })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Overwrites every parameter from a flat slice in [`Mlp::flatten`] order.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape {
                context: "flat parameters",
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// Output for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.output.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape {
                context: "mlp input",
                expected: self.input_dim(),
                actual: input.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let z = x.dot(&layer.weights) + &layer.bias;
            let y = z.mapv(|v| act.apply(v));
            inputs.push(x);
            pre_activations.push(z);
            x = y;
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
            output: x,
        })
    }

    /// Reverse pass for the loss whose gradient w.r.t. the output is
    /// `grad_output`. Returns parameter gradients and the input gradient.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        grad_output: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::Shape {
                context: "mlp upstream gradient",
                expected: cache.output.len(),
                actual: grad_output.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let act = self.activations[i];
            let z = &cache.pre_activations[i];
            let y = if i + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[i + 1]
            };
            if act != Activation::Identity {
                Zip::from(&mut delta)
                    .and(z)
                    .and(y)
                    .for_each(|d, &z, &y| *d *= act.derivative(z, y));
            }
            grads.push(Dense {
                weights: cache.inputs[i].t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            delta = delta.dot(&self.layers[i].weights.t());
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// `self ← ρ·self + (1 − ρ)·online`.
    pub fn polyak_from(&mut self, online: &Mlp, rho: f64) -> Result<()> {
        if self.layers.len() != online.layers.len() {
            return Err(Error::Shape {
                context: "polyak layer count",
                expected: self.layers.len(),
                actual: online.layers.len(),
            });
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            if t.weights.dim() != o.weights.dim() || t.bias.len() != o.bias.len() {
                return Err(Error::Shape {
                    context: "polyak layer shape",
                    expected: t.len(),
                    actual: o.len(),
                });
            }
            Zip::from(&mut t.weights)
                .and(&o.weights)
                .for_each(|t, &o| *t = rho * *t + (1.0 - rho) * o);
            Zip::from(&mut t.bias)
                .and(&o.bias)
                .for_each(|t, &o| *t = rho * *t + (1.0 - rho) * o);
        }
        Ok(())
    }
}

fn check_grad_shapes(params: &Mlp, grads: &Gradients) -> Result<()> {
    if params.layers.len() != grads.layers.len() {
        return Err(Error::Shape {
            context: "gradient layer count",
            expected: params.layers.len(),
            actual: grads.layers.len(),
        });
    }
    for (p, g) in params.layers.iter().zip(&grads.layers) {
        if p.weights.dim() != g.weights.dim() || p.bias.len() != g.bias.len() {
            return Err(Error::Shape {
                context: "gradient layer shape",
                expected: p.len(),
                actual: g.len(),
            });
        }
    }
    Ok(())
}

/// Plain gradient step `params ← params − lr·grads`.
pub fn apply_gradients(params: &mut Mlp, grads: &Gradients, learn_rate: f64) -> Result<()> {
    check_grad_shapes(params, grads)?;
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        p.weights.scaled_add(-learn_rate, &g.weights);
        p.bias.scaled_add(-learn_rate, &g.bias);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learn_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: i32,
    first: Vec<Dense>,
    second: Vec<Dense>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learn_rate: f64, params: &Mlp) -> Self {
        let zeros = || Gradients::zeros_like(params).layers;
        Optimizer {
            kind,
            learn_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn adam(learn_rate: f64, params: &Mlp) -> Self {
        Self::new(OptimizerKind::Adam, learn_rate, params)
    }

    /// Descends along `grads`.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => apply_gradients(params, grads, self.learn_rate),
            OptimizerKind::Adam => {
                check_grad_shapes(params, grads)?;
                self.steps += 1;
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let c1 = 1.0 - b1.powi(self.steps);
                let c2 = 1.0 - b2.powi(self.steps);
                let lr = self.learn_rate;
                for (((p, g), m), v) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    };
                    Zip::from(&mut p.weights)
                        .and(&g.weights)
                        .and(&mut m.weights)
                        .and(&mut v.weights)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                    Zip::from(&mut p.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(|p, &g, m, v| update(p, g, m, v));
                }
                Ok(())
            }
        }
    }
}

/// A batch of reparameterized draws from the tanh-squashed Gaussian.
///
/// The network head emits `[mean | log_std]`; `log_std` is clamped to
/// `[LOG_STD_MIN, LOG_STD_MAX]` (zero gradient outside the clamp).
#[derive(Debug, Clone)]
pub struct GaussianPolicyOutput {
    pub mean: Array2<f64>,
    pub log_std: Array2<f64>,
    /// Whether the raw log-std was inside the clamp range.
    log_std_free: Array2<bool>,
    pub noise: Array2<f64>,
    pub pre_squash: Array2<f64>,
    pub action: Array2<f64>,
    pub log_prob: Array1<f64>,
}

/// `log(1 − tanh(u)²)` in the overflow-free form `2·(ln 2 − u − softplus(−2u))`.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

impl GaussianPolicyOutput {
    /// Builds the squashed sample for explicit standard-normal `noise`.
    pub fn from_head(head: ArrayView2<f64>, noise: Array2<f64>) -> Result<Self> {
        let n = noise.ncols();
        if head.ncols() != 2 * n || head.nrows() != noise.nrows() {
            return Err(Error::Shape {
                context: "gaussian head",
                expected: 2 * n,
                actual: head.ncols(),
            });
        }
        let mean = head.slice(ndarray::s![.., ..n]).to_owned();
        let raw_log_std = head.slice(ndarray::s![.., n..]);
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let log_std_free = raw_log_std.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let pre_squash = &mean + &(log_std.mapv(f64::exp) * &noise);
        let action = pre_squash.mapv(f64::tanh);
        let mut log_prob = Array1::zeros(noise.nrows());
        for (i, lp) in log_prob.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                let e = noise[[i, j]];
                acc += -0.5 * e * e - log_std[[i, j]] - HALF_LN_2PI - log_tanh_jacobian(pre_squash[[i, j]]);
            }
            *lp = acc;
        }
        Ok(GaussianPolicyOutput {
            mean,
            log_std,
            log_std_free,
            noise,
            pre_squash,
            action,
            log_prob,
        })
    }

    /// Gradient w.r.t. the head output `[mean | log_std]` of a loss with
    /// partials `grad_action` (per action entry) and `grad_log_prob` (per row).
    pub fn backward(&self, grad_action: ArrayView2<f64>, grad_log_prob: ArrayView1<f64>) -> Array2<f64> {
        let (rows, n) = self.action.dim();
        let mut out = Array2::zeros((rows, 2 * n));
        for i in 0..rows {
            let gl = grad_log_prob[i];
            for j in 0..n {
                let a = self.action[[i, j]];
                // d/du of [L(tanh u) - gl*log(1 - tanh^2 u)]
                let du = grad_action[[i, j]] * (1.0 - a * a) + gl * 2.0 * a;
                out[[i, j]] = du;
                if self.log_std_free[[i, j]] {
                    let std = self.log_std[[i, j]].exp();
                    out[[i, n + j]] = du * std * self.noise[[i, j]] - gl;
                }
            }
        }
        out
    }
}

/// Draws `ℵ ~ N(0, I)` and squashes `mean + std·ℵ` through tanh.
pub fn sample_squashed_gaussian<R: Rng + ?Sized>(
    head: ArrayView2<f64>,
    rng: &mut R,
) -> Result<GaussianPolicyOutput> {
    let n = head.ncols() / 2;
    let noise = Array2::from_shape_fn((head.nrows(), n), |_| StandardNormal.sample(rng));
    GaussianPolicyOutput::from_head(head, noise)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SCFLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes named networks in the versioned checkpoint layout (see README).
pub fn write_checkpoint<W: Write>(mut out: W, networks: &[(&str, &Mlp)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(networks.len() as u32).to_le_bytes());
    for (name, mlp) in networks {
        let name = name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(mlp.layers.len() as u32).to_le_bytes());
        for (layer, act) in mlp.layers.iter().zip(&mlp.activations) {
            buf.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
            buf.push(act.code());
        }
        for v in mlp.flatten() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    out.write_all(&buf)?;
    out.write_all(digest.as_slice())?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a checkpoint written by [`write_checkpoint`], verifying its checksum.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Mlp)>> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    if data.len() < 32 + 16 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, checksum) = data.split_at(data.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut cur = Cursor { data: body, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("network name is not utf-8".into()))?;
        let layers = cur.u32()? as usize;
        let mut shapes = Vec::with_capacity(layers);
        for _ in 0..layers {
            let inputs = cur.u32()? as usize;
            let outputs = cur.u32()? as usize;
            let act = Activation::from_code(cur.take(1)?[0])?;
            shapes.push((inputs, outputs, act));
        }
        let mut dense = Vec::with_capacity(layers);
        let mut acts = Vec::with_capacity(layers);
        for (inputs, outputs, act) in shapes {
            let weights = (0..inputs * outputs).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..outputs).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            dense.push(Dense {
                weights: Array2::from_shape_vec((inputs, outputs), weights)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
                bias: Array1::from(bias),
            });
            acts.push(act);
        }
        out.push((name, Mlp::from_layers(dense, acts)?));
    }
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}
