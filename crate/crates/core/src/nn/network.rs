//! The conv/pool/dense stack: architecture descriptor, parameters, forward
//! pass with a backprop trace, and the analytic backward pass.
//!
//! Every conv stage is `conv -> relu -> 2x2 max pool`; every hidden dense
//! layer is `dense -> relu -> dropout`; the head is `dense -> sigmoid` with
//! one unit per code bit.

use std::fmt;

use rand::Rng;

use super::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, dropout, maxpool_backward, maxpool_forward,
    relu_backward_in_place, relu_in_place, sigmoid, ConvLayerParams, DenseLayerParams, Mode,
};
use crate::error::{invalid, shape_err, Result};
use crate::preprocess::GrayImage;
use crate::rng::RngState;
use crate::tensor::Tensor3;

/// Side of the non-overlapping pooling window after every conv layer.
pub const POOL_WINDOW: usize = 2;

/// Subtracted from every pixel on the way in, so normalized images in
/// `[0, 1]` reach the first layer centered on zero. Without it the
/// all-positive input leaves whole feature maps on or off together and
/// most of them die early in training.
pub const INPUT_CENTER: f64 = 0.5;

/// The single-map tensor the first layer sees for `image`.
pub fn input_tensor(image: &GrayImage) -> Tensor3 {
    let mut t = image.to_tensor();
    t.as_mut_slice().iter_mut().for_each(|v| *v -= INPUT_CENTER);
    t
}

/// Output maps and square filter side of one conv stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub maps: usize,
    pub filter: usize,
}

/// Layer sizes of a network. Inputs are single-channel square images.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub input_size: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub code_bits: usize,
    /// Drop probability applied after every hidden dense layer in training.
    pub dropout: f64,
}

/// Shape of one activation in the layer chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerShape {
    Maps(usize, usize, usize),
    Vector(usize),
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerShape::Maps(d, r, c) => write!(f, "{d}x{r}x{c}"),
            LayerShape::Vector(n) => write!(f, "{n}"),
        }
    }
}

impl Architecture {
    /// 64x64 input, conv 32@7x7, conv 64@7x7, two 2000-unit dense layers,
    /// dropout 0.5, `code_bits` sigmoid outputs.
    pub fn full(code_bits: usize) -> Self {
        Self {
            input_size: 64,
            convs: vec![ConvSpec { maps: 32, filter: 7 }, ConvSpec { maps: 64, filter: 7 }],
            hidden: vec![2000, 2000],
            code_bits,
            dropout: 0.5,
        }
    }

    /// Activation shapes after every conv, every pool, the flatten step,
    /// every hidden layer and the output layer.
    pub fn shape_chain(&self) -> Result<Vec<LayerShape>> {
        if self.input_size == 0 || self.code_bits == 0 {
            return invalid("input size and code bits must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let mut chain = Vec::new();
        let (mut d, mut n) = (1, self.input_size);
        for (l, spec) in self.convs.iter().enumerate() {
            if spec.maps == 0 || spec.filter == 0 {
                return invalid(format!("conv stage {l} has zero maps or filter size"));
            }
            if spec.filter > n {
                return shape_err(format!("conv stage {l}: filter {} exceeds input {n}", spec.filter));
            }
            n = n - spec.filter + 1;
            d = spec.maps;
            chain.push(LayerShape::Maps(d, n, n));
            if n < POOL_WINDOW {
                return shape_err(format!("conv stage {l}: {n}x{n} too small to pool"));
            }
            n /= POOL_WINDOW;
            chain.push(LayerShape::Maps(d, n, n));
        }
        chain.push(LayerShape::Vector(d * n * n));
        for (l, &h) in self.hidden.iter().enumerate() {
            if h == 0 {
                return invalid(format!("hidden layer {l} has zero units"));
            }
            chain.push(LayerShape::Vector(h));
        }
        chain.push(LayerShape::Vector(self.code_bits));
        Ok(chain)
    }

    pub fn flat_len(&self) -> Result<usize> {
        let chain = self.shape_chain()?;
        match chain[2 * self.convs.len()] {
            LayerShape::Vector(n) => Ok(n),
            LayerShape::Maps(..) => unreachable!(),
        }
    }
}

/// All learnable weights of a network plus the architecture they realize.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub convs: Vec<ConvLayerParams>,
    pub hidden: Vec<DenseLayerParams>,
    pub output: DenseLayerParams,
}

impl NetworkParams {
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        let flat = arch.flat_len()?;
        let mut in_maps = 1;
        let convs = arch
            .convs
            .iter()
            .map(|s| {
                let p = ConvLayerParams::zeros(s.maps, in_maps, s.filter, s.filter);
                in_maps = s.maps;
                p
            })
            .collect();
        let mut in_dim = flat;
        let hidden = arch
            .hidden
            .iter()
            .map(|&h| {
                let p = DenseLayerParams::zeros(h, in_dim);
                in_dim = h;
                p
            })
            .collect();
        let output = DenseLayerParams::zeros(arch.code_bits, in_dim);
        Ok(Self { arch: arch.clone(), convs, hidden, output })
    }

    /// Parameter blocks in storage order: for each conv layer its filters
    /// then biases, for each hidden layer its weights then biases, then the
    /// output weights and biases.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            v.push(&c.filters);
            v.push(&c.biases);
        }
        for h in self.hidden.iter().chain(std::iter::once(&self.output)) {
            v.push(&h.weights);
            v.push(&h.biases);
        }
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            v.push(&mut c.filters);
            v.push(&mut c.biases);
        }
        for h in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            v.push(&mut h.weights);
            v.push(&mut h.biases);
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Checks that every block matches the architecture.
    pub fn validate(&self) -> Result<()> {
        let expect = NetworkParams::zeros(&self.arch)?;
        let ok = expect.blocks().iter().zip(self.blocks()).all(|(a, b)| a.len() == b.len())
            && expect.convs.len() == self.convs.len()
            && expect.hidden.len() == self.hidden.len();
        if !ok {
            return shape_err("parameters do not match their architecture");
        }
        Ok(())
    }

    /// `self += alpha * other`, blockwise.
    pub fn add_scaled(&mut self, alpha: f64, other: &NetworkParams) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            super::layers::axpy(alpha, src, dst);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= alpha);
        }
    }
}

/// Half-width of the uniform init distribution is `INIT_GAIN / sqrt(fan_in)`.
pub const INIT_GAIN: f64 = 2.449_489_742_783_178; // sqrt(6)

/// Weights uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, biases zero.
pub fn init_params(arch: &Architecture, rng: &mut RngState) -> Result<NetworkParams> {
    let mut p = NetworkParams::zeros(arch)?;
    let fill = |w: &mut [f64], fan_in: usize, rng: &mut RngState| {
        let a = INIT_GAIN / (fan_in as f64).sqrt();
        w.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
    };
    for c in &mut p.convs {
        let fan_in = c.patch_len();
        fill(&mut c.filters, fan_in, rng);
    }
    for h in p.hidden.iter_mut().chain(std::iter::once(&mut p.output)) {
        let fan_in = h.in_dim;
        fill(&mut h.weights, fan_in, rng);
    }
    Ok(p)
}

/// Cached state of one conv stage.
#[derive(Clone, Debug)]
pub struct ConvTrace {
    pub input: Tensor3,
    /// Rectified conv output, before pooling.
    pub rectified: Tensor3,
    pub pool_indices: Vec<usize>,
    pub pooled_shape: (usize, usize, usize),
}

/// Cached state of one hidden dense stage.
#[derive(Clone, Debug)]
pub struct DenseTrace {
    pub input: Vec<f64>,
    /// Rectified activations before dropout.
    pub rectified: Vec<f64>,
    /// `true` for kept units; `None` in inference mode.
    pub mask: Option<Vec<bool>>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub convs: Vec<ConvTrace>,
    pub hidden: Vec<DenseTrace>,
    /// Input to the output layer.
    pub head_input: Vec<f64>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

impl ForwardTrace {
    /// The shapes actually produced by this pass, in the same order as
    /// [`Architecture::shape_chain`].
    pub fn shapes(&self) -> Vec<LayerShape> {
        let mut v = Vec::new();
        for c in &self.convs {
            let (d, r, k) = c.rectified.shape();
            v.push(LayerShape::Maps(d, r, k));
            let (d, r, k) = c.pooled_shape;
            v.push(LayerShape::Maps(d, r, k));
        }
        let flat = self.hidden.first().map(|h| h.input.len()).unwrap_or(self.head_input.len());
        v.push(LayerShape::Vector(flat));
        for h in &self.hidden {
            v.push(LayerShape::Vector(h.rectified.len()));
        }
        v.push(LayerShape::Vector(self.output.len()));
        v
    }

    /// Identifies the piecewise-linear region the pass landed in: ReLU
    /// on/off pattern, pool winners and dropout masks.
    pub fn region_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for c in &self.convs {
            sig.extend(c.rectified.as_slice().iter().map(|&v| (v > 0.0) as u64));
            sig.extend(c.pool_indices.iter().map(|&i| i as u64));
        }
        for h in &self.hidden {
            sig.extend(h.rectified.iter().map(|&v| (v > 0.0) as u64));
            if let Some(m) = &h.mask {
                sig.extend(m.iter().map(|&k| k as u64));
            }
        }
        sig
    }
}

fn forward_impl(
    input: Tensor3,
    params: &NetworkParams,
    mode: Mode,
    rng: &mut RngState,
    record: bool,
) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
    let arch = &params.arch;
    if input.shape() != (1, arch.input_size, arch.input_size) {
        return shape_err(format!("network expects 1x{n}x{n} input, got {:?}", input.shape(), n = arch.input_size));
    }
    let mut conv_traces = Vec::with_capacity(params.convs.len());
    let mut x = input;
    for conv in &params.convs {
        let mut y = conv_forward(&x, conv)?;
        relu_in_place(y.as_mut_slice());
        let (pooled, idx) = maxpool_forward(&y, POOL_WINDOW)?;
        if record {
            conv_traces.push(ConvTrace { input: x, rectified: y, pool_indices: idx, pooled_shape: pooled.shape() });
        }
        x = pooled;
    }
    let mut v = x.into_vec();
    let mut dense_traces = Vec::with_capacity(params.hidden.len());
    for layer in &params.hidden {
        let mut h = dense_forward(&v, layer)?;
        relu_in_place(&mut h);
        let (out, mask) = dropout(&h, arch.dropout, rng, mode)?;
        if record {
            dense_traces.push(DenseTrace { input: v, rectified: h, mask });
        }
        v = out;
    }
    let logits = dense_forward(&v, &params.output)?;
    let output = sigmoid(&logits);
    let trace = record.then(|| ForwardTrace {
        mode,
        convs: conv_traces,
        hidden: dense_traces,
        head_input: v,
        logits,
        output: output.clone(),
    });
    Ok((output, trace))
}

/// Runs the full stack on one image and returns the sigmoid outputs with
/// the trace needed by [`network_backward`].
pub fn network_forward(
    image: &GrayImage,
    params: &NetworkParams,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Vec<f64>, ForwardTrace)> {
    forward_tensor(input_tensor(image), params, mode, rng)
}

pub fn forward_tensor(
    input: Tensor3,
    params: &NetworkParams,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Vec<f64>, ForwardTrace)> {
    let (out, trace) = forward_impl(input, params, mode, rng, true)?;
    Ok((out, trace.expect("recorded trace")))
}

/// Inference-mode outputs without building a trace.
pub fn predict(image: &GrayImage, params: &NetworkParams) -> Result<Vec<f64>> {
    // Inference never draws from the generator.
    let mut rng = RngState::new(0);
    Ok(forward_impl(input_tensor(image), params, Mode::Infer, &mut rng, false)?.0)
}

/// Gradient of the summed binary cross-entropy of one sample with respect
/// to every parameter.
pub fn network_backward(trace: &ForwardTrace, target: &[bool], params: &NetworkParams) -> Result<NetworkParams> {
    let mut grads = NetworkParams::zeros(&params.arch)?;
    accumulate_backward(trace, target, params, &mut grads)?;
    Ok(grads)
}

/// Adds one sample's gradient into `grads`.
pub fn accumulate_backward(
    trace: &ForwardTrace,
    target: &[bool],
    params: &NetworkParams,
    grads: &mut NetworkParams,
) -> Result<()> {
    if trace.mode != Mode::Train {
        return invalid("backward pass needs a training-mode trace");
    }
    if target.len() != trace.output.len() || target.len() != params.arch.code_bits {
        return shape_err(format!("target has {} bits, network outputs {}", target.len(), trace.output.len()));
    }
    if trace.convs.len() != params.convs.len() || trace.hidden.len() != params.hidden.len() {
        return shape_err("trace does not match parameter layout");
    }
    // d(bce)/d(logit) for a sigmoid output.
    let dlogits: Vec<f64> = trace.output.iter().zip(target).map(|(&t, &c)| t - if c { 1.0 } else { 0.0 }).collect();
    let want_flat_grad = !params.convs.is_empty() || !params.hidden.is_empty();
    let mut g = dense_backward(&trace.head_input, &params.output, &dlogits, &mut grads.output, want_flat_grad)?;

    let keep_scale = 1.0 / (1.0 - params.arch.dropout);
    for (l, (layer, tr)) in params.hidden.iter().zip(&trace.hidden).enumerate().rev() {
        let mut gh = g.take().expect("hidden gradient");
        if let Some(mask) = &tr.mask {
            for (v, &k) in gh.iter_mut().zip(mask) {
                *v = if k { *v * keep_scale } else { 0.0 };
            }
        }
        relu_backward_in_place(&tr.rectified, &mut gh);
        let need = l > 0 || !params.convs.is_empty();
        g = dense_backward(&tr.input, layer, &gh, &mut grads.hidden[l], need)?;
    }

    if let Some(last) = trace.convs.last() {
        let (d, r, c) = last.pooled_shape;
        let mut gt = Tensor3::from_vec(d, r, c, g.take().expect("flat gradient"))?;
        for (l, (conv, tr)) in params.convs.iter().zip(&trace.convs).enumerate().rev() {
            let mut grect = maxpool_backward(&gt, &tr.pool_indices, tr.rectified.shape())?;
            relu_backward_in_place(tr.rectified.as_slice(), grect.as_mut_slice());
            let cg = conv_backward(&tr.input, conv, &grect, l > 0)?;
            let dst = &mut grads.convs[l];
            dst.filters.iter_mut().zip(&cg.filters).for_each(|(a, b)| *a += b);
            dst.biases.iter_mut().zip(&cg.biases).for_each(|(a, b)| *a += b);
            if let Some(gi) = cg.input {
                gt = gi;
            }
        }
    }
    Ok(())
}
