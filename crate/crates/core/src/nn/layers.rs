//! Layer primitives: valid cross-correlation, ReLU, non-overlapping max
//! pooling, fully connected layers, output heads, losses and dropout.
//!
//! Forward functions return pre-activations; the caller applies the
//! nonlinearity. Backward functions take the gradient of the loss with
//! respect to the layer output.

use rand::Rng;

use super::gemm::gemm;
use crate::error::{invalid, shape_err, Result};
use crate::rng::RngState;
use crate::tensor::Tensor3;

/// Probabilities are clamped to `[LOG_EPS, 1 - LOG_EPS]` before taking logs.
pub const LOG_EPS: f64 = 1e-12;

/// Whether a forward pass is part of training (dropout active, trace
/// recorded) or inference (deterministic, no dropout).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Filter bank of one convolution layer.
///
/// `filters` is indexed `(out_map, in_map, row, col)` row-major, which is
/// also the row layout of the `out_maps x (in_maps * f1 * f2)` matrix used
/// by the im2col product.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerParams {
    pub out_maps: usize,
    pub in_maps: usize,
    pub f1: usize,
    pub f2: usize,
    pub filters: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(out_maps: usize, in_maps: usize, f1: usize, f2: usize) -> Self {
        Self {
            out_maps,
            in_maps,
            f1,
            f2,
            filters: vec![0.0; out_maps * in_maps * f1 * f2],
            biases: vec![0.0; out_maps],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_maps * self.f1 * self.f2
    }

    #[inline]
    pub fn filter_index(&self, out_map: usize, in_map: usize, row: usize, col: usize) -> usize {
        ((out_map * self.in_maps + in_map) * self.f1 + row) * self.f2 + col
    }

    pub fn check(&self) -> Result<()> {
        if self.out_maps == 0 || self.in_maps == 0 || self.f1 == 0 || self.f2 == 0 {
            return shape_err("conv layer dims must be >= 1");
        }
        if self.filters.len() != self.out_maps * self.patch_len() || self.biases.len() != self.out_maps {
            return shape_err("conv parameter storage does not match declared dims");
        }
        Ok(())
    }
}

/// Weights (`out_dim x in_dim`, row-major) and biases of a dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayerParams {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { out_dim, in_dim, weights: vec![0.0; out_dim * in_dim], biases: vec![0.0; out_dim] }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn check(&self) -> Result<()> {
        if self.weights.len() != self.out_dim * self.in_dim || self.biases.len() != self.out_dim {
            return shape_err("dense parameter storage does not match declared dims");
        }
        Ok(())
    }
}

fn check_conv_input(input: &Tensor3, params: &ConvLayerParams) -> Result<()> {
    params.check()?;
    if input.maps() != params.in_maps {
        return shape_err(format!("conv expects {} input maps, got {}", params.in_maps, input.maps()));
    }
    if input.rows() < params.f1 || input.cols() < params.f2 {
        return shape_err(format!(
            "input {}x{} smaller than filter {}x{}",
            input.rows(),
            input.cols(),
            params.f1,
            params.f2
        ));
    }
    Ok(())
}

/// Unrolls every `f1 x f2` patch into a column: row `(i, a, b)`, column
/// `(r, c)` holds `x[i][r + a][c + b]`.
fn im2col(input: &Tensor3, f1: usize, f2: usize) -> Vec<f64> {
    let (d, n1, n2) = input.shape();
    let (o1, o2) = (n1 - f1 + 1, n2 - f2 + 1);
    let p = o1 * o2;
    let mut cols = vec![0.0; d * f1 * f2 * p];
    let mut row = 0;
    for i in 0..d {
        let map = input.map(i);
        for a in 0..f1 {
            for b in 0..f2 {
                let dst = &mut cols[row * p..(row + 1) * p];
                for r in 0..o1 {
                    let src = &map[(r + a) * n2 + b..(r + a) * n2 + b + o2];
                    dst[r * o2..(r + 1) * o2].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], grad: &mut Tensor3, f1: usize, f2: usize) {
    let (d, n1, n2) = grad.shape();
    let (o1, o2) = (n1 - f1 + 1, n2 - f2 + 1);
    let p = o1 * o2;
    let data = grad.as_mut_slice();
    let mut row = 0;
    for i in 0..d {
        let base = i * n1 * n2;
        for a in 0..f1 {
            for b in 0..f2 {
                let src = &cols[row * p..(row + 1) * p];
                for r in 0..o1 {
                    let start = base + (r + a) * n2 + b;
                    for (g, s) in data[start..start + o2].iter_mut().zip(&src[r * o2..(r + 1) * o2]) {
                        *g += s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Valid, stride-1 cross-correlation: `out_j = sum_i F_ij (*) x_i + b_j`.
///
/// Filters are applied without flipping. Since the filters are learned,
/// this is the same model family as true convolution with flipped filters.
pub fn conv_forward(input: &Tensor3, params: &ConvLayerParams) -> Result<Tensor3> {
    check_conv_input(input, params)?;
    let (o1, o2) = (input.rows() - params.f1 + 1, input.cols() - params.f2 + 1);
    let p = o1 * o2;
    let cols = im2col(input, params.f1, params.f2);
    let mut out = vec![0.0; params.out_maps * p];
    for (j, chunk) in out.chunks_exact_mut(p).enumerate() {
        chunk.fill(params.biases[j]);
    }
    gemm(params.out_maps, params.patch_len(), p, &params.filters, false, &cols, false, 1.0, &mut out);
    Tensor3::from_vec(params.out_maps, o1, o2, out)
}

/// Gradients of a convolution layer.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub filters: Vec<f64>,
    pub biases: Vec<f64>,
    /// Only computed when requested.
    pub input: Option<Tensor3>,
}

pub fn conv_backward(
    input: &Tensor3,
    params: &ConvLayerParams,
    grad_out: &Tensor3,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    check_conv_input(input, params)?;
    let (o1, o2) = (input.rows() - params.f1 + 1, input.cols() - params.f2 + 1);
    if grad_out.shape() != (params.out_maps, o1, o2) {
        return shape_err("conv output gradient has wrong shape");
    }
    let p = o1 * o2;
    let dlen = params.patch_len();
    let cols = im2col(input, params.f1, params.f2);
    let g = grad_out.as_slice();

    let mut filters = vec![0.0; params.filters.len()];
    gemm(params.out_maps, p, dlen, g, false, &cols, true, 0.0, &mut filters);
    let biases = g.chunks_exact(p).map(|c| c.iter().sum()).collect();

    let input_grad = if want_input_grad {
        let mut dcols = vec![0.0; dlen * p];
        gemm(dlen, params.out_maps, p, &params.filters, true, g, false, 0.0, &mut dcols);
        let mut gi = Tensor3::zeros(input.maps(), input.rows(), input.cols())?;
        col2im_add(&dcols, &mut gi, params.f1, params.f2);
        Some(gi)
    } else {
        None
    };
    Ok(ConvGrads { filters, biases, input: input_grad })
}

/// Elementwise `max(x, 0)`.
pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the rectified output is not positive.
pub fn relu_backward_in_place(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Non-overlapping `window x window` max pooling with stride `window`.
///
/// Output dims are `floor(n / window)`; trailing rows and columns that do
/// not fill a window are dropped. The returned indices are flat offsets into
/// `input` of each window's maximum; ties go to the first element in
/// row-major scan order.
pub fn maxpool_forward(input: &Tensor3, window: usize) -> Result<(Tensor3, Vec<usize>)> {
    if window == 0 {
        return invalid("pool window must be >= 1");
    }
    let (d, n1, n2) = input.shape();
    if n1 < window || n2 < window {
        return shape_err(format!("cannot pool {n1}x{n2} with a {window}x{window} window"));
    }
    let (o1, o2) = (n1 / window, n2 / window);
    let src = input.as_slice();
    let mut out = Vec::with_capacity(d * o1 * o2);
    let mut idx = Vec::with_capacity(d * o1 * o2);
    for m in 0..d {
        let base = m * n1 * n2;
        for r in 0..o1 {
            for c in 0..o2 {
                let mut best = base + r * window * n2 + c * window;
                for a in 0..window {
                    for b in 0..window {
                        let i = base + (r * window + a) * n2 + c * window + b;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor3::from_vec(d, o1, o2, out)?, idx))
}

/// Routes each pooled gradient to the recorded argmax of its window.
pub fn maxpool_backward(grad_out: &Tensor3, indices: &[usize], input_shape: (usize, usize, usize)) -> Result<Tensor3> {
    if indices.len() != grad_out.len() {
        return shape_err("pool index count does not match pooled gradient");
    }
    let (d, n1, n2) = input_shape;
    let mut grad = Tensor3::zeros(d, n1, n2)?;
    let data = grad.as_mut_slice();
    for (&i, &g) in indices.iter().zip(grad_out.as_slice()) {
        if i >= data.len() {
            return shape_err("pool index out of range");
        }
        data[i] += g;
    }
    Ok(grad)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `W x + b`.
pub fn dense_forward(x: &[f64], params: &DenseLayerParams) -> Result<Vec<f64>> {
    params.check()?;
    if x.len() != params.in_dim {
        return shape_err(format!("dense layer expects {} inputs, got {}", params.in_dim, x.len()));
    }
    Ok((0..params.out_dim).map(|j| dot(params.row(j), x) + params.biases[j]).collect())
}

/// Accumulates `dW += g x^T`, `db += g` into `grads` and returns `W^T g`
/// when requested.
pub fn dense_backward(
    x: &[f64],
    params: &DenseLayerParams,
    grad_out: &[f64],
    grads: &mut DenseLayerParams,
    want_input_grad: bool,
) -> Result<Option<Vec<f64>>> {
    if x.len() != params.in_dim || grad_out.len() != params.out_dim {
        return shape_err("dense backward dims mismatch");
    }
    let n = params.in_dim;
    for (j, &g) in grad_out.iter().enumerate() {
        if g != 0.0 {
            axpy(g, x, &mut grads.weights[j * n..(j + 1) * n]);
        }
        grads.biases[j] += g;
    }
    if !want_input_grad {
        return Ok(None);
    }
    let mut gx = vec![0.0; n];
    for (j, &g) in grad_out.iter().enumerate() {
        if g != 0.0 {
            axpy(g, params.row(j), &mut gx);
        }
    }
    Ok(Some(gx))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function, evaluated so that neither branch can
/// overflow.
pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// `exp(x_k) / sum_j exp(x_j)` with the maximum subtracted first.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[inline]
fn clamp_prob(t: f64) -> f64 {
    t.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Negated Bernoulli log-likelihood of `bits` under the sigmoid outputs `t`:
/// `-sum_j [c_j log t_j + (1 - c_j) log(1 - t_j)]`.
pub fn bce_loss(t: &[f64], bits: &[bool]) -> Result<f64> {
    if t.len() != bits.len() {
        return shape_err(format!("bce: {} outputs vs {} target bits", t.len(), bits.len()));
    }
    Ok(-t
        .iter()
        .zip(bits)
        .map(|(&p, &c)| {
            let p = clamp_prob(p);
            if c {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum::<f64>())
}

/// Negated categorical log-likelihood `-sum_j y_j log t_j`.
pub fn ce_loss(t: &[f64], y: &[f64]) -> Result<f64> {
    if t.len() != y.len() {
        return shape_err(format!("ce: {} outputs vs {} targets", t.len(), y.len()));
    }
    Ok(-t.iter().zip(y).map(|(&p, &yv)| yv * clamp_prob(p).ln()).sum::<f64>())
}

/// Inverted dropout.
///
/// In training mode every unit is dropped independently with probability
/// `p` and survivors are scaled by `1 / (1 - p)`; the returned mask is
/// `true` for kept units. Inference mode is the identity and returns no
/// mask.
pub fn dropout(x: &[f64], p: f64, rng: &mut RngState, mode: Mode) -> Result<(Vec<f64>, Option<Vec<bool>>)> {
    if !(0.0..1.0).contains(&p) {
        return invalid(format!("dropout probability {p} outside [0, 1)"));
    }
    match mode {
        Mode::Infer => Ok((x.to_vec(), None)),
        Mode::Train => {
            let scale = 1.0 / (1.0 - p);
            let mask: Vec<bool> = x.iter().map(|_| rng.random::<f64>() >= p).collect();
            let out = x.iter().zip(&mask).map(|(&v, &k)| if k { v * scale } else { 0.0 }).collect();
            Ok((out, Some(mask)))
        }
    }
}
