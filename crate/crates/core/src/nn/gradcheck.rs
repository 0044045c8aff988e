//! Central finite-difference verification of [`network_backward`].
//!
//! The network is piecewise smooth: ReLU kinks, pool winner switches and
//! dropout masks partition parameter space into regions. A central
//! difference whose two probes land in a different region than the base
//! point measures a kink, not the derivative, so for such parameters the
//! step is shrunk tenfold until both probes stay in the base region.

use rand::Rng;

use super::layers::{bce_loss, Mode};
use super::network::{
    forward_tensor, init_params, input_tensor, network_backward, Architecture, ConvSpec, NetworkParams,
};
use crate::error::Result;
use crate::preprocess::GrayImage;
use crate::rng::RngState;

/// Smallest step tried when shrinking around a kink.
const MIN_EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (block, offset) of the worst parameter, block order as in
    /// [`NetworkParams::blocks`].
    pub worst: (usize, usize),
    pub checked: usize,
    /// Parameters whose step had to be shrunk to stay off a kink.
    pub shrunk: usize,
}

fn loss_and_signature(
    params: &NetworkParams,
    image: &GrayImage,
    target: &[bool],
    dropout_seed: u64,
) -> Result<(f64, Vec<u64>)> {
    let mut rng = RngState::new(dropout_seed);
    let (t, trace) = forward_tensor(input_tensor(image), params, Mode::Train, &mut rng)?;
    Ok((bce_loss(&t, target)?, trace.region_signature()))
}

/// Compares analytic and central-difference gradients for every parameter
/// and returns `max |a - n| / max(|a| + |n|, 1e-8)`.
///
/// Dropout masks are drawn from `dropout_seed` afresh for every evaluation,
/// so all probes share one mask.
pub fn gradient_check(
    params: &NetworkParams,
    image: &GrayImage,
    target: &[bool],
    eps: f64,
    dropout_seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = RngState::new(dropout_seed);
    let (_, trace) = forward_tensor(input_tensor(image), params, Mode::Train, &mut rng)?;
    let base_sig = trace.region_signature();
    let analytic = network_backward(&trace, target, params)?;

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), checked: 0, shrunk: 0 };
    let block_lens: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    for (bi, &len) in block_lens.iter().enumerate() {
        for off in 0..len {
            let orig = params.blocks()[bi][off];
            let mut h = eps;
            let numeric = loop {
                probe.blocks_mut()[bi][off] = orig + h;
                let (lp, sp) = loss_and_signature(&probe, image, target, dropout_seed)?;
                probe.blocks_mut()[bi][off] = orig - h;
                let (lm, sm) = loss_and_signature(&probe, image, target, dropout_seed)?;
                let stable = sp == base_sig && sm == base_sig;
                if stable || h / 10.0 < MIN_EPS {
                    break (lp - lm) / (2.0 * h);
                }
                h /= 10.0;
            };
            if h < eps {
                report.shrunk += 1;
            }
            probe.blocks_mut()[bi][off] = orig;
            let a = analytic.blocks()[bi][off];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (bi, off);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// A seeded random tiny network with an input image and target bits, small
/// enough for an exhaustive finite-difference sweep.
#[derive(Clone, Debug)]
pub struct TinyCase {
    pub params: NetworkParams,
    pub image: GrayImage,
    pub target: Vec<bool>,
    pub dropout_seed: u64,
}

/// Input at most 12x12, at most 2 filters per conv layer, dense layers of
/// at most 8 units, at most 8 code bits.
pub fn tiny_case(seed: u64) -> Result<TinyCase> {
    let mut rng = RngState::new(seed);
    let input_size = rng.random_range(8..=12);
    let f1 = rng.random_range(2..=3);
    let mut convs = vec![ConvSpec { maps: rng.random_range(1..=2), filter: f1 }];
    let conv_out = input_size - f1 + 1;
    let after_first = conv_out / 2;
    if rng.random_bool(0.5) && after_first >= 3 {
        convs.push(ConvSpec { maps: rng.random_range(1..=2), filter: 2 });
    }
    let hidden = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)).collect();
    let arch = Architecture {
        input_size,
        convs,
        hidden,
        code_bits: rng.random_range(1..=8),
        dropout: if rng.random_bool(0.5) { 0.5 } else { 0.0 },
    };
    let mut params = init_params(&arch, &mut rng)?;
    for b in params.blocks_mut() {
        for v in b.iter_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let n = input_size * input_size;
    let image = GrayImage::new(input_size, input_size, (0..n).map(|_| rng.random::<f64>()).collect())?;
    let target = (0..arch.code_bits).map(|_| rng.random_bool(0.5)).collect();
    Ok(TinyCase { params, image, target, dropout_seed: rng.random() })
}

impl TinyCase {
    pub fn check(&self, eps: f64) -> Result<GradCheckReport> {
        gradient_check(&self.params, &self.image, &self.target, eps, self.dropout_seed)
    }
}
