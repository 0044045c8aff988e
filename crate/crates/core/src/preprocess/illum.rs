//! Illumination normalization in three stages: gamma correction,
//! difference-of-Gaussians band-pass filtering and two-pass contrast
//! equalization with tanh squashing, followed by a min-max rescale to
//! `[0, 1]`.

use super::image::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IllumParams {
    pub gamma: f64,
    pub sigma_inner: f64,
    pub sigma_outer: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl Default for IllumParams {
    fn default() -> Self {
        Self { gamma: 0.2, sigma_inner: 1.0, sigma_outer: 2.0, alpha: 0.1, tau: 10.0 }
    }
}

/// Band-pass responses below this magnitude everywhere count as a flat
/// image.
const FLAT_EPS: f64 = 1e-10;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Symmetric reflection (`d c b a | a b c d | d c b a`), valid for any
/// offset.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn blur(src: &[f64], rows: usize, cols: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut padded = vec![0.0; cols + 2 * r];
    let mut tmp = vec![0.0; rows * cols];
    for y in 0..rows {
        let row = &src[y * cols..(y + 1) * cols];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(i as isize - r as isize, cols)];
        }
        let dst = &mut tmp[y * cols..(y + 1) * cols];
        for (k, &w) in kernel.iter().enumerate() {
            for (o, v) in dst.iter_mut().zip(&padded[k..k + cols]) {
                *o += w * v;
            }
        }
    }
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows {
        for (k, &w) in kernel.iter().enumerate() {
            let sy = reflect(y as isize + k as isize - r as isize, rows);
            let src_row = &tmp[sy * cols..(sy + 1) * cols];
            for (o, v) in out[y * cols..(y + 1) * cols].iter_mut().zip(src_row) {
                *o += w * v;
            }
        }
    }
    out
}

/// Normalizes with [`IllumParams::default`].
pub fn illum_normalize(image: &GrayImage) -> GrayImage {
    illum_normalize_with(image, &IllumParams::default())
}

pub fn illum_normalize_with(image: &GrayImage, p: &IllumParams) -> GrayImage {
    let (rows, cols) = (image.rows(), image.cols());
    let gamma: Vec<f64> = image.pixels().iter().map(|&v| v.max(0.0).powf(p.gamma)).collect();
    let inner = blur(&gamma, rows, cols, &gaussian_kernel(p.sigma_inner));
    let outer = blur(&gamma, rows, cols, &gaussian_kernel(p.sigma_outer));
    let mut x: Vec<f64> = inner.iter().zip(&outer).map(|(a, b)| a - b).collect();

    if x.iter().all(|v| v.abs() <= FLAT_EPS) {
        return GrayImage::constant(rows, cols, 0.0).expect("valid dims");
    }

    // Second pass reuses |x|^alpha from the first:
    // min(tau, |x| / n1)^alpha = min(tau^alpha, |x|^alpha / n1^alpha).
    let n = x.len() as f64;
    let powed: Vec<f64> = x.iter().map(|v| v.abs().powf(p.alpha)).collect();
    let mean1 = powed.iter().sum::<f64>() / n;
    let norm1 = mean1.powf(1.0 / p.alpha);
    let tau_a = p.tau.powf(p.alpha);
    let mean2 = powed.iter().map(|&q| (q / mean1).min(tau_a)).sum::<f64>() / n;
    let norm = norm1 * mean2.powf(1.0 / p.alpha);
    x.iter_mut().for_each(|v| *v = p.tau * (*v / norm / p.tau).tanh());

    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data =
        if span > 0.0 { x.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect() } else { vec![0.0; x.len()] };
    GrayImage::new(rows, cols, data).expect("finite output")
}
