//! Synthetic identities standing in for face databases.
//!
//! Every user gets a smooth base pattern: a shared background layout plus a
//! handful of user-specific Gaussian blobs. Each sample of that user is the
//! base pattern shifted by an integer jitter, lit by a random linear
//! illumination gradient and corrupted by Gaussian noise, then clipped to
//! `[0, 1]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::preprocess::{GrayImage, LabeledImage};
use crate::rng::RngState;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_users: usize,
    pub samples_per_user: usize,
    pub size: usize,
    /// User-specific blobs per base pattern.
    pub blobs: usize,
    /// Peak-to-peak amplitude of the illumination ramp across the image.
    pub gradient: f64,
    /// Maximum translation in pixels along each axis.
    pub jitter: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_users: 10,
            samples_per_user: 20,
            size: 64,
            blobs: 6,
            gradient: 0.3,
            jitter: 2,
            noise_sigma: 0.03,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_users < 2 || self.samples_per_user < 2 {
            return invalid("synthetic data needs at least 2 users with 2 samples each");
        }
        if self.size < 8 {
            return invalid("synthetic images must be at least 8x8");
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.gradient) || !finite_nonneg(self.noise_sigma) {
            return invalid("nuisance amplitudes must be finite and >= 0");
        }
        if self.jitter >= self.size / 2 {
            return invalid("jitter must be smaller than half the image size");
        }
        Ok(())
    }
}

pub fn user_id(index: usize) -> String {
    format!("user{index:03}")
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    amp: f64,
}

fn blob_field(blobs: &[Blob], y: f64, x: f64) -> f64 {
    blobs.iter().map(|b| b.amp * (-((y - b.cy).powi(2) + (x - b.cx).powi(2)) / (2.0 * b.sigma * b.sigma)).exp()).sum()
}

fn base_pattern(size: usize, shared: &[Blob], own: &[Blob]) -> Vec<f64> {
    let mut v = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 / size as f64, c as f64 / size as f64);
            v.push((0.45 + blob_field(shared, y, x) + blob_field(own, y, x)).clamp(0.0, 1.0));
        }
    }
    v
}

/// Face-like layout common to every identity: head, eyes, mouth.
fn shared_layout() -> Vec<Blob> {
    vec![
        Blob { cy: 0.5, cx: 0.5, sigma: 0.28, amp: 0.15 },
        Blob { cy: 0.38, cx: 0.32, sigma: 0.06, amp: -0.15 },
        Blob { cy: 0.38, cx: 0.68, sigma: 0.06, amp: -0.15 },
        Blob { cy: 0.74, cx: 0.5, sigma: 0.07, amp: -0.1 },
    ]
}

/// Generates `num_users * samples_per_user` images, user-major.
pub fn gen_synth_dataset(spec: &SynthSpec) -> Result<Vec<LabeledImage>> {
    spec.validate()?;
    let mut rng = RngState::new(spec.seed);
    let shared = shared_layout();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let m = spec.size;
    let mut out = Vec::with_capacity(spec.num_users * spec.samples_per_user);
    for u in 0..spec.num_users {
        let own: Vec<Blob> = (0..spec.blobs)
            .map(|_| Blob {
                cy: rng.random_range(0.15..0.85),
                cx: rng.random_range(0.15..0.85),
                sigma: rng.random_range(0.05..0.15),
                amp: rng.random_range(-0.25..0.25),
            })
            .collect();
        let base = base_pattern(m, &shared, &own);
        for _ in 0..spec.samples_per_user {
            let j = spec.jitter as i64;
            let dy = rng.random_range(-j..=j);
            let dx = rng.random_range(-j..=j);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = spec.gradient * rng.random_range(-1.0..=1.0);
            let (gy, gx) = (theta.sin(), theta.cos());
            let mut px = Vec::with_capacity(m * m);
            for r in 0..m {
                for c in 0..m {
                    let sr = (r as i64 - dy).clamp(0, m as i64 - 1) as usize;
                    let sc = (c as i64 - dx).clamp(0, m as i64 - 1) as usize;
                    let ramp = amp * (gy * (r as f64 / (m - 1) as f64 - 0.5) + gx * (c as f64 / (m - 1) as f64 - 0.5));
                    let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    px.push((base[sr * m + sc] + ramp + n).clamp(0.0, 1.0));
                }
            }
            out.push(LabeledImage { user: user_id(u), image: GrayImage::new(m, m, px)? });
        }
    }
    Ok(out)
}

/// Uniform noise images, one probe of the input-space attack.
pub fn noise_image(size: usize, rng: &mut RngState) -> Result<GrayImage> {
    GrayImage::new(size, size, (0..size * size).map(|_| rng.random::<f64>()).collect())
}
