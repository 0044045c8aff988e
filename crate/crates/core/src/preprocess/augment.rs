use super::illum::illum_normalize;
use super::image::{GrayImage, LabeledImage};
use crate::error::{invalid, shape_err, Result};

/// Bilinear resize to `target x target`.
///
/// Pixel centers are aligned (output pixel `d` samples source coordinate
/// `(d + 0.5) * in / out - 0.5`, clamped to the image). Returns a copy when
/// the image already has the target size.
pub fn resize(image: &GrayImage, target: usize) -> Result<GrayImage> {
    resize_to(image, target, target)
}

pub(crate) fn resize_to(image: &GrayImage, rows: usize, cols: usize) -> Result<GrayImage> {
    if rows < 1 || cols < 1 {
        return invalid("resize target must be >= 1");
    }
    if image.rows() == rows && image.cols() == cols {
        return Ok(image.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ry = axis(rows, image.rows());
    let rx = axis(cols, image.cols());
    let mut data = Vec::with_capacity(rows * cols);
    for &(y0, y1, wy) in &ry {
        for &(x0, x1, wx) in &rx {
            let top = image.get(y0, x0) * (1.0 - wx) + image.get(y0, x1) * wx;
            let bot = image.get(y1, x0) * (1.0 - wx) + image.get(y1, x1) * wx;
            data.push(top * (1.0 - wy) + bot * wy);
        }
    }
    GrayImage::new(rows, cols, data)
}

/// Mirror about the vertical axis (column order reversed).
pub fn hflip(image: &GrayImage) -> GrayImage {
    let mut out = image.clone();
    let cols = image.cols();
    for row in out.pixels_mut().chunks_exact_mut(cols) {
        row.reverse();
    }
    out
}

/// Working size `m`, crop size `n` and whether each crop is followed by
/// its mirror image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentConfig {
    pub m: usize,
    pub n: usize,
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { m: 64, n: 57, flip: true }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.n > self.m {
            return invalid(format!("crop size {} must be in 1..={}", self.n, self.m));
        }
        Ok(())
    }

    /// `(1 + flip) * (m - n + 1)^2`.
    pub fn crop_count(&self) -> usize {
        let p = self.m - self.n + 1;
        (1 + self.flip as usize) * p * p
    }
}

/// Every `n x n` crop of an `m x m` image, each resized back to `m x m`.
///
/// Crop origins run row-major; with `flip` set, each crop is immediately
/// followed by its mirror.
pub fn crops_all(image: &GrayImage, cfg: &AugmentConfig) -> Result<Vec<GrayImage>> {
    cfg.validate()?;
    if image.rows() != cfg.m || image.cols() != cfg.m {
        return shape_err(format!("crops need a {m}x{m} image, got {}x{}", image.rows(), image.cols(), m = cfg.m));
    }
    let p = cfg.m - cfg.n + 1;
    let mut out = Vec::with_capacity(cfg.crop_count());
    for r in 0..p {
        for c in 0..p {
            let crop = resize(&image.crop(r, c, cfg.n, cfg.n)?, cfg.m)?;
            if cfg.flip {
                let f = hflip(&crop);
                out.push(crop);
                out.push(f);
            } else {
                out.push(crop);
            }
        }
    }
    Ok(out)
}

/// Training-set expansion: every crop (and mirror) of every sample,
/// illumination-normalized, labeled with the sample's user.
pub fn augment_labeled(samples: &[LabeledImage], cfg: &AugmentConfig) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::with_capacity(samples.len() * cfg.crop_count());
    for s in samples {
        for crop in crops_all(&s.image, cfg)? {
            out.push(LabeledImage { user: s.user.clone(), image: illum_normalize(&crop) });
        }
    }
    Ok(out)
}
