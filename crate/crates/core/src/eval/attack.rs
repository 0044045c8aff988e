//! Input-space brute force: throw images that belong to nobody at every
//! stored template and record the scores.

use super::synth::noise_image;
use crate::error::Result;
use crate::matcher::{CodeMapper, MatchScore, ProbeDigests};
use crate::preprocess::{AugmentConfig, GrayImage};
use crate::rng::RngState;
use crate::vault::Vault;

/// Scores `noise_count` uniform-noise images, then every image in `unseen`,
/// against each enrolled template. The result is probe-major with templates
/// in vault order, `(noise_count + unseen.len()) * vault.len()` long.
pub fn attack_sim<M: CodeMapper + ?Sized>(
    mapper: &M,
    vault: &Vault,
    cfg: &AugmentConfig,
    noise_count: usize,
    unseen: &[GrayImage],
    rng: &mut RngState,
) -> Result<Vec<MatchScore>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity((noise_count + unseen.len()) * vault.len());
    let score_probe = |image: &GrayImage, out: &mut Vec<MatchScore>| -> Result<()> {
        let probe = ProbeDigests::compute(image, mapper, cfg)?;
        for t in vault.templates() {
            out.push(probe.score(t)?);
        }
        Ok(())
    };
    for _ in 0..noise_count {
        score_probe(&noise_image(cfg.m, rng)?, &mut out)?;
    }
    for image in unseen {
        score_probe(image, &mut out)?;
    }
    Ok(out)
}
