//! Verification and identification by crop voting.
//!
//! A probe image is expanded into its crop set, every crop is normalized,
//! mapped to output probabilities, thresholded into a code and hashed. The
//! score against a user is the fraction of crop digests equal to that
//! user's stored digest.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use crate::codes::MebCode;
use crate::error::{invalid, Error, Result};
use crate::nn::{predict, NetworkParams};
use crate::preprocess::{crops_all, illum_normalize, AugmentConfig, GrayImage};
use crate::vault::{hash_code, Digest, ProtectedTemplate, Vault};

/// Anything that maps a normalized crop to per-bit probabilities.
pub trait CodeMapper {
    fn code_bits(&self) -> usize;
    fn outputs(&self, crop: &GrayImage) -> Result<Vec<f64>>;
}

impl CodeMapper for NetworkParams {
    fn code_bits(&self) -> usize {
        self.arch.code_bits
    }

    fn outputs(&self, crop: &GrayImage) -> Result<Vec<f64>> {
        predict(crop, self)
    }
}

/// `matches / total`, kept as an exact ratio.
#[derive(Clone, Copy, Debug, Eq)]
pub struct MatchScore {
    pub matches: usize,
    pub total: usize,
}

impl MatchScore {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matches as f64 / self.total as f64
        }
    }
}

impl PartialEq for MatchScore {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl PartialOrd for MatchScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MatchScore {
    fn cmp(&self, other: &Self) -> Ordering {
        let a = self.matches as u128 * other.total.max(1) as u128;
        let b = other.matches as u128 * self.total.max(1) as u128;
        a.cmp(&b)
    }
}

impl fmt::Display for MatchScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.matches, self.total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyResult {
    pub user_id: String,
    pub score: MatchScore,
    pub threshold: f64,
    pub accept: bool,
}

/// `s_i = 1` iff `t_i > 0.5`; exactly 0.5 maps to 0.
pub fn binarize(t: &[f64]) -> Result<MebCode> {
    MebCode::new(t.iter().map(|&v| v > 0.5).collect())
}

/// Accept iff `score >= threshold`.
pub fn decide(score: &MatchScore, threshold: f64) -> bool {
    score.value() >= threshold
}

/// The code produced for every crop of `sample`, in crop order.
pub fn probe_codes<M: CodeMapper + ?Sized>(
    sample: &GrayImage,
    mapper: &M,
    cfg: &AugmentConfig,
) -> Result<Vec<MebCode>> {
    crops_all(sample, cfg)?.iter().map(|crop| binarize(&mapper.outputs(&illum_normalize(crop))?)).collect()
}

/// Crop digests of one probe, tallied so any number of templates can be
/// scored without rerunning the network.
#[derive(Clone, Debug)]
pub struct ProbeDigests {
    counts: HashMap<Digest, usize>,
    total: usize,
    code_bits: usize,
}

impl ProbeDigests {
    pub fn compute<M: CodeMapper + ?Sized>(sample: &GrayImage, mapper: &M, cfg: &AugmentConfig) -> Result<Self> {
        let codes = probe_codes(sample, mapper, cfg)?;
        let mut counts = HashMap::new();
        for c in &codes {
            *counts.entry(hash_code(c)).or_insert(0) += 1;
        }
        Ok(Self { counts, total: codes.len(), code_bits: mapper.code_bits() })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn score(&self, template: &ProtectedTemplate) -> Result<MatchScore> {
        if template.code_bits != self.code_bits {
            return invalid(format!(
                "template for {} has {} bits, network produces {}",
                template.user_id, template.code_bits, self.code_bits
            ));
        }
        let matches = self.counts.get(&template.digest).copied().unwrap_or(0);
        Ok(MatchScore { matches, total: self.total })
    }
}

/// Crop-voting score of `sample` against `user_id`'s stored template.
pub fn score_verify<M: CodeMapper + ?Sized>(
    sample: &GrayImage,
    user_id: &str,
    mapper: &M,
    vault: &Vault,
    cfg: &AugmentConfig,
) -> Result<MatchScore> {
    let template = vault.get(user_id).ok_or_else(|| Error::UnknownUser(user_id.to_string()))?;
    if template.code_bits != mapper.code_bits() {
        return invalid(format!(
            "template for {user_id} has {} bits, network produces {}",
            template.code_bits,
            mapper.code_bits()
        ));
    }
    ProbeDigests::compute(sample, mapper, cfg)?.score(template)
}

pub fn verify<M: CodeMapper + ?Sized>(
    sample: &GrayImage,
    user_id: &str,
    mapper: &M,
    vault: &Vault,
    cfg: &AugmentConfig,
    threshold: f64,
) -> Result<VerifyResult> {
    if !(0.0..=1.0).contains(&threshold) {
        return invalid(format!("threshold {threshold} outside [0, 1]"));
    }
    let score = score_verify(sample, user_id, mapper, vault, cfg)?;
    Ok(VerifyResult { user_id: user_id.to_string(), score, threshold, accept: decide(&score, threshold) })
}

/// Scores the probe against every enrolled user; highest score first, ties
/// by ascending user id.
pub fn identify<M: CodeMapper + ?Sized>(
    sample: &GrayImage,
    mapper: &M,
    vault: &Vault,
    cfg: &AugmentConfig,
) -> Result<Vec<(String, MatchScore)>> {
    if vault.is_empty() {
        return invalid("cannot identify against an empty vault");
    }
    let probe = ProbeDigests::compute(sample, mapper, cfg)?;
    let mut ranked = vault.templates().map(|t| Ok((t.user_id.clone(), probe.score(t)?))).collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::generate_codebook;
    use crate::rng::RngState;

    /// Emits `on` for crops whose mean intensity exceeds `cut`, `off`
    /// otherwise.
    struct Stub {
        on: MebCode,
        off: MebCode,
        cut: f64,
    }

    impl CodeMapper for Stub {
        fn code_bits(&self) -> usize {
            self.on.len()
        }
        fn outputs(&self, crop: &GrayImage) -> Result<Vec<f64>> {
            let mean = crop.pixels().iter().sum::<f64>() / crop.pixels().len() as f64;
            let code = if mean > self.cut { &self.on } else { &self.off };
            Ok(code.bits().iter().map(|&b| if b { 0.9 } else { 0.1 }).collect())
        }
    }

    fn setup() -> (Vault, MebCode, MebCode) {
        let users = vec!["a".to_string(), "b".to_string()];
        let cb = generate_codebook(&users, 64, &mut RngState::new(1)).unwrap();
        let mut v = Vault::new();
        v.enroll_all(&cb, false).unwrap();
        (v, cb.get("a").unwrap().clone(), cb.get("b").unwrap().clone())
    }

    fn probe() -> GrayImage {
        GrayImage::from_fn(8, 8, |r, c| ((r * 3 + c * 5) % 7) as f64 / 7.0).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let mut t = vec![0.6, 0.4, 0.5];
        t.extend([0.0; 5]);
        assert_eq!(binarize(&t).unwrap().bits()[..3], [true, false, false]);
        assert!(binarize(&[0.5; 16]).unwrap().bits().iter().all(|b| !b));
        let t: Vec<f64> = (0..64).map(|i| ((i * 37) % 100) as f64 / 99.0).collect();
        let c = binarize(&t).unwrap();
        for (b, v) in c.bits().iter().zip(&t) {
            assert_eq!(*b, *v > 0.5);
        }
    }

    #[test]
    fn full_and_zero_scores() {
        let (v, a, b) = setup();
        let cfg = AugmentConfig { m: 8, n: 6, flip: true };
        let all_a = Stub { on: a.clone(), off: a.clone(), cut: 0.0 };
        let s = score_verify(&probe(), "a", &all_a, &v, &cfg).unwrap();
        assert_eq!((s.matches, s.total), (18, 18));
        assert_eq!(s.value(), 1.0);
        let s = score_verify(&probe(), "b", &all_a, &v, &cfg).unwrap();
        assert_eq!(s.value(), 0.0);
        let _ = b;
    }

    #[test]
    fn identify_ranks_and_agrees_with_verify() {
        let (v, a, b) = setup();
        let cfg = AugmentConfig { m: 8, n: 6, flip: true };
        let stub = Stub { on: a, off: b.complement(), cut: -1.0 };
        let ranked = identify(&probe(), &stub, &v, &cfg).unwrap();
        assert_eq!(ranked[0].0, "a");
        assert_eq!(ranked[0].1.value(), 1.0);
        assert_eq!(ranked[1], ("b".to_string(), MatchScore { matches: 0, total: 18 }));
        for (u, s) in &ranked {
            assert_eq!(*s, score_verify(&probe(), u, &stub, &v, &cfg).unwrap());
        }
    }

    #[test]
    fn identify_tie_break_by_user() {
        let (v, a, _) = setup();
        let cfg = AugmentConfig { m: 8, n: 8, flip: false };
        let stub = Stub { on: a.complement(), off: a.complement(), cut: 0.0 };
        let ranked = identify(&probe(), &stub, &v, &cfg).unwrap();
        assert_eq!(ranked.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert!(identify(&probe(), &stub, &Vault::new(), &cfg).is_err());
    }

    #[test]
    fn errors() {
        let (v, a, _) = setup();
        let cfg = AugmentConfig { m: 8, n: 6, flip: true };
        let stub = Stub { on: a.clone(), off: a, cut: 0.0 };
        assert!(matches!(score_verify(&probe(), "zed", &stub, &v, &cfg), Err(Error::UnknownUser(_))));
        let wide = MebCode::new(vec![true; 128]).unwrap();
        let stub = Stub { on: wide.clone(), off: wide, cut: 0.0 };
        assert!(score_verify(&probe(), "a", &stub, &v, &cfg).is_err());
    }

    #[test]
    fn decide_examples() {
        let zero = MatchScore { matches: 0, total: 128 };
        let full = MatchScore { matches: 128, total: 128 };
        assert!(decide(&zero, 0.0));
        assert!(!decide(&zero, 1e-9));
        assert!(decide(&full, 1.0));
        assert_eq!(MatchScore { matches: 1, total: 2 }, MatchScore { matches: 64, total: 128 });
    }
}
