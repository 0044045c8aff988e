//! Verification metrics over genuine and imposter score lists.
//!
//! All rates are percentages in `[0, 100]`. A probe is accepted at
//! threshold `t` when its score is `>= t`.

use crate::error::{invalid, Result};

fn check(genuine: &[f64], imposter: &[f64]) -> Result<()> {
    if genuine.is_empty() || imposter.is_empty() {
        return invalid("genuine and imposter score lists must both be non-empty");
    }
    if genuine.iter().chain(imposter).any(|v| !v.is_finite()) {
        return invalid("scores must be finite");
    }
    Ok(())
}

/// Percentage of `scores` at or above `threshold`.
pub fn accept_rate(scores: &[f64], threshold: f64) -> f64 {
    100.0 * scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// Genuine accept rate at the lowest threshold that rejects every imposter,
/// i.e. the fraction of genuine scores strictly above the best imposter.
pub fn gar_at_zero_far(genuine: &[f64], imposter: &[f64]) -> Result<f64> {
    check(genuine, imposter)?;
    let worst = imposter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let above = genuine.iter().filter(|&&g| g > worst).count();
    Ok(100.0 * above as f64 / genuine.len() as f64)
}

/// Threshold for [`gar_at_zero_far`] on a lattice of step `1 / total`:
/// halfway between the best imposter and the next lattice point.
pub fn zero_far_threshold(imposter: &[f64], total: usize) -> Result<f64> {
    if imposter.is_empty() || total == 0 {
        return invalid("need imposter scores and a positive crop count");
    }
    let worst = imposter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(worst + 0.5 / total as f64)
}

/// Operating point where false accepts and false rejects balance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EerPoint {
    /// Lowest threshold attaining the minimum `|FAR - FRR|`; may be
    /// infinite when rejecting everything balances best.
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub eer: f64,
}

/// Sweeps every distinct observed score plus `+inf` as a threshold and
/// keeps the one minimizing `|FAR - FRR|`, lowest threshold on ties. The
/// EER is the mean of the two rates there.
pub fn eer_point(genuine: &[f64], imposter: &[f64]) -> Result<EerPoint> {
    check(genuine, imposter)?;
    let mut candidates: Vec<f64> = genuine.iter().chain(imposter).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    let (ng, ni) = (genuine.len(), imposter.len());
    let mut best: Option<(usize, EerPoint)> = None;
    for t in candidates {
        let fa = imposter.iter().filter(|&&s| s >= t).count();
        let fr = genuine.iter().filter(|&&s| s < t).count();
        // |fa/ni - fr/ng| on a common denominator, so equal gaps tie exactly.
        let gap = (fa * ng).abs_diff(fr * ni);
        if best.is_none_or(|(g, _)| gap < g) {
            let far = 100.0 * fa as f64 / ni as f64;
            let frr = 100.0 * fr as f64 / ng as f64;
            best = Some((gap, EerPoint { threshold: t, far, frr, eer: (far + frr) / 2.0 }));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

pub fn compute_eer(genuine: &[f64], imposter: &[f64]) -> Result<f64> {
    Ok(eer_point(genuine, imposter)?.eer)
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for a single
/// value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
