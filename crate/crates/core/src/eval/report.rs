//! Aggregated evaluation results and their text and CSV forms.

use std::fmt::Write as _;
use std::path::Path;

use super::metrics::mean_std;
use crate::error::{invalid, Result};
use crate::matcher::MatchScore;

pub const REPORT_HEADER: &str = "MEBREPORT v1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMetrics {
    /// Percent.
    pub gar_at_zero_far: f64,
    /// Percent.
    pub eer: f64,
}

/// Histogram over the score lattice: bin `k` counts scores of exactly
/// `k / crop_count`.
pub fn histogram(scores: &[MatchScore], crop_count: usize) -> Result<Vec<usize>> {
    let mut bins = vec![0; crop_count + 1];
    for s in scores {
        if s.total != crop_count || s.matches > s.total {
            return invalid(format!("score {s} does not lie on the 1/{crop_count} lattice"));
        }
        bins[s.matches] += 1;
    }
    Ok(bins)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub crop_count: usize,
    pub splits: Vec<SplitMetrics>,
    pub gar_mean: f64,
    pub gar_std: f64,
    pub eer_mean: f64,
    pub eer_std: f64,
    /// Scores pooled over all splits.
    pub genuine: Vec<MatchScore>,
    pub imposter: Vec<MatchScore>,
    pub attack: Vec<MatchScore>,
}

impl EvalReport {
    pub fn new(
        crop_count: usize,
        splits: Vec<SplitMetrics>,
        genuine: &[MatchScore],
        imposter: &[MatchScore],
    ) -> Result<Self> {
        histogram(genuine, crop_count)?;
        histogram(imposter, crop_count)?;
        let gars: Vec<f64> = splits.iter().map(|s| s.gar_at_zero_far).collect();
        let eers: Vec<f64> = splits.iter().map(|s| s.eer).collect();
        let (gar_mean, gar_std) = mean_std(&gars);
        let (eer_mean, eer_std) = mean_std(&eers);
        Ok(Self {
            crop_count,
            splits,
            gar_mean,
            gar_std,
            eer_mean,
            eer_std,
            genuine: genuine.to_vec(),
            imposter: imposter.to_vec(),
            attack: Vec::new(),
        })
    }

    pub fn with_attack(mut self, attack: Vec<MatchScore>) -> Result<Self> {
        histogram(&attack, self.crop_count)?;
        self.attack = attack;
        Ok(self)
    }

    pub fn genuine_histogram(&self) -> Vec<usize> {
        histogram(&self.genuine, self.crop_count).expect("checked on construction")
    }

    pub fn imposter_histogram(&self) -> Vec<usize> {
        histogram(&self.imposter, self.crop_count).expect("checked on construction")
    }

    pub fn attack_histogram(&self) -> Vec<usize> {
        histogram(&self.attack, self.crop_count).expect("checked on construction")
    }

    /// Line-oriented `key = value` report. Floats are printed with full
    /// round-trip precision so equal runs give identical bytes.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(s, "{REPORT_HEADER}").unwrap();
        writeln!(s, "crop_count = {}", self.crop_count).unwrap();
        writeln!(s, "splits = {}", self.splits.len()).unwrap();
        for (i, m) in self.splits.iter().enumerate() {
            writeln!(s, "split.{i}.gar_at_zero_far = {:?}", m.gar_at_zero_far).unwrap();
            writeln!(s, "split.{i}.eer = {:?}", m.eer).unwrap();
        }
        writeln!(s, "gar_at_zero_far.mean = {:?}", self.gar_mean).unwrap();
        writeln!(s, "gar_at_zero_far.std = {:?}", self.gar_std).unwrap();
        writeln!(s, "eer.mean = {:?}", self.eer_mean).unwrap();
        writeln!(s, "eer.std = {:?}", self.eer_std).unwrap();
        writeln!(s, "genuine.count = {}", self.genuine.len()).unwrap();
        writeln!(s, "imposter.count = {}", self.imposter.len()).unwrap();
        writeln!(s, "attack.count = {}", self.attack.len()).unwrap();
        writeln!(s, "histogram.genuine = {}", join(&self.genuine_histogram())).unwrap();
        writeln!(s, "histogram.imposter = {}", join(&self.imposter_histogram())).unwrap();
        writeln!(s, "histogram.attack = {}", join(&self.attack_histogram())).unwrap();
        s
    }

    /// `label,matches,total,score` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,matches,total,score\n");
        for (label, set) in [("genuine", &self.genuine), ("imposter", &self.imposter), ("attack", &self.attack)] {
            for m in set.iter() {
                writeln!(s, "{label},{},{},{:?}", m.matches, m.total, m.value()).unwrap();
            }
        }
        s
    }

    /// Writes `report.txt` and `scores.csv` into `dir`, creating it.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        std::fs::write(dir.join("scores.csv"), self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(m: usize) -> MatchScore {
        MatchScore { matches: m, total: 4 }
    }

    fn report() -> EvalReport {
        let splits =
            vec![SplitMetrics { gar_at_zero_far: 90.0, eer: 2.0 }, SplitMetrics { gar_at_zero_far: 100.0, eer: 0.0 }];
        EvalReport::new(4, splits, &[ms(4), ms(3), ms(4)], &[ms(0), ms(0), ms(1), ms(0)])
            .unwrap()
            .with_attack(vec![ms(0); 5])
            .unwrap()
    }

    #[test]
    fn histogram_mass_is_conserved() {
        let r = report();
        assert_eq!(r.genuine_histogram(), vec![0, 0, 0, 1, 2]);
        assert_eq!(r.imposter_histogram().iter().sum::<usize>(), 4);
        assert_eq!(r.attack_histogram(), vec![5, 0, 0, 0, 0]);
    }

    #[test]
    fn summary_statistics() {
        let r = report();
        assert_eq!(r.gar_mean, 95.0);
        assert!((r.gar_std - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.eer_mean, 1.0);
    }

    #[test]
    fn text_and_csv_shape() {
        let r = report();
        let text = r.to_text();
        assert!(text.starts_with("MEBREPORT v1\n"));
        assert!(text.contains("gar_at_zero_far.mean = 95.0\n"));
        assert!(text.contains("histogram.genuine = 0 0 0 1 2\n"));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 4 + 5);
        assert!(csv.contains("genuine,3,4,0.75\n"));
    }

    #[test]
    fn off_lattice_scores_rejected() {
        assert!(histogram(&[MatchScore { matches: 1, total: 5 }], 4).is_err());
    }
}
