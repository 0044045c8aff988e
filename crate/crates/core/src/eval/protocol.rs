//! Repeated random-split protocol: per split, draw fresh codes, train,
//! enroll, score every test probe against every template, and summarize.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::metrics::{compute_eer, gar_at_zero_far};
use super::report::{EvalReport, SplitMetrics};
use crate::codes::generate_codebook;
use crate::error::{invalid, Error, Result};
use crate::matcher::{CodeMapper, MatchScore, ProbeDigests};
use crate::nn::{sgd_train, Architecture, NetworkParams, TrainConfig, TrainHistory};
use crate::preprocess::{augment_labeled, AugmentConfig, LabeledImage};
use crate::rng::RngState;
use crate::vault::Vault;

/// Groups samples by user, preserving each user's sample order.
pub fn group_by_user(dataset: &[LabeledImage]) -> BTreeMap<&str, Vec<&LabeledImage>> {
    let mut groups: BTreeMap<&str, Vec<&LabeledImage>> = BTreeMap::new();
    for s in dataset {
        groups.entry(s.user.as_str()).or_default().push(s);
    }
    groups
}

/// Randomly assigns `train_per_user` samples of every user to training and
/// the rest to testing. Users are visited in id order; output is grouped
/// by user.
pub fn split_train_test(
    dataset: &[LabeledImage],
    train_per_user: usize,
    rng: &mut RngState,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let groups = group_by_user(dataset);
    if groups.is_empty() {
        return invalid("empty dataset");
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (user, samples) in groups {
        if samples.len() <= train_per_user {
            return invalid(format!("user {user} has {} samples, needs more than {train_per_user}", samples.len()));
        }
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(rng);
        let (a, b) = idx.split_at(train_per_user);
        train.extend(a.iter().map(|&i| samples[i].clone()));
        test.extend(b.iter().map(|&i| samples[i].clone()));
    }
    Ok((train, test))
}

/// One comparison of a probe against one enrolled template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreRecord {
    pub probe_user: String,
    pub template_user: String,
    pub score: MatchScore,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub genuine: Vec<ScoreRecord>,
    pub imposter: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn genuine_values(&self) -> Vec<f64> {
        self.genuine.iter().map(|r| r.score.value()).collect()
    }

    pub fn imposter_values(&self) -> Vec<f64> {
        self.imposter.iter().map(|r| r.score.value()).collect()
    }
}

/// Scores every test sample against its own template (genuine) and against
/// every other enrolled template (imposter). Each probe's crops go through
/// the network once.
pub fn collect_scores<M: CodeMapper + ?Sized>(
    mapper: &M,
    vault: &Vault,
    test: &[LabeledImage],
    cfg: &AugmentConfig,
) -> Result<ScoreSet> {
    let mut out = ScoreSet::default();
    for s in test {
        if vault.get(&s.user).is_none() {
            return Err(Error::UnknownUser(s.user.clone()));
        }
        let probe = ProbeDigests::compute(&s.image, mapper, cfg)?;
        for t in vault.templates() {
            let rec =
                ScoreRecord { probe_user: s.user.clone(), template_user: t.user_id.clone(), score: probe.score(t)? };
            if t.user_id == s.user {
                out.genuine.push(rec);
            } else {
                out.imposter.push(rec);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub arch: Architecture,
    pub train: TrainConfig,
    /// Crop protocol for both training augmentation and probe scoring.
    pub augment: AugmentConfig,
    pub train_per_user: usize,
    /// Training samples per user held out for validation-loss monitoring.
    pub validation_per_user: usize,
    pub num_splits: usize,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.shape_chain()?;
        self.augment.validate()?;
        if self.arch.input_size != self.augment.m {
            return invalid(format!(
                "network input {} differs from crop size {}",
                self.arch.input_size, self.augment.m
            ));
        }
        if self.num_splits == 0 {
            return invalid("need at least one split");
        }
        if self.validation_per_user >= self.train_per_user {
            return invalid("validation samples must leave at least one training sample per user");
        }
        Ok(())
    }
}

/// Everything one split produced. Only the digest vault is kept; the
/// codebook is dropped once enrolled.
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub index: usize,
    pub params: NetworkParams,
    pub vault: Vault,
    pub history: TrainHistory,
    pub test: Vec<LabeledImage>,
    pub scores: ScoreSet,
    pub metrics: SplitMetrics,
}

/// Moves the first `per_user` samples of every user into a validation set.
pub fn hold_out_validation(train: Vec<LabeledImage>, per_user: usize) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for s in train {
        let n = seen.entry(s.user.clone()).or_insert(0);
        *n += 1;
        if *n <= per_user {
            val.push(s);
        } else {
            fit.push(s);
        }
    }
    (fit, val)
}

/// Independent seeds for the three random choices of a split: which
/// samples train, which codes users get, and the training trajectory
/// (initialization, shuffling, dropout).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProtocolSeeds {
    pub split: u64,
    pub code: u64,
    pub train: u64,
}

impl ProtocolSeeds {
    pub fn all(seed: u64) -> Self {
        Self { split: seed, code: seed, train: seed }
    }

    /// Generators for split `index`. Each role gets its own stream family so
    /// equal seeds never yield correlated draws across roles.
    fn streams(&self, index: usize) -> (RngState, RngState, RngState) {
        let i = index as u64;
        (
            RngState::with_stream(self.split, i),
            RngState::with_stream(self.code, (1 << 32) | i),
            RngState::with_stream(self.train, (2 << 32) | i),
        )
    }
}

/// Runs split `index` of the protocol.
pub fn run_split(
    dataset: &[LabeledImage],
    cfg: &ProtocolConfig,
    index: usize,
    seeds: &ProtocolSeeds,
) -> Result<SplitOutcome> {
    let (mut split_rng, mut code_rng, mut train_rng) = seeds.streams(index);
    let (train, test) = split_train_test(dataset, cfg.train_per_user, &mut split_rng)?;
    let users: Vec<String> = group_by_user(&train).keys().map(|u| u.to_string()).collect();
    let codebook = generate_codebook(&users, cfg.arch.code_bits, &mut code_rng)?;
    let (fit, val) = hold_out_validation(train, cfg.validation_per_user);
    let fit = augment_labeled(&fit, &cfg.augment)?;
    let val = augment_labeled(&val, &cfg.augment)?;
    let trained = sgd_train(&cfg.arch, &fit, &val, &codebook, &cfg.train, &mut train_rng)?;
    drop(fit);
    let mut vault = Vault::new();
    vault.enroll_all(&codebook, false)?;
    drop(codebook);
    let scores = collect_scores(&trained.params, &vault, &test, &cfg.augment)?;
    let metrics = SplitMetrics::from_scores(&scores)?;
    Ok(SplitOutcome { index, params: trained.params, vault, history: trained.history, test, scores, metrics })
}

/// Runs every split, calling `on_split` as each finishes so callers can keep
/// whatever trained systems they need. Splits do not depend on each other.
pub fn run_protocol_with(
    dataset: &[LabeledImage],
    cfg: &ProtocolConfig,
    seeds: &ProtocolSeeds,
    mut on_split: impl FnMut(&SplitOutcome) -> Result<()>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut splits = Vec::with_capacity(cfg.num_splits);
    let mut genuine = Vec::new();
    let mut imposter = Vec::new();
    for i in 0..cfg.num_splits {
        let out = run_split(dataset, cfg, i, seeds)?;
        on_split(&out)?;
        genuine.extend(out.scores.genuine.iter().map(|r| r.score));
        imposter.extend(out.scores.imposter.iter().map(|r| r.score));
        splits.push(out.metrics);
    }
    EvalReport::new(cfg.augment.crop_count(), splits, &genuine, &imposter)
}

pub fn run_protocol(dataset: &[LabeledImage], cfg: &ProtocolConfig, seeds: &ProtocolSeeds) -> Result<EvalReport> {
    run_protocol_with(dataset, cfg, seeds, |_| Ok(()))
}

impl SplitMetrics {
    pub fn from_scores(scores: &ScoreSet) -> Result<Self> {
        let (g, i) = (scores.genuine_values(), scores.imposter_values());
        Ok(SplitMetrics { gar_at_zero_far: gar_at_zero_far(&g, &i)?, eer: compute_eer(&g, &i)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::MebCode;
    use crate::eval::synth::{gen_synth_dataset, SynthSpec};
    use crate::matcher::score_verify;
    use crate::nn::{Architecture, TrainConfig};
    use crate::preprocess::GrayImage;
    use crate::Result;

    fn data(users: usize, per: usize) -> Vec<LabeledImage> {
        gen_synth_dataset(&SynthSpec {
            num_users: users,
            samples_per_user: per,
            size: 16,
            jitter: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn split_counts_and_partition() {
        let d = data(3, 15);
        let (train, test) = split_train_test(&d, 10, &mut RngState::new(1)).unwrap();
        for u in ["user000", "user001", "user002"] {
            assert_eq!(train.iter().filter(|s| s.user == u).count(), 10);
            assert_eq!(test.iter().filter(|s| s.user == u).count(), 5);
        }
        let mut all: Vec<_> = train.iter().chain(&test).map(|s| s.image.pixels().to_vec()).collect();
        let mut orig: Vec<_> = d.iter().map(|s| s.image.pixels().to_vec()).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all, orig);
        let (t2, _) = split_train_test(&d, 10, &mut RngState::new(1)).unwrap();
        assert_eq!(train, t2);
    }

    #[test]
    fn split_needs_enough_samples() {
        assert!(split_train_test(&data(2, 10), 10, &mut RngState::new(0)).is_err());
    }

    /// Emits the code keyed by the crop's rounded mean brightness.
    struct Bucket(Vec<MebCode>);

    impl CodeMapper for Bucket {
        fn code_bits(&self) -> usize {
            self.0[0].len()
        }
        fn outputs(&self, crop: &GrayImage) -> Result<Vec<f64>> {
            let mean = crop.pixels().iter().sum::<f64>() / crop.pixels().len() as f64;
            let k = ((mean * 10.0) as usize).min(self.0.len() - 1);
            Ok(self.0[k].bits().iter().map(|&b| if b { 0.9 } else { 0.1 }).collect())
        }
    }

    #[test]
    fn collect_scores_counts_and_recompute() {
        let mut rng = RngState::new(5);
        let users: Vec<String> = (0..4).map(|i| format!("u{i}")).collect();
        let book = generate_codebook(&users, 8, &mut rng).unwrap();
        let mapper = Bucket(
            book.iter()
                .map(|(_, c)| c.clone())
                .chain(std::iter::repeat_n(book.get("u0").unwrap().clone(), 7))
                .collect(),
        );
        let mut vault = Vault::new();
        vault.enroll_all(&book, false).unwrap();
        let cfg = AugmentConfig { m: 8, n: 6, flip: true };
        let test: Vec<LabeledImage> = (0..4)
            .flat_map(|u| {
                (0..3).map(move |s| LabeledImage {
                    user: format!("u{u}"),
                    image: GrayImage::from_fn(8, 8, |r, c| ((r + c + s + u) % 5) as f64 / 5.0).unwrap(),
                })
            })
            .collect();
        let set = collect_scores(&mapper, &vault, &test, &cfg).unwrap();
        assert_eq!(set.genuine.len(), 4 * 3);
        assert_eq!(set.imposter.len(), 4 * 3 * 3);
        // Records come out probe-major, templates in vault order.
        let (mut g, mut i) = (set.genuine.iter(), set.imposter.iter());
        for s in &test {
            for t in vault.templates() {
                let rec = if t.user_id == s.user { g.next() } else { i.next() }.unwrap();
                assert_eq!((&rec.probe_user, &rec.template_user), (&s.user, &t.user_id));
                let want = score_verify(&s.image, &t.user_id, &mapper, &vault, &cfg).unwrap();
                assert_eq!((rec.score.matches, rec.score.total), (want.matches, want.total));
            }
        }
        assert!(set.genuine.iter().any(|r| r.score.matches > 0));
    }

    fn tiny_protocol(splits: usize) -> ProtocolConfig {
        ProtocolConfig {
            arch: Architecture {
                input_size: 16,
                convs: vec![crate::nn::ConvSpec { maps: 2, filter: 3 }],
                hidden: vec![16],
                code_bits: 8,
                dropout: 0.0,
            },
            train: TrainConfig { epochs: 2, batch_size: 8, learning_rate: 0.01, momentum: 0.9 },
            augment: AugmentConfig { m: 16, n: 15, flip: true },
            train_per_user: 3,
            validation_per_user: 1,
            num_splits: splits,
        }
    }

    #[test]
    fn protocol_is_deterministic_and_well_formed() {
        let d = data(3, 5);
        let seeds = ProtocolSeeds::all(3);
        let a = run_protocol(&d, &tiny_protocol(2), &seeds).unwrap();
        let b = run_protocol(&d, &tiny_protocol(2), &seeds).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(a.splits.len(), 2);
        assert_eq!(a.genuine.len(), 2 * 3 * 2);
        assert_eq!(a.imposter.len(), 2 * 3 * 2 * 2);
        for m in &a.splits {
            assert!((0.0..=100.0).contains(&m.gar_at_zero_far) && (0.0..=100.0).contains(&m.eer));
        }
        assert_eq!(a.genuine_histogram().iter().sum::<usize>(), a.genuine.len());
        let other = run_protocol(&d, &tiny_protocol(2), &ProtocolSeeds { code: 4, ..seeds }).unwrap();
        assert_ne!(a.to_csv(), other.to_csv());
    }

    #[test]
    fn one_split_has_zero_spread() {
        let r = run_protocol(&data(3, 5), &tiny_protocol(1), &ProtocolSeeds::all(0)).unwrap();
        assert_eq!((r.gar_std, r.eer_std), (0.0, 0.0));
    }

    #[test]
    fn mismatched_crop_size_rejected() {
        let mut cfg = tiny_protocol(1);
        cfg.augment.m = 20;
        assert!(run_protocol(&data(3, 5), &cfg, &ProtocolSeeds::all(0)).is_err());
    }

    #[test]
    fn single_user_has_no_imposters() {
        let mut rng = RngState::new(5);
        let book = generate_codebook(&["solo".to_string()], 8, &mut rng).unwrap();
        let mapper = Bucket(vec![book.get("solo").unwrap().clone()]);
        let mut vault = Vault::new();
        vault.enroll_all(&book, false).unwrap();
        let test = vec![LabeledImage { user: "solo".into(), image: GrayImage::constant(8, 8, 0.3).unwrap() }];
        let set = collect_scores(&mapper, &vault, &test, &AugmentConfig { m: 8, n: 7, flip: false }).unwrap();
        assert_eq!(set.genuine.len(), 1);
        assert!(set.imposter.is_empty());
        assert_eq!(set.genuine[0].score, MatchScore { matches: 4, total: 4 });
    }

    #[test]
    fn unenrolled_probe_is_an_error() {
        let mut rng = RngState::new(5);
        let book = generate_codebook(&["a".to_string()], 8, &mut rng).unwrap();
        let mapper = Bucket(vec![book.get("a").unwrap().clone()]);
        let mut vault = Vault::new();
        vault.enroll_all(&book, false).unwrap();
        let test = vec![LabeledImage { user: "b".into(), image: GrayImage::constant(8, 8, 0.3).unwrap() }];
        let err = collect_scores(&mapper, &vault, &test, &AugmentConfig { m: 8, n: 7, flip: false }).unwrap_err();
        assert!(matches!(err, Error::UnknownUser(_)));
    }
}
