//! Minibatch SGD with momentum on the summed binary cross-entropy between
//! sigmoid outputs and each user's code.

use rand::seq::SliceRandom;

use super::layers::{bce_loss, Mode};
use super::network::{
    accumulate_backward, forward_tensor, init_params, input_tensor, predict, Architecture, NetworkParams,
};
use crate::codes::CodeBook;
use crate::error::{invalid, Error, Result};
use crate::preprocess::LabeledImage;
use crate::rng::RngState;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 200, learning_rate: 0.01, momentum: 0.9 }
    }
}

/// Mean per-sample loss for every epoch. Training loss is measured on the
/// fly with dropout active; validation loss in inference mode after the
/// epoch (empty when no validation set was given).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: TrainHistory,
}

fn targets<'a>(set: &[LabeledImage], codebook: &'a CodeBook) -> Result<Vec<&'a [bool]>> {
    set.iter()
        .map(|s| codebook.get(&s.user).map(|c| c.bits()).ok_or_else(|| Error::UnknownUser(s.user.clone())))
        .collect()
}

/// Initializes a network for `arch` from `rng` and trains it.
pub fn sgd_train(
    arch: &Architecture,
    train: &[LabeledImage],
    validation: &[LabeledImage],
    codebook: &CodeBook,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainOutcome> {
    if arch.code_bits != codebook.code_bits() {
        return invalid(format!("network has {} outputs but codes have {} bits", arch.code_bits, codebook.code_bits()));
    }
    let params = init_params(arch, rng)?;
    sgd_train_from(params, train, validation, codebook, cfg, rng)
}

/// Trains starting from `params`. The sample order is reshuffled every
/// epoch and the batch gradient is the mean over the batch, summed in
/// sample order.
pub fn sgd_train_from(
    mut params: NetworkParams,
    train: &[LabeledImage],
    validation: &[LabeledImage],
    codebook: &CodeBook,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return invalid("empty training set");
    }
    if cfg.batch_size < 1 {
        return invalid("batch size must be >= 1");
    }
    params.validate()?;
    let train_targets = targets(train, codebook)?;
    let val_targets = targets(validation, codebook)?;

    let mut velocity = NetworkParams::zeros(&params.arch)?;
    let mut grads = NetworkParams::zeros(&params.arch)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.scale(0.0);
            for &i in batch {
                let (t, trace) = forward_tensor(input_tensor(&train[i].image), &params, Mode::Train, rng)?;
                epoch_loss += bce_loss(&t, train_targets[i])?;
                accumulate_backward(&trace, train_targets[i], &params, &mut grads)?;
            }
            let inv = 1.0 / batch.len() as f64;
            velocity.scale(cfg.momentum);
            velocity.add_scaled(-cfg.learning_rate * inv, &grads);
            params.add_scaled(1.0, &velocity);
        }
        history.train_loss.push(epoch_loss / train.len() as f64);
        if !validation.is_empty() {
            let mut v = 0.0;
            for (s, t) in validation.iter().zip(&val_targets) {
                v += bce_loss(&predict(&s.image, &params)?, t)?;
            }
            history.validation_loss.push(v / validation.len() as f64);
        }
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::generate_codebook;
    use crate::nn::network::ConvSpec;

    fn small_arch(k: usize) -> Architecture {
        Architecture {
            input_size: 8,
            convs: vec![ConvSpec { maps: 2, filter: 3 }],
            hidden: vec![16],
            code_bits: k,
            dropout: 0.0,
        }
    }

    use crate::preprocess::GrayImage;

    fn sample(user: &str, seed: u64) -> LabeledImage {
        let v = (0..64).map(|i| (((i as u64 * 31 + seed * 17) % 23) as f64) / 23.0).collect();
        LabeledImage { user: user.into(), image: GrayImage::new(8, 8, v).unwrap() }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let cb = generate_codebook(&["a".to_string()], 8, &mut RngState::new(1)).unwrap();
        let p = init_params(&small_arch(8), &mut RngState::new(2)).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 2, learning_rate: 0.0, momentum: 0.9 };
        let data = vec![sample("a", 0), sample("a", 1), sample("a", 2)];
        let out = sgd_train_from(p.clone(), &data, &[], &cb, &cfg, &mut RngState::new(3)).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.history.train_loss.len(), 3);
    }

    #[test]
    fn overfits_a_single_sample() {
        let cb = generate_codebook(&["a".to_string()], 8, &mut RngState::new(1)).unwrap();
        let cfg = TrainConfig { epochs: 200, batch_size: 1, learning_rate: 0.05, momentum: 0.9 };
        let data = vec![sample("a", 4)];
        let out = sgd_train(&small_arch(8), &data, &[], &cb, &cfg, &mut RngState::new(7)).unwrap();
        let last = *out.history.train_loss.last().unwrap();
        assert!(last < 0.01, "final loss {last}");
        let code = cb.get("a").unwrap();
        let final_loss = bce_loss(&predict(&data[0].image, &out.params).unwrap(), code.bits()).unwrap();
        assert!(final_loss < 0.01);
    }

    #[test]
    fn same_seed_same_params() {
        let users = ["a".to_string(), "b".to_string()];
        let cb = generate_codebook(&users, 8, &mut RngState::new(1)).unwrap();
        let mut arch = small_arch(8);
        arch.dropout = 0.5;
        let cfg = TrainConfig { epochs: 2, batch_size: 3, learning_rate: 0.02, momentum: 0.9 };
        let data: Vec<_> = (0..6).map(|i| sample(if i % 2 == 0 { "a" } else { "b" }, i)).collect();
        let a = sgd_train(&arch, &data, &data, &cb, &cfg, &mut RngState::new(9)).unwrap();
        let b = sgd_train(&arch, &data, &data, &cb, &cfg, &mut RngState::new(9)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.validation_loss.len(), 2);
    }

    #[test]
    fn error_paths() {
        let cb = generate_codebook(&["a".to_string()], 8, &mut RngState::new(1)).unwrap();
        let cfg = TrainConfig::default();
        let arch = small_arch(8);
        assert!(sgd_train(&arch, &[], &[], &cb, &cfg, &mut RngState::new(1)).is_err());
        let bad = TrainConfig { batch_size: 0, ..cfg.clone() };
        assert!(sgd_train(&arch, &[sample("a", 0)], &[], &cb, &bad, &mut RngState::new(1)).is_err());
        let r = sgd_train(&arch, &[sample("zz", 0)], &[], &cb, &cfg, &mut RngState::new(1));
        assert!(matches!(r, Err(Error::UnknownUser(_))));
        assert!(sgd_train(&small_arch(16), &[sample("a", 0)], &[], &cb, &cfg, &mut RngState::new(1)).is_err());
    }
}
