//! Mini-batch training with Adam and early stopping on validation AUC.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::NamedParams;
use crate::metrics::{auc, logloss};
use crate::model::{self, EncodedRecord, Hyperparams, ItemFeatures, ModelParams, ModelShape};
use crate::tensor::{clamp_probability, Tensor};

/// Binary cross-entropy of one prediction, with `p` clamped away from 0 and 1.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = clamp_probability(p);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-AUC gain of at least `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            max_epochs: 20,
            patience: 2,
            min_delta: 1e-4,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail("learning_rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.min_delta.is_nan() || self.min_delta < 0.0 {
            return fail("epsilon must be positive and min_delta nonnegative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return fail("batch_size, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return fail("patience cannot exceed max_epochs");
        }
        Ok(())
    }
}

/// First/second moment estimates mirroring a parameter set.
#[derive(Debug, Clone)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub t: u64,
}

fn zeroed<P: NamedParams>(params: &P) -> P {
    let mut z = params.clone();
    for (_, t) in z.named_mut() {
        t.fill(0.0);
    }
    z
}

impl<P: NamedParams> AdamState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: zeroed(params),
            v: zeroed(params),
            t: 0,
        }
    }
}

pub fn adam_step<P: NamedParams>(params: &mut P, grads: &P, state: &mut AdamState<P>, cfg: &TrainConfig) -> Result<()> {
    let g_list = grads.named();
    let p_list = params.named();
    if g_list.len() != p_list.len()
        || g_list
            .iter()
            .zip(&p_list)
            .any(|((gn, g), (pn, p))| gn != pn || g.shape() != p.shape())
    {
        return Err(Error::dim("adam_step", "gradient set does not mirror parameters"));
    }
    if let Some((name, _)) = g_list.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient {name}")));
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (lr, b1, b2, eps) = (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);

    let mut m_list = state.m.named_mut();
    let mut v_list = state.v.named_mut();
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .named_mut()
        .into_iter()
        .zip(g_list)
        .zip(m_list.iter_mut().zip(v_list.iter_mut()))
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot from the epoch with the highest validation AUC.
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_auc(&self) -> f64 {
        self.history[self.best_epoch - 1].val_auc
    }
}

/// Parameters before the first update for a given seed.
pub fn initial_params(hyper: &Hyperparams, shape: ModelShape, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ModelParams::init(hyper, shape, &mut rng)
}

/// Record order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Click probabilities, in input order.
pub fn predict(
    records: &[EncodedRecord],
    params: &ModelParams,
    fused: &Tensor,
    hyper: &Hyperparams,
) -> Result<Vec<f64>> {
    records
        .par_iter()
        .map(|r| model::forward(r, params, fused, hyper))
        .collect()
}

/// `(auc, logloss)` of the model on `records`.
pub fn evaluate(
    records: &[EncodedRecord],
    params: &ModelParams,
    fused: &Tensor,
    hyper: &Hyperparams,
) -> Result<(f64, f64)> {
    let scores = predict(records, params, fused, hyper)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    Ok((auc(&scores, &labels)?, logloss(&scores, &labels)?))
}

pub fn train(
    train_set: &[EncodedRecord],
    val_set: &[EncodedRecord],
    features: &ItemFeatures,
    hyper: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = initial_params(hyper, features.model_shape(), cfg.seed)?;
    train_from(params, train_set, val_set, features, hyper, cfg)
}

/// Trains starting from `params` instead of a fresh initialization.
pub fn train_from(
    mut params: ModelParams,
    train_set: &[EncodedRecord],
    val_set: &[EncodedRecord],
    features: &ItemFeatures,
    hyper: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hyper.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let positives = val_set.iter().filter(|r| r.label == 1).count();
    if positives == 0 || positives == val_set.len() {
        return Err(Error::Config(
            "validation set has a single label class; AUC is undefined".into(),
        ));
    }

    let fused = features.fused();
    let mut state = AdamState::new(&params);
    let mut grads = params.zeros_like();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let order = if cfg.shuffle {
            epoch_permutation(cfg.seed, epoch, train_set.len())
        } else {
            (0..train_set.len()).collect()
        };
        let mut loss_sum = 0.0;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            for (_, g) in grads.named_mut() {
                g.fill(0.0);
            }
            let loss = model::accumulate_gradients(&batch, &params, fused, hyper, &mut grads).map_err(|e| match e {
                Error::NonFiniteLoss { index } => Error::NonFiniteLoss { index: chunk[index] },
                other => other,
            })?;
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut params, &grads, &mut state, cfg)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_auc, val_logloss) = evaluate(val_set, &params, fused, hyper)?;
        log::info!("epoch {epoch}: train_loss={train_loss:.6} val_auc={val_auc:.6} val_logloss={val_logloss:.6}");
        history.push(EpochStats {
            epoch,
            train_loss,
            val_auc,
            val_logloss,
        });

        let prev_best = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0);
        if val_auc > prev_best {
            best = Some((val_auc, epoch, params.clone()));
        }
        if val_auc >= prev_best + cfg.min_delta {
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

/// Writes `epoch,train_loss,val_auc,val_logloss` rows with round-trippable floats.
pub fn write_history_csv<W: Write>(history: &[EpochStats], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_auc,val_logloss")?;
    for h in history {
        writeln!(out, "{},{},{},{}", h.epoch, h.train_loss, h.val_auc, h.val_logloss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::TensorSet;
    use approx::assert_abs_diff_eq;

    #[test]
    #[allow(clippy::approx_constant)]
    fn bce_examples() {
        assert_abs_diff_eq!(bce_loss(0.5, 0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(bce_loss(0.5, 1), 0.693147, epsilon = 1e-6);
        assert!(bce_loss(1.0 - 1e-12, 1) < 1.1e-12);
        assert_abs_diff_eq!(bce_loss(0.9, 0), 2.302585, epsilon = 1e-6);
        assert!(bce_loss(0.0, 1).is_finite());
    }

    fn scalar(v: f64) -> TensorSet {
        let mut s = TensorSet::default();
        s.push("theta", Tensor::vector(vec![v]).unwrap());
        s
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        for g in [1e-3, 0.5, -7.0] {
            let mut p = scalar(1.0);
            let mut state = AdamState::new(&p);
            adam_step(&mut p, &scalar(g), &mut state, &cfg).unwrap();
            let moved = 1.0 - p.get("theta").data()[0];
            assert_abs_diff_eq!(moved, cfg.learning_rate * g.signum(), epsilon = 1e-7);
            assert_eq!(state.t, 1);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = scalar(0.3);
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(p.get("theta").data()[0], 0.3);
    }

    #[test]
    fn adam_matches_reference_trajectory() {
        // Hand-rolled reference with g = 1, lr = 0.1 for three steps.
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            reference.push(theta);
        }
        let cfg = TrainConfig {
            learning_rate: lr,
            ..TrainConfig::default()
        };
        let mut p = scalar(0.0);
        let mut state = AdamState::new(&p);
        for expected in reference {
            adam_step(&mut p, &scalar(1.0), &mut state, &cfg).unwrap();
            assert_abs_diff_eq!(p.get("theta").data()[0], expected, epsilon = 1e-15);
        }
        // constant gradient: each step is lr up to eps
        assert_abs_diff_eq!(p.get("theta").data()[0], -0.3, epsilon = 1e-7);
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut p = scalar(0.0);
        let mut state = AdamState::new(&p);
        let mut other = TensorSet::default();
        other.push("phi", Tensor::vector(vec![1.0]).unwrap());
        assert!(adam_step(&mut p, &other, &mut state, &TrainConfig::default()).is_err());
    }

    #[test]
    fn permutation_is_pure() {
        assert_eq!(epoch_permutation(5, 3, 100), epoch_permutation(5, 3, 100));
        assert_ne!(epoch_permutation(5, 3, 100), epoch_permutation(5, 4, 100));
        let mut p = epoch_permutation(9, 1, 50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 30,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn history_csv_format() {
        let mut buf = Vec::new();
        let h = vec![EpochStats {
            epoch: 1,
            train_loss: 0.5,
            val_auc: 0.75,
            val_logloss: 0.1,
        }];
        write_history_csv(&h, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_auc,val_logloss\n1,0.5,0.75,0.1\n"
        );
    }
}
