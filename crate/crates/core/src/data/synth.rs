//! Seeded synthetic multimodal CTR data.
//!
//! Each modality's item vectors are built from orthonormal planted
//! directions: one "signal" direction, a few high-variance nuisance
//! directions, and isotropic noise, all multiplied by a per-modality scale.
//! Only the signal coordinates of the label-relevant modalities drive clicks:
//!
//! ```text
//! q_item  = signal coordinate(s) of the relevant modality (averaged when both)
//! logit   = label_bias + (label_strength + affinity_strength · taste_user) · q_target
//! label   ~ Bernoulli(sigmoid(logit))
//! ```
//!
//! History items are drawn best-of-`history_candidates` by `taste_user · q`,
//! so a user's history carries information about their taste.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::InteractionRecord;
use crate::error::{Error, Result};
use crate::fusion::{Modality, RawModalityTable};
use crate::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalPlacement {
    TextOnly,
    ImageOnly,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_items: usize,
    pub n_records: usize,
    /// Defaults to `max(1, n_records / 10)`.
    pub n_users: Option<usize>,
    pub d_text: usize,
    pub d_image: usize,
    pub signal: SignalPlacement,
    pub signal_std: f64,
    pub nuisance_dims: usize,
    pub nuisance_std: f64,
    pub noise_std: f64,
    pub text_scale: f64,
    pub image_scale: f64,
    pub label_strength: f64,
    pub affinity_strength: f64,
    pub label_bias: f64,
    pub history_min: usize,
    pub history_max: usize,
    pub history_candidates: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_items: 1000,
            n_records: 10_000,
            n_users: None,
            d_text: 64,
            d_image: 64,
            signal: SignalPlacement::TextOnly,
            signal_std: 2.0,
            nuisance_dims: 2,
            nuisance_std: 1.5,
            noise_std: 0.5,
            text_scale: 1.0,
            image_scale: 0.1,
            label_strength: 3.0,
            affinity_strength: 1.0,
            label_bias: 0.0,
            history_min: 0,
            history_max: 20,
            history_candidates: 4,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_items == 0 || self.d_text == 0 || self.d_image == 0 || self.history_candidates == 0 {
            return fail("n_items, d_text, d_image and history_candidates must be positive".into());
        }
        if self.n_users == Some(0) {
            return fail("n_users must be positive".into());
        }
        if self.nuisance_dims + 1 > self.d_text.min(self.d_image) {
            return fail(format!(
                "nuisance_dims + 1 = {} exceeds a modality dimension",
                self.nuisance_dims + 1
            ));
        }
        if self.history_min > self.history_max {
            return fail("history_min exceeds history_max".into());
        }
        let reals = [
            self.signal_std,
            self.nuisance_std,
            self.noise_std,
            self.text_scale,
            self.image_scale,
            self.label_strength,
            self.affinity_strength,
            self.label_bias,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return fail("all real-valued settings must be finite".into());
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.n_users.unwrap_or((self.n_records / 10).max(1))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub text: RawModalityTable,
    pub image: RawModalityTable,
    pub train: Vec<InteractionRecord>,
    pub val: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    /// Unit signal direction planted in the raw text space.
    pub text_signal: Vec<f64>,
    pub image_signal: Vec<f64>,
    /// Label-relevant score per item.
    pub item_quality: Vec<f64>,
}

pub fn item_id(i: usize) -> String {
    format!("item{i:05}")
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `count` orthonormal directions in `R^dim` by Gram–Schmidt on Gaussian draws.
fn orthonormal_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Item matrix for one modality plus each item's signal coordinate.
fn modality_vectors(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    dim: usize,
    scale: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dirs = orthonormal_directions(rng, spec.nuisance_dims + 1, dim);
    let mut data = Vec::with_capacity(spec.n_items * dim);
    let mut signal = Vec::with_capacity(spec.n_items);
    for _ in 0..spec.n_items {
        let s = gaussian(rng);
        let mut x: Vec<f64> = (0..dim).map(|_| spec.noise_std * gaussian(rng)).collect();
        for (k, dir) in dirs.iter().enumerate() {
            let coef = if k == 0 {
                spec.signal_std * s
            } else {
                spec.nuisance_std * gaussian(rng)
            };
            x.iter_mut().zip(dir).for_each(|(a, d)| *a += coef * d);
        }
        data.extend(x.into_iter().map(|v| v * scale));
        signal.push(s);
    }
    (data, signal, dirs[0].clone())
}

/// Generates the full dataset; a pure function of `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (text_data, text_sig, text_dir) = modality_vectors(&mut rng, spec, spec.d_text, spec.text_scale);
    let (image_data, image_sig, image_dir) = modality_vectors(&mut rng, spec, spec.d_image, spec.image_scale);

    let item_quality: Vec<f64> = match spec.signal {
        SignalPlacement::TextOnly => text_sig,
        SignalPlacement::ImageOnly => image_sig,
        SignalPlacement::Both => text_sig
            .iter()
            .zip(&image_sig)
            .map(|(t, i)| (t + i) / std::f64::consts::SQRT_2)
            .collect(),
    };

    let n_users = spec.n_users();
    let taste: Vec<f64> = (0..n_users).map(|_| gaussian(&mut rng)).collect();
    let mut records = Vec::with_capacity(spec.n_records);
    for _ in 0..spec.n_records {
        let user = rng.random_range(0..n_users);
        let len = rng.random_range(spec.history_min..=spec.history_max);
        let history = (0..len)
            .map(|_| {
                let mut best = rng.random_range(0..spec.n_items);
                for _ in 1..spec.history_candidates {
                    let c = rng.random_range(0..spec.n_items);
                    if taste[user] * item_quality[c] > taste[user] * item_quality[best] {
                        best = c;
                    }
                }
                item_id(best)
            })
            .collect();
        let target = rng.random_range(0..spec.n_items);
        let q = item_quality[target];
        let logit = spec.label_bias + (spec.label_strength + spec.affinity_strength * taste[user]) * q;
        let label = u8::from(rng.random::<f64>() < sigmoid(logit));
        records.push(InteractionRecord {
            user_id: format!("user{user:05}"),
            history,
            target: item_id(target),
            label,
        });
    }

    let n_train = spec.n_records * 8 / 10;
    let n_val = spec.n_records / 10;
    let test = records.split_off(n_train + n_val);
    let val = records.split_off(n_train);
    let ids: Vec<String> = (0..spec.n_items).map(item_id).collect();
    Ok(SyntheticDataset {
        text: RawModalityTable::new(
            ids.clone(),
            Tensor::new(&[spec.n_items, spec.d_text], text_data)?,
            Modality::Text,
        )?,
        image: RawModalityTable::new(
            ids,
            Tensor::new(&[spec.n_items, spec.d_image], image_data)?,
            Modality::Image,
        )?,
        train: records,
        val,
        test,
        text_signal: text_dir,
        image_signal: image_dir,
        item_quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_items: 50,
            n_records: 200,
            d_text: 8,
            d_image: 6,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small(), 3).unwrap();
        let b = generate_synthetic(&small(), 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.text, b.text);
        assert_eq!(a.image, b.image);
        let c = generate_synthetic(&small(), 4).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn splits_are_80_10_10() {
        let d = generate_synthetic(&small(), 1).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (160, 20, 20));
        assert_eq!(d.text.vectors.shape(), &[50, 8]);
        assert_eq!(d.image.vectors.shape(), &[50, 6]);
    }

    #[test]
    fn zero_records_gives_empty_splits() {
        let spec = SyntheticSpec {
            n_records: 0,
            ..small()
        };
        let d = generate_synthetic(&spec, 1).unwrap();
        assert!(d.train.is_empty() && d.val.is_empty() && d.test.is_empty());
    }

    #[test]
    fn history_lengths_respect_bounds() {
        let spec = SyntheticSpec {
            history_min: 2,
            history_max: 5,
            ..small()
        };
        let d = generate_synthetic(&spec, 2).unwrap();
        assert!(d.train.iter().all(|r| (2..=5).contains(&r.history.len())));
    }

    #[test]
    fn planted_directions_are_unit() {
        let d = generate_synthetic(&small(), 5).unwrap();
        for v in [&d.text_signal, &d.image_signal] {
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SyntheticSpec { n_items: 0, ..small() };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticSpec {
            nuisance_dims: 6,
            ..small()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let parsed: std::result::Result<SyntheticSpec, _> = serde_json::from_str(r#"{"n_itmes": 5}"#);
        assert!(parsed.is_err());
        let parsed: SyntheticSpec = serde_json::from_str(r#"{"signal": "both"}"#).unwrap();
        assert_eq!(parsed.signal, SignalPlacement::Both);
    }
}
