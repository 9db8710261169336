//! DIN-style click-through-rate scorer.
//!
//! Per record the model builds three fields (target id embedding, projected
//! target multimodal embedding, attention-pooled history), recalibrates them
//! with SENet, and feeds `cross(x0) ‖ bilinear(fields) ‖ raw fields` into an
//! MLP that emits one logit.
//!
//! ```text
//!  target ─┬─ id row ──────────────┐
//!          └─ fused·P ─────────────┤ fields [3 × d] ── SENet ──┬─ flatten ── cross ──┐
//!  history ── attention(target) ───┘        │                  └─ bilinear ──────────┤
//!                                           └──────────── raw flatten ───────────────┴─ MLP ─ σ
//! ```

pub mod attention;
pub mod bilinear;
pub mod cross;
pub mod embedding;
pub mod input;
pub mod mlp;
pub mod senet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::NamedParams;
use crate::tensor::{sigmoid, Tensor};
use crate::train::bce_loss;

pub use attention::{target_attention, AttentionParams};
pub use bilinear::{bilinear_interaction, BilinearParams, BilinearVariant};
pub use cross::{cross_stack, CrossLayer};
pub use embedding::{embed_lookup, EmbeddingParams};
pub use input::{EncodedRecord, ItemFeatures, OOV_INDEX, PADDING_INDEX};
pub use mlp::Dense;
pub use senet::{senet_reweight, SenetParams};

/// The only field layout the model builds: target id, target multimodal, pooled history.
pub const FIELD_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownItemPolicy {
    /// Unknown ids fall back to the shared out-of-vocabulary row.
    #[default]
    MapToOov,
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub d_id: usize,
    pub heads: usize,
    /// Defaults to `d_id / heads` when absent.
    pub head_dim: Option<usize>,
    pub fields: usize,
    pub senet_reduction: usize,
    pub cross_layers: usize,
    pub mlp_layers: Vec<usize>,
    pub max_history_len: usize,
    pub bilinear: BilinearVariant,
    pub unknown_items: UnknownItemPolicy,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            d_id: 32,
            heads: 2,
            head_dim: None,
            fields: FIELD_COUNT,
            senet_reduction: 2,
            cross_layers: 2,
            mlp_layers: vec![128, 64],
            max_history_len: 50,
            bilinear: BilinearVariant::FieldAll,
            unknown_items: UnknownItemPolicy::MapToOov,
        }
    }
}

impl Hyperparams {
    pub fn head_dim(&self) -> usize {
        self.head_dim.unwrap_or(self.d_id / self.heads.max(1))
    }

    pub fn senet_hidden(&self) -> usize {
        self.fields.div_ceil(self.senet_reduction.max(1))
    }

    /// Width of the flattened field matrix.
    pub fn cross_width(&self) -> usize {
        self.fields * self.d_id
    }

    pub fn mlp_input_width(&self) -> usize {
        2 * self.cross_width() + bilinear::pair_count(self.fields) * self.d_id
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_id == 0 || self.heads == 0 || self.senet_reduction == 0 || self.max_history_len == 0 {
            return fail("d_id, heads, senet_reduction and max_history_len must be positive".into());
        }
        if self.head_dim() == 0 || self.heads * self.head_dim() != self.d_id {
            return fail(format!(
                "heads ({}) x head_dim ({}) must equal d_id ({})",
                self.heads,
                self.head_dim(),
                self.d_id
            ));
        }
        if self.fields != FIELD_COUNT {
            return fail(format!("fields must be {FIELD_COUNT}, got {}", self.fields));
        }
        if self.mlp_layers.contains(&0) {
            return fail("mlp layer sizes must be positive".into());
        }
        Ok(())
    }
}

/// Data-dependent sizes: vocabulary (including padding and OOV rows) and fused width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub fused_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: EmbeddingParams,
    pub attention: AttentionParams,
    pub senet: SenetParams,
    pub cross: Vec<CrossLayer>,
    pub bilinear: BilinearParams,
    pub mlp: Vec<Dense>,
    pub output: Dense,
}

impl ModelParams {
    pub fn zeros(hyper: &Hyperparams, shape: ModelShape) -> Result<Self> {
        hyper.validate()?;
        if shape.vocab_size < 2 || shape.fused_width == 0 {
            return Err(Error::Config(format!("invalid model shape {shape:?}")));
        }
        let d = hyper.d_id;
        let (h, dh) = (hyper.heads, hyper.head_dim());
        let dx = hyper.cross_width();
        let mut mlp = Vec::with_capacity(hyper.mlp_layers.len());
        let mut width = hyper.mlp_input_width();
        for &out in &hyper.mlp_layers {
            mlp.push(Dense {
                weight: Tensor::zeros(&[width, out]),
                bias: Tensor::zeros(&[out]),
            });
            width = out;
        }
        Ok(Self {
            embedding: EmbeddingParams {
                id: Tensor::zeros(&[shape.vocab_size, d]),
                fused_projection: Tensor::zeros(&[shape.fused_width, d]),
            },
            attention: AttentionParams {
                query: Tensor::zeros(&[h, d, dh]),
                key: Tensor::zeros(&[h, d, dh]),
                value: Tensor::zeros(&[h, d, dh]),
                output: Tensor::zeros(&[h * dh, d]),
            },
            senet: SenetParams {
                squeeze: Tensor::zeros(&[hyper.fields, hyper.senet_hidden()]),
                excite: Tensor::zeros(&[hyper.senet_hidden(), hyper.fields]),
            },
            cross: (0..hyper.cross_layers)
                .map(|_| CrossLayer {
                    weight: Tensor::zeros(&[dx]),
                    bias: Tensor::zeros(&[dx]),
                })
                .collect(),
            bilinear: BilinearParams {
                weight: Tensor::zeros(&[d, d]),
            },
            mlp,
            output: Dense {
                weight: Tensor::zeros(&[width, 1]),
                bias: Tensor::zeros(&[1]),
            },
        })
    }

    /// Glorot-uniform weights drawn in parameter-name order; biases and the
    /// padding row start at zero.
    pub fn init<R: Rng>(hyper: &Hyperparams, shape: ModelShape, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(hyper, shape)?;
        for (name, t) in params.named_mut() {
            if name.ends_with("bias") {
                continue;
            }
            let (fan_in, fan_out) = fans(t.shape());
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-a..a);
            }
        }
        params.embedding.id.row_mut(PADDING_INDEX).fill(0.0);
        Ok(params)
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            vocab_size: self.embedding.id.rows(),
            fused_width: self.embedding.fused_projection.rows(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_elements(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.axpy(alpha, b);
        }
    }

    /// Rebuilds a parameter set from named tensors; names and shapes must
    /// match what `hyper` and `shape` imply, in order.
    pub fn from_named(hyper: &Hyperparams, shape: ModelShape, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut params = Self::zeros(hyper, shape)?;
        {
            let slots = params.named_mut();
            if slots.len() != tensors.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} tensors, got {}",
                    slots.len(),
                    tensors.len()
                )));
            }
            for ((name, slot), (given_name, t)) in slots.into_iter().zip(tensors) {
                if name != given_name || slot.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!(
                        "expected {name} {:?}, found {given_name} {:?}",
                        slot.shape(),
                        t.shape()
                    )));
                }
                *slot = t;
            }
        }
        Ok(params)
    }
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [r, c] => (*r, *c),
        [_, r, c] => (*r, *c),
        _ => unreachable!("tensor rank is 1..=3"),
    }
}

impl NamedParams for ModelParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embedding.id".into(), &self.embedding.id),
            ("embedding.fused_projection".into(), &self.embedding.fused_projection),
            ("attention.query".into(), &self.attention.query),
            ("attention.key".into(), &self.attention.key),
            ("attention.value".into(), &self.attention.value),
            ("attention.output".into(), &self.attention.output),
            ("senet.squeeze".into(), &self.senet.squeeze),
            ("senet.excite".into(), &self.senet.excite),
        ];
        for (l, c) in self.cross.iter().enumerate() {
            out.push((format!("cross.{l}.weight"), &c.weight));
            out.push((format!("cross.{l}.bias"), &c.bias));
        }
        out.push(("bilinear.weight".into(), &self.bilinear.weight));
        for (l, m) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{l}.weight"), &m.weight));
            out.push((format!("mlp.{l}.bias"), &m.bias));
        }
        out.push(("output.weight".into(), &self.output.weight));
        out.push(("output.bias".into(), &self.output.bias));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embedding.id".into(), &mut self.embedding.id),
            (
                "embedding.fused_projection".into(),
                &mut self.embedding.fused_projection,
            ),
            ("attention.query".into(), &mut self.attention.query),
            ("attention.key".into(), &mut self.attention.key),
            ("attention.value".into(), &mut self.attention.value),
            ("attention.output".into(), &mut self.attention.output),
            ("senet.squeeze".into(), &mut self.senet.squeeze),
            ("senet.excite".into(), &mut self.senet.excite),
        ];
        for (l, c) in self.cross.iter_mut().enumerate() {
            out.push((format!("cross.{l}.weight"), &mut c.weight));
            out.push((format!("cross.{l}.bias"), &mut c.bias));
        }
        out.push(("bilinear.weight".into(), &mut self.bilinear.weight));
        for (l, m) in self.mlp.iter_mut().enumerate() {
            out.push((format!("mlp.{l}.weight"), &mut m.weight));
            out.push((format!("mlp.{l}.bias"), &mut m.bias));
        }
        out.push(("output.weight".into(), &mut self.output.weight));
        out.push(("output.bias".into(), &mut self.output.bias));
        out
    }
}

struct RecordCache {
    target: usize,
    history: Vec<usize>,
    attention: Option<attention::AttentionCache>,
    senet: senet::SenetCache,
    cross: cross::CrossCache,
    bilinear: bilinear::BilinearCache,
    mlp: mlp::MlpCache,
}

fn check_inputs(record: &EncodedRecord, params: &ModelParams, fused: &Tensor) -> Result<()> {
    let shape = params.shape();
    if fused.rank() != 2 || fused.rows() != shape.vocab_size || fused.cols() != shape.fused_width {
        return Err(Error::dim(
            "forward",
            format!("fused table {:?} does not match model shape {shape:?}", fused.shape()),
        ));
    }
    let bad = std::iter::once(&record.target)
        .chain(&record.history)
        .find(|&&i| i >= shape.vocab_size);
    if let Some(i) = bad {
        return Err(Error::invalid(format!("item index {i} outside vocabulary")));
    }
    if record.target == PADDING_INDEX {
        return Err(Error::invalid("target cannot be the padding item"));
    }
    Ok(())
}

fn forward_cached(
    record: &EncodedRecord,
    params: &ModelParams,
    fused: &Tensor,
    hyper: &Hyperparams,
) -> Result<(f64, RecordCache)> {
    check_inputs(record, params, fused)?;
    let d = params.embedding.dim();
    let emb = &params.embedding;

    let id_part = emb.id_part(record.target);
    let fused_part = emb.fused_part(record.target, fused);
    let target: Vec<f64> = id_part.iter().zip(&fused_part).map(|(a, b)| a + b).collect();

    let start = record.history.len().saturating_sub(hyper.max_history_len);
    let history: Vec<usize> = record.history[start..]
        .iter()
        .copied()
        .filter(|&i| i != PADDING_INDEX)
        .collect();
    let (pooled, attention) = if history.is_empty() {
        (vec![0.0; d], None)
    } else {
        let rows: Vec<f64> = history.iter().flat_map(|&i| emb.lookup(i, fused)).collect();
        let mask = vec![true; history.len()];
        let (pooled, cache) = attention::forward(&params.attention, &target, &rows, &mask)?;
        (pooled, Some(cache))
    };

    let mut raw = Vec::with_capacity(FIELD_COUNT * d);
    raw.extend_from_slice(&id_part);
    raw.extend_from_slice(&fused_part);
    raw.extend_from_slice(&pooled);

    let (gated, senet) = senet::forward(&params.senet, &raw, d);
    let (crossed, cross) = cross::forward(&params.cross, &gated);
    let (pairs, bilinear) = bilinear::forward(&params.bilinear, &gated, d);

    let mut mlp_in = Vec::with_capacity(hyper.mlp_input_width());
    mlp_in.extend(crossed);
    mlp_in.extend(pairs);
    mlp_in.extend(raw);
    let (logit, mlp) = mlp::forward(&params.mlp, &params.output, &mlp_in);
    if !logit.is_finite() {
        return Err(Error::NonFinite("forward logit".into()));
    }
    let cache = RecordCache {
        target: record.target,
        history,
        attention,
        senet,
        cross,
        bilinear,
        mlp,
    };
    Ok((logit, cache))
}

fn backward_record(params: &ModelParams, cache: &RecordCache, fused: &Tensor, g_logit: f64, grads: &mut ModelParams) {
    let d = params.embedding.dim();
    let dx = FIELD_COUNT * d;
    let g_in = mlp::backward(
        &params.mlp,
        &params.output,
        &cache.mlp,
        g_logit,
        &mut grads.mlp,
        &mut grads.output,
    );
    let (g_crossed, rest) = g_in.split_at(dx);
    let (g_pairs, g_raw) = rest.split_at(rest.len() - dx);

    let mut g_gated = cross::backward(&params.cross, &cache.cross, g_crossed, &mut grads.cross);
    let g_bil = bilinear::backward(&params.bilinear, &cache.bilinear, g_pairs, d, &mut grads.bilinear);
    for (a, b) in g_gated.iter_mut().zip(g_bil) {
        *a += b;
    }
    let mut g_fields = senet::backward(&params.senet, &cache.senet, &g_gated, d, &mut grads.senet);
    for (a, b) in g_fields.iter_mut().zip(g_raw) {
        *a += b;
    }

    let mut g_id = g_fields[..d].to_vec();
    let mut g_fused = g_fields[d..2 * d].to_vec();
    if let Some(att) = &cache.attention {
        let (g_target, g_rows) = attention::backward(&params.attention, att, &g_fields[2 * d..], &mut grads.attention);
        for t in 0..d {
            g_id[t] += g_target[t];
            g_fused[t] += g_target[t];
        }
        for (j, &item) in cache.history.iter().enumerate() {
            let g = &g_rows[j * d..(j + 1) * d];
            EmbeddingParams::accumulate(&mut grads.embedding, item, fused, g, g);
        }
    }
    EmbeddingParams::accumulate(&mut grads.embedding, cache.target, fused, &g_id, &g_fused);
}

/// Raw score before the sigmoid.
pub fn logit(record: &EncodedRecord, params: &ModelParams, fused: &Tensor, hyper: &Hyperparams) -> Result<f64> {
    forward_cached(record, params, fused, hyper).map(|(z, _)| z)
}

/// Click probability for one record.
pub fn forward(record: &EncodedRecord, params: &ModelParams, fused: &Tensor, hyper: &Hyperparams) -> Result<f64> {
    logit(record, params, fused, hyper).map(sigmoid)
}

/// Mean binary cross-entropy over `batch`, forward only.
pub fn batch_loss(batch: &[EncodedRecord], params: &ModelParams, fused: &Tensor, hyper: &Hyperparams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    for (i, r) in batch.iter().enumerate() {
        let p = forward(r, params, fused, hyper)?;
        let l = bce_loss(p, r.label);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        total += l;
    }
    Ok(total / batch.len() as f64)
}

/// Mean BCE over `batch` and its gradient for every named parameter.
pub fn backward(
    batch: &[EncodedRecord],
    params: &ModelParams,
    fused: &Tensor,
    hyper: &Hyperparams,
) -> Result<(f64, ModelParams)> {
    let mut grads = params.zeros_like();
    let loss = accumulate_gradients(batch, params, fused, hyper, &mut grads)?;
    Ok((loss, grads))
}

/// Like [`backward`] but adds into an existing gradient buffer (which is not cleared).
pub fn accumulate_gradients(
    batch: &[EncodedRecord],
    params: &ModelParams,
    fused: &Tensor,
    hyper: &Hyperparams,
    grads: &mut ModelParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (i, r) in batch.iter().enumerate() {
        let (z, cache) = match forward_cached(r, params, fused, hyper) {
            Err(e) if e.is_numeric() => return Err(Error::NonFiniteLoss { index: i }),
            other => other?,
        };
        let p = sigmoid(z);
        let l = bce_loss(p, r.label);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index: i });
        }
        total += l;
        backward_record(params, &cache, fused, (p - f64::from(r.label)) * scale, grads);
    }
    Ok(total * scale)
}
