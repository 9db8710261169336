//! Layer-by-layer and end-to-end gradient checks on random inputs.
//!
//! Each isolated layer is checked against the scalar loss `Σ c ⊙ out` for a
//! random coefficient vector `c`, differentiating weights and layer inputs
//! together. The composed model is checked on mean BCE over a 4-record batch
//! that exercises empty, padded, over-length and out-of-vocabulary inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{finite_diff_check, GradCheckReport, NamedParams, TensorSet};
use crate::error::Result;
use crate::model::{
    self, attention, bilinear, cross, mlp, senet, AttentionParams, BilinearParams, CrossLayer, Dense, EmbeddingParams,
    EncodedRecord, Hyperparams, ModelParams, ModelShape, SenetParams,
};
use crate::tensor::{dot, Tensor};

pub const GRADCHECK_EPS: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<(String, GradCheckReport)>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < GRADCHECK_TOLERANCE
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("random tensor")
}

fn weighted(c: &[f64], out: &[f64]) -> f64 {
    dot(c, out)
}

fn check_attention(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (heads, d, dh, len) = (2, 4, 2, 3);
    let mask = [true, false, true];
    let mut set = TensorSet::default();
    set.push("attention.query", random(rng, &[heads, d, dh], 1.0));
    set.push("attention.key", random(rng, &[heads, d, dh], 1.0));
    set.push("attention.value", random(rng, &[heads, d, dh], 1.0));
    set.push("attention.output", random(rng, &[heads * dh, d], 1.0));
    set.push("target", random(rng, &[d], 1.0));
    set.push("history", random(rng, &[len, d], 1.0));
    let c = random(rng, &[d], 1.0);

    let params_of = |s: &TensorSet| AttentionParams {
        query: s.get("attention.query").clone(),
        key: s.get("attention.key").clone(),
        value: s.get("attention.value").clone(),
        output: s.get("attention.output").clone(),
    };
    let loss = |s: &TensorSet| {
        let (pooled, _) = attention::forward(&params_of(s), s.get("target").data(), s.get("history").data(), &mask)?;
        Ok(weighted(c.data(), &pooled))
    };

    let p = params_of(&set);
    let (_, cache) = attention::forward(&p, set.get("target").data(), set.get("history").data(), &mask)?;
    let mut g = AttentionParams {
        query: Tensor::zeros_like(&p.query),
        key: Tensor::zeros_like(&p.key),
        value: Tensor::zeros_like(&p.value),
        output: Tensor::zeros_like(&p.output),
    };
    let (g_target, g_history) = attention::backward(&p, &cache, c.data(), &mut g);
    let grads = TensorSet(vec![
        ("attention.query".into(), g.query),
        ("attention.key".into(), g.key),
        ("attention.value".into(), g.value),
        ("attention.output".into(), g.output),
        ("target".into(), Tensor::new(&[d], g_target)?),
        ("history".into(), Tensor::new(&[len, d], g_history)?),
    ]);
    finite_diff_check(loss, &set, &grads, GRADCHECK_EPS)
}

fn check_senet(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (f, r, d) = (3, 2, 4);
    let mut set = TensorSet::default();
    set.push("senet.squeeze", random(rng, &[f, r], 1.0));
    set.push("senet.excite", random(rng, &[r, f], 1.0));
    set.push("fields", random(rng, &[f, d], 2.0));
    let c = random(rng, &[f * d], 1.0);

    let params_of = |s: &TensorSet| SenetParams {
        squeeze: s.get("senet.squeeze").clone(),
        excite: s.get("senet.excite").clone(),
    };
    let loss = |s: &TensorSet| {
        let (out, _) = senet::forward(&params_of(s), s.get("fields").data(), d);
        Ok(weighted(c.data(), &out))
    };
    let p = params_of(&set);
    let (_, cache) = senet::forward(&p, set.get("fields").data(), d);
    let mut g = SenetParams {
        squeeze: Tensor::zeros_like(&p.squeeze),
        excite: Tensor::zeros_like(&p.excite),
    };
    let g_fields = senet::backward(&p, &cache, c.data(), d, &mut g);
    let grads = TensorSet(vec![
        ("senet.squeeze".into(), g.squeeze),
        ("senet.excite".into(), g.excite),
        ("fields".into(), Tensor::new(&[f, d], g_fields)?),
    ]);
    finite_diff_check(loss, &set, &grads, GRADCHECK_EPS)
}

fn check_cross(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (width, depth) = (6, 3);
    let mut set = TensorSet::default();
    for l in 0..depth {
        set.push(format!("cross.{l}.weight"), random(rng, &[width], 0.5));
        set.push(format!("cross.{l}.bias"), random(rng, &[width], 0.5));
    }
    set.push("x0", random(rng, &[width], 1.0));
    let c = random(rng, &[width], 1.0);

    let layers_of = |s: &TensorSet| -> Vec<CrossLayer> {
        (0..depth)
            .map(|l| CrossLayer {
                weight: s.get(&format!("cross.{l}.weight")).clone(),
                bias: s.get(&format!("cross.{l}.bias")).clone(),
            })
            .collect()
    };
    let loss = |s: &TensorSet| Ok(weighted(c.data(), &cross::forward(&layers_of(s), s.get("x0").data()).0));
    let layers = layers_of(&set);
    let (_, cache) = cross::forward(&layers, set.get("x0").data());
    let mut g: Vec<CrossLayer> = layers
        .iter()
        .map(|l| CrossLayer {
            weight: Tensor::zeros_like(&l.weight),
            bias: Tensor::zeros_like(&l.bias),
        })
        .collect();
    let g_x0 = cross::backward(&layers, &cache, c.data(), &mut g);
    let mut grads = TensorSet::default();
    for (l, layer) in g.into_iter().enumerate() {
        grads.push(format!("cross.{l}.weight"), layer.weight);
        grads.push(format!("cross.{l}.bias"), layer.bias);
    }
    grads.push("x0", Tensor::vector(g_x0)?);
    finite_diff_check(loss, &set, &grads, GRADCHECK_EPS)
}

fn check_bilinear(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (f, d) = (3, 4);
    let mut set = TensorSet::default();
    set.push("bilinear.weight", random(rng, &[d, d], 1.0));
    set.push("fields", random(rng, &[f, d], 1.0));
    let c = random(rng, &[bilinear::pair_count(f) * d], 1.0);

    let params_of = |s: &TensorSet| BilinearParams {
        weight: s.get("bilinear.weight").clone(),
    };
    let loss = |s: &TensorSet| {
        Ok(weighted(
            c.data(),
            &bilinear::forward(&params_of(s), s.get("fields").data(), d).0,
        ))
    };
    let p = params_of(&set);
    let (_, cache) = bilinear::forward(&p, set.get("fields").data(), d);
    let mut g = BilinearParams {
        weight: Tensor::zeros_like(&p.weight),
    };
    let g_fields = bilinear::backward(&p, &cache, c.data(), d, &mut g);
    let grads = TensorSet(vec![
        ("bilinear.weight".into(), g.weight),
        ("fields".into(), Tensor::new(&[f, d], g_fields)?),
    ]);
    finite_diff_check(loss, &set, &grads, GRADCHECK_EPS)
}

fn check_mlp(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let widths = [5, 4, 3];
    let mut set = TensorSet::default();
    for l in 0..widths.len() - 1 {
        set.push(format!("mlp.{l}.weight"), random(rng, &[widths[l], widths[l + 1]], 1.0));
        set.push(format!("mlp.{l}.bias"), random(rng, &[widths[l + 1]], 0.5));
    }
    set.push("output.weight", random(rng, &[widths[widths.len() - 1], 1], 1.0));
    set.push("output.bias", random(rng, &[1], 0.5));
    set.push("x", random(rng, &[widths[0]], 1.0));

    let layers_of = |s: &TensorSet| -> (Vec<Dense>, Dense) {
        let hidden = (0..widths.len() - 1)
            .map(|l| Dense {
                weight: s.get(&format!("mlp.{l}.weight")).clone(),
                bias: s.get(&format!("mlp.{l}.bias")).clone(),
            })
            .collect();
        let output = Dense {
            weight: s.get("output.weight").clone(),
            bias: s.get("output.bias").clone(),
        };
        (hidden, output)
    };
    let loss = |s: &TensorSet| {
        let (hidden, output) = layers_of(s);
        Ok(mlp::forward(&hidden, &output, s.get("x").data()).0)
    };
    let (hidden, output) = layers_of(&set);
    let (_, cache) = mlp::forward(&hidden, &output, set.get("x").data());
    let zero = |l: &Dense| Dense {
        weight: Tensor::zeros_like(&l.weight),
        bias: Tensor::zeros_like(&l.bias),
    };
    let mut g_hidden: Vec<Dense> = hidden.iter().map(zero).collect();
    let mut g_output = zero(&output);
    let g_x = mlp::backward(&hidden, &output, &cache, 1.0, &mut g_hidden, &mut g_output);
    let mut grads = TensorSet::default();
    for (l, layer) in g_hidden.into_iter().enumerate() {
        grads.push(format!("mlp.{l}.weight"), layer.weight);
        grads.push(format!("mlp.{l}.bias"), layer.bias);
    }
    grads.push("output.weight", g_output.weight);
    grads.push("output.bias", g_output.bias);
    grads.push("x", Tensor::vector(g_x)?);
    finite_diff_check(loss, &set, &grads, GRADCHECK_EPS)
}

/// Id table and fused projection, including a padding lookup that must stay inert.
fn check_embedding(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (vocab, d_f, d) = (5, 3, 4);
    let fused = random(rng, &[vocab, d_f], 1.0);
    let indices = [2, 0, 4, 2, 1];
    let mut set = TensorSet::default();
    set.push("embedding.id", random(rng, &[vocab, d], 1.0));
    set.push("embedding.fused_projection", random(rng, &[d_f, d], 1.0));
    let c = random(rng, &[indices.len(), d], 1.0);

    let params_of = |s: &TensorSet| EmbeddingParams {
        id: s.get("embedding.id").clone(),
        fused_projection: s.get("embedding.fused_projection").clone(),
    };
    let loss = |s: &TensorSet| {
        let out = model::embed_lookup(&params_of(s), &indices, &fused)?;
        Ok(weighted(c.data(), out.data()))
    };
    let p = params_of(&set);
    let mut g = EmbeddingParams {
        id: Tensor::zeros_like(&p.id),
        fused_projection: Tensor::zeros_like(&p.fused_projection),
    };
    for (k, &i) in indices.iter().enumerate() {
        let gk = c.row(k);
        EmbeddingParams::accumulate(&mut g, i, &fused, gk, gk);
    }
    let grads = TensorSet(vec![
        ("embedding.id".into(), g.id),
        ("embedding.fused_projection".into(), g.fused_projection),
    ]);
    finite_diff_check(loss, &set, &grads, GRADCHECK_EPS)
}

/// Small hyperparameters for the composed-model check.
pub(crate) fn suite_hyperparams() -> Hyperparams {
    Hyperparams {
        d_id: 4,
        heads: 2,
        senet_reduction: 2,
        cross_layers: 2,
        mlp_layers: vec![6, 4],
        max_history_len: 3,
        ..Hyperparams::default()
    }
}

/// Random parameters (biases included) and a fused table with a zero OOV row.
pub(crate) fn random_model(hyper: &Hyperparams, rng: &mut ChaCha8Rng) -> Result<(ModelParams, Tensor)> {
    let shape = ModelShape {
        vocab_size: 6,
        fused_width: 3,
    };
    let mut params = ModelParams::init(hyper, shape, rng)?;
    for (name, t) in params.named_mut() {
        if name.ends_with("bias") {
            *t = random(rng, t.shape(), 0.3);
        }
    }
    let mut fused = random(rng, &[shape.vocab_size, shape.fused_width], 1.0);
    fused.row_mut(model::PADDING_INDEX).fill(0.0);
    fused.row_mut(model::OOV_INDEX).fill(0.0);
    Ok((params, fused))
}

pub(crate) fn suite_batch() -> Vec<EncodedRecord> {
    vec![
        EncodedRecord {
            history: vec![2, 3, 4],
            target: 5,
            label: 1,
        },
        EncodedRecord {
            history: vec![],
            target: 2,
            label: 0,
        },
        EncodedRecord {
            history: vec![0, 5, 1, 0],
            target: 1,
            label: 1,
        },
        EncodedRecord {
            history: vec![5, 4, 3, 2, 2],
            target: 3,
            label: 0,
        },
    ]
}

fn check_model(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let hyper = suite_hyperparams();
    let (params, fused) = random_model(&hyper, rng)?;
    let batch = suite_batch();
    let (_, grads) = model::backward(&batch, &params, &fused, &hyper)?;
    finite_diff_check(
        |p: &ModelParams| model::batch_loss(&batch, p, &fused, &hyper),
        &params,
        &grads,
        GRADCHECK_EPS,
    )
}

/// Runs every check with inputs drawn from `seed`.
pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    type Check = fn(&mut ChaCha8Rng) -> Result<GradCheckReport>;
    let checks: [(&str, Check); 7] = [
        ("attention", check_attention),
        ("senet", check_senet),
        ("cross", check_cross),
        ("bilinear", check_bilinear),
        ("mlp", check_mlp),
        ("embedding", check_embedding),
        ("model", check_model),
    ];
    let mut report = SuiteReport {
        seed,
        checks: Vec::with_capacity(checks.len()),
    };
    for (name, check) in checks {
        report.checks.push((name.to_string(), check(&mut rng)?));
    }
    Ok(report)
}
