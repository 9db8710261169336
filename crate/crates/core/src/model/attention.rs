//! Multi-head target attention: the candidate item queries the user's
//! behavior history, and the per-head pooled values are mixed by an output
//! projection.

use crate::error::{Error, Result};
use crate::tensor::{add_outer, dot, mat_vec, softmax_masked, softmax_masked_backward, vec_mat, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `[heads × d_id × head_dim]`
    pub query: Tensor,
    /// `[heads × d_id × head_dim]`
    pub key: Tensor,
    /// `[heads × d_id × head_dim]`
    pub value: Tensor,
    /// `[(heads·head_dim) × d_id]`
    pub output: Tensor,
}

impl AttentionParams {
    pub fn heads(&self) -> usize {
        self.query.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.query.shape()[1]
    }

    pub fn head_dim(&self) -> usize {
        self.query.shape()[2]
    }

    fn head_slab<'a>(&self, w: &'a Tensor, h: usize) -> &'a [f64] {
        let size = self.dim() * self.head_dim();
        &w.data()[h * size..(h + 1) * size]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    target: Vec<f64>,
    history: Vec<f64>,
    mask: Vec<bool>,
    /// `[heads × head_dim]`
    q: Vec<f64>,
    /// `[heads × len × head_dim]`, zero rows where masked
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[heads × len]`
    probs: Vec<f64>,
    concat: Vec<f64>,
}

impl AttentionCache {
    #[cfg(test)]
    pub(crate) fn probs(&self) -> &[f64] {
        &self.probs
    }
}

pub(crate) fn forward(
    params: &AttentionParams,
    target: &[f64],
    history: &[f64],
    mask: &[bool],
) -> Result<(Vec<f64>, AttentionCache)> {
    let (heads, d, dh) = (params.heads(), params.dim(), params.head_dim());
    let len = mask.len();
    debug_assert_eq!(history.len(), len * d);
    let scale = 1.0 / (dh as f64).sqrt();

    let mut q = Vec::with_capacity(heads * dh);
    let mut k = vec![0.0; heads * len * dh];
    let mut v = vec![0.0; heads * len * dh];
    let mut probs = Vec::with_capacity(heads * len);
    let mut concat = Vec::with_capacity(heads * dh);

    for h in 0..heads {
        let wq = params.head_slab(&params.query, h);
        let wk = params.head_slab(&params.key, h);
        let wv = params.head_slab(&params.value, h);
        let qh = vec_mat(target, wq, dh);
        let mut scores = vec![0.0; len];
        for j in 0..len {
            if !mask[j] {
                continue;
            }
            let row = &history[j * d..(j + 1) * d];
            let off = (h * len + j) * dh;
            k[off..off + dh].copy_from_slice(&vec_mat(row, wk, dh));
            v[off..off + dh].copy_from_slice(&vec_mat(row, wv, dh));
            scores[j] = dot(&qh, &k[off..off + dh]) * scale;
        }
        let p = softmax_masked(&scores, mask)?;
        let mut out = vec![0.0; dh];
        for (j, &pj) in p.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            let off = (h * len + j) * dh;
            for (o, vv) in out.iter_mut().zip(&v[off..off + dh]) {
                *o += pj * vv;
            }
        }
        q.extend(qh);
        probs.extend(p);
        concat.extend(out);
    }
    let pooled = vec_mat(&concat, params.output.data(), d);
    let cache = AttentionCache {
        target: target.to_vec(),
        history: history.to_vec(),
        mask: mask.to_vec(),
        q,
        k,
        v,
        probs,
        concat,
    };
    Ok((pooled, cache))
}

/// Returns `(dL/dtarget, dL/dhistory)`; parameter gradients are accumulated into `grads`.
pub(crate) fn backward(
    params: &AttentionParams,
    cache: &AttentionCache,
    g_pooled: &[f64],
    grads: &mut AttentionParams,
) -> (Vec<f64>, Vec<f64>) {
    let (heads, d, dh) = (params.heads(), params.dim(), params.head_dim());
    let len = cache.mask.len();
    let scale = 1.0 / (dh as f64).sqrt();
    let slab = d * dh;

    add_outer(grads.output.data_mut(), &cache.concat, g_pooled);
    let g_concat = mat_vec(params.output.data(), g_pooled, d);

    let mut g_target = vec![0.0; d];
    let mut g_history = vec![0.0; len * d];
    for h in 0..heads {
        let g_out = &g_concat[h * dh..(h + 1) * dh];
        let probs = &cache.probs[h * len..(h + 1) * len];
        let qh = &cache.q[h * dh..(h + 1) * dh];

        let g_probs: Vec<f64> = (0..len)
            .map(|j| {
                if cache.mask[j] {
                    let off = (h * len + j) * dh;
                    dot(g_out, &cache.v[off..off + dh])
                } else {
                    0.0
                }
            })
            .collect();
        let g_scores = softmax_masked_backward(probs, &g_probs, &cache.mask);

        let mut g_q = vec![0.0; dh];
        for j in 0..len {
            if !cache.mask[j] {
                continue;
            }
            let off = (h * len + j) * dh;
            let kj = &cache.k[off..off + dh];
            let gs = g_scores[j] * scale;
            for t in 0..dh {
                g_q[t] += gs * kj[t];
            }
            let g_k: Vec<f64> = qh.iter().map(|x| gs * x).collect();
            let g_v: Vec<f64> = g_out.iter().map(|x| probs[j] * x).collect();

            let row = &cache.history[j * d..(j + 1) * d];
            add_outer(&mut grads.key.data_mut()[h * slab..(h + 1) * slab], row, &g_k);
            add_outer(&mut grads.value.data_mut()[h * slab..(h + 1) * slab], row, &g_v);
            let g_row = &mut g_history[j * d..(j + 1) * d];
            for (a, b) in g_row
                .iter_mut()
                .zip(mat_vec(params.head_slab(&params.key, h), &g_k, dh))
            {
                *a += b;
            }
            for (a, b) in g_row
                .iter_mut()
                .zip(mat_vec(params.head_slab(&params.value, h), &g_v, dh))
            {
                *a += b;
            }
        }
        add_outer(
            &mut grads.query.data_mut()[h * slab..(h + 1) * slab],
            &cache.target,
            &g_q,
        );
        for (a, b) in g_target
            .iter_mut()
            .zip(mat_vec(params.head_slab(&params.query, h), &g_q, dh))
        {
            *a += b;
        }
    }
    (g_target, g_history)
}

/// Pools `history` (`[len × d_id]`) into one `d_id` vector using attention
/// conditioned on `target`. At least one `mask` entry must be true.
pub fn target_attention(target: &[f64], history: &Tensor, mask: &[bool], params: &AttentionParams) -> Result<Vec<f64>> {
    let d = params.dim();
    if target.len() != d || history.rank() != 2 || history.cols() != d || history.rows() != mask.len() {
        return Err(Error::dim(
            "target_attention",
            format!(
                "target {} / history {:?} / mask {} against d_id {d}",
                target.len(),
                history.shape(),
                mask.len()
            ),
        ));
    }
    if params.heads() * params.head_dim() != params.output.rows() || params.output.cols() != d {
        return Err(Error::dim("target_attention", "output projection shape"));
    }
    forward(params, target, history.data(), mask).map(|(pooled, _)| pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_params(d: usize) -> AttentionParams {
        let eye = Tensor::identity(d);
        let stacked = Tensor::new(&[1, d, d], eye.data().to_vec()).unwrap();
        AttentionParams {
            query: stacked.clone(),
            key: stacked.clone(),
            value: stacked,
            output: eye,
        }
    }

    fn random_params(rng: &mut ChaCha8Rng, heads: usize, d: usize, dh: usize) -> AttentionParams {
        let mut r = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        AttentionParams {
            query: r(&[heads, d, dh]),
            key: r(&[heads, d, dh]),
            value: r(&[heads, d, dh]),
            output: r(&[heads * dh, d]),
        }
    }

    #[test]
    fn two_item_hand_example() {
        // softmax(1/√2, 0) = (e^{1/√2}, 1) / (e^{1/√2} + 1)
        let e = (1.0 / 2f64.sqrt()).exp();
        let expected = [e / (e + 1.0), 1.0 / (e + 1.0)];
        assert_abs_diff_eq!(expected[0], 0.6698, epsilon = 1e-4);

        let params = identity_params(2);
        let history = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (pooled, cache) = forward(&params, &[1.0, 0.0], history.data(), &[true, true]).unwrap();
        assert_abs_diff_eq!(cache.probs()[0], expected[0], epsilon = 1e-15);
        assert_abs_diff_eq!(pooled[0], expected[0], epsilon = 1e-15);
        assert_abs_diff_eq!(pooled[1], expected[1], epsilon = 1e-15);
    }

    #[test]
    fn single_key_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(&mut rng, 2, 4, 2);
        let row = vec![0.3, -1.2, 0.8, 2.0];
        let history = Tensor::new(&[1, 4], row.clone()).unwrap();
        let pooled = target_attention(&[5.0, 1.0, -4.0, 0.5], &history, &[true], &params).unwrap();

        let mut concat = Vec::new();
        for h in 0..2 {
            concat.extend(vec_mat(&row, params.head_slab(&params.value, h), 2));
        }
        let expected = vec_mat(&concat, params.output.data(), 4);
        for (a, b) in pooled.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn identical_rows_pool_like_single_item() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = random_params(&mut rng, 2, 4, 2);
        let row = vec![0.5, -0.1, 0.7, 1.1];
        let target = [0.2, 0.9, -0.3, 0.4];
        let one = target_attention(&target, &Tensor::new(&[1, 4], row.clone()).unwrap(), &[true], &params).unwrap();
        let many = target_attention(
            &target,
            &Tensor::new(&[3, 4], row.repeat(3)).unwrap(),
            &[true; 3],
            &params,
        )
        .unwrap();
        for (a, b) in one.iter().zip(&many) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn masked_rows_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = random_params(&mut rng, 2, 4, 2);
        let target = [0.2, 0.9, -0.3, 0.4];
        let rows: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = target_attention(
            &target,
            &Tensor::new(&[2, 4], rows.clone()).unwrap(),
            &[true; 2],
            &params,
        )
        .unwrap();
        let mut padded = rows.clone();
        padded.extend([9.0, -9.0, 9.0, -9.0, 0.0, 0.0, 0.0, 0.0]);
        let with_padding = target_attention(
            &target,
            &Tensor::new(&[4, 4], padded).unwrap(),
            &[true, true, false, false],
            &params,
        )
        .unwrap();
        for (a, b) in base.iter().zip(&with_padding) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn all_masked_is_contract_violation() {
        let params = identity_params(2);
        let history = Tensor::zeros(&[2, 2]);
        let err = target_attention(&[1.0, 0.0], &history, &[false, false], &params).unwrap_err();
        assert!(matches!(err, Error::EmptyHistory));
    }
}
