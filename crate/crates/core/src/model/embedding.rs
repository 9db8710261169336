//! Unified item embedding: a trainable id vector plus a trainable projection
//! of the item's frozen multimodal vector.

use crate::error::{Error, Result};
use crate::model::PADDING_INDEX;
use crate::tensor::{add_outer, vec_mat, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    /// `[vocab × d_id]`; row 0 is the padding item and is never read.
    pub id: Tensor,
    /// `[d_fused × d_id]`.
    pub fused_projection: Tensor,
}

impl EmbeddingParams {
    pub fn dim(&self) -> usize {
        self.id.cols()
    }

    pub(crate) fn id_part(&self, index: usize) -> Vec<f64> {
        if index == PADDING_INDEX {
            return vec![0.0; self.dim()];
        }
        self.id.row(index).to_vec()
    }

    pub(crate) fn fused_part(&self, index: usize, fused: &Tensor) -> Vec<f64> {
        if index == PADDING_INDEX {
            return vec![0.0; self.dim()];
        }
        vec_mat(fused.row(index), self.fused_projection.data(), self.dim())
    }

    /// Full embedding of one item: `id[i] + fused[i]·P`.
    pub(crate) fn lookup(&self, index: usize, fused: &Tensor) -> Vec<f64> {
        let mut v = self.id_part(index);
        for (a, b) in v.iter_mut().zip(self.fused_part(index, fused)) {
            *a += b;
        }
        v
    }

    /// Accumulates gradients for item `index` given upstream gradients of
    /// its id part and of its projected fused part. Padding is skipped.
    pub(crate) fn accumulate(grads: &mut EmbeddingParams, index: usize, fused: &Tensor, g_id: &[f64], g_fused: &[f64]) {
        if index == PADDING_INDEX {
            return;
        }
        for (a, b) in grads.id.row_mut(index).iter_mut().zip(g_id) {
            *a += b;
        }
        add_outer(grads.fused_projection.data_mut(), fused.row(index), g_fused);
    }
}

/// Embeds a list of vocabulary indices into a `[n × d_id]` matrix.
///
/// `fused` is the `[vocab × d_fused]` table of frozen multimodal vectors,
/// row-aligned with the id embedding table. Index 0 maps to the zero vector.
pub fn embed_lookup(params: &EmbeddingParams, indices: &[usize], fused: &Tensor) -> Result<Tensor> {
    let vocab = params.id.rows();
    if fused.rows() != vocab || fused.cols() != params.fused_projection.rows() {
        return Err(Error::dim(
            "embed_lookup",
            format!(
                "fused table {:?} vs id table {:?} / projection {:?}",
                fused.shape(),
                params.id.shape(),
                params.fused_projection.shape()
            ),
        ));
    }
    if indices.is_empty() {
        return Err(Error::invalid("embed_lookup needs at least one index"));
    }
    let mut data = Vec::with_capacity(indices.len() * params.dim());
    for &i in indices {
        if i >= vocab {
            return Err(Error::invalid(format!("item index {i} outside vocabulary of {vocab}")));
        }
        data.extend(params.lookup(i, fused));
    }
    Tensor::new(&[indices.len(), params.dim()], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(vocab: usize, d_fused: usize, d: usize) -> EmbeddingParams {
        EmbeddingParams {
            id: Tensor::new(&[vocab, d], (0..vocab * d).map(|v| v as f64 * 0.1 + 0.05).collect()).unwrap(),
            fused_projection: Tensor::new(
                &[d_fused, d],
                (0..d_fused * d).map(|v| (v as f64 - 2.0) * 0.3).collect(),
            )
            .unwrap(),
        }
    }

    fn fused(vocab: usize, d_fused: usize) -> Tensor {
        Tensor::new(
            &[vocab, d_fused],
            (0..vocab * d_fused).map(|v| (v % 7) as f64 - 3.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn padding_is_zero() {
        let p = params(5, 3, 2);
        let out = embed_lookup(&p, &[0, 2], &fused(5, 3)).unwrap();
        assert_eq!(out.row(0), &[0.0, 0.0]);
        assert_ne!(out.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn zero_projection_gives_pure_id_embedding() {
        let mut p = params(5, 3, 2);
        p.fused_projection.fill(0.0);
        let out = embed_lookup(&p, &[1, 3], &fused(5, 3)).unwrap();
        assert_eq!(out.row(0), p.id.row(1));
        assert_eq!(out.row(1), p.id.row(3));
    }

    #[test]
    fn identity_projection_passes_fused_through() {
        let mut p = params(4, 2, 2);
        p.id.fill(0.0);
        p.fused_projection = Tensor::identity(2);
        let f = fused(4, 2);
        let out = embed_lookup(&p, &[1, 2, 3], &f).unwrap();
        for (r, i) in [1, 2, 3].into_iter().enumerate() {
            assert_eq!(out.row(r), f.row(i));
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let p = params(4, 2, 2);
        assert!(embed_lookup(&p, &[4], &fused(4, 2)).is_err());
        assert!(embed_lookup(&p, &[1], &fused(3, 2)).is_err());
    }

    #[test]
    fn padding_receives_no_gradient() {
        let p = params(4, 2, 2);
        let mut g = EmbeddingParams {
            id: Tensor::zeros_like(&p.id),
            fused_projection: Tensor::zeros_like(&p.fused_projection),
        };
        EmbeddingParams::accumulate(&mut g, 0, &fused(4, 2), &[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(g.id.max_abs(), 0.0);
        assert_eq!(g.fused_projection.max_abs(), 0.0);
    }
}
