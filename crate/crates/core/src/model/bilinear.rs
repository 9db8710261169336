//! Pairwise bilinear field interaction with one shared matrix
//! ("field-all"): `p_ij = (v_i·W) ⊙ v_j` for every `i < j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{add_outer, mat_vec, vec_mat, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BilinearVariant {
    #[default]
    FieldAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearParams {
    /// `[d_id × d_id]`
    pub weight: Tensor,
}

pub fn pair_count(fields: usize) -> usize {
    fields * fields.saturating_sub(1) / 2
}

#[derive(Debug, Clone)]
pub(crate) struct BilinearCache {
    fields: Vec<f64>,
    /// `v_i·W` for every field.
    projected: Vec<f64>,
}

pub(crate) fn forward(params: &BilinearParams, fields: &[f64], d: usize) -> (Vec<f64>, BilinearCache) {
    let f = fields.len() / d;
    let projected: Vec<f64> = fields
        .chunks_exact(d)
        .flat_map(|v| vec_mat(v, params.weight.data(), d))
        .collect();
    let mut out = Vec::with_capacity(pair_count(f) * d);
    for i in 0..f {
        for j in i + 1..f {
            let pi = &projected[i * d..(i + 1) * d];
            let vj = &fields[j * d..(j + 1) * d];
            out.extend(pi.iter().zip(vj).map(|(a, b)| a * b));
        }
    }
    let cache = BilinearCache {
        fields: fields.to_vec(),
        projected,
    };
    (out, cache)
}

pub(crate) fn backward(
    params: &BilinearParams,
    cache: &BilinearCache,
    g_out: &[f64],
    d: usize,
    grads: &mut BilinearParams,
) -> Vec<f64> {
    let f = cache.fields.len() / d;
    let mut g_fields = vec![0.0; f * d];
    let mut g_projected = vec![0.0; f * d];
    let mut pair = 0;
    for i in 0..f {
        for j in i + 1..f {
            let g = &g_out[pair * d..(pair + 1) * d];
            for t in 0..d {
                g_fields[j * d + t] += g[t] * cache.projected[i * d + t];
                g_projected[i * d + t] += g[t] * cache.fields[j * d + t];
            }
            pair += 1;
        }
    }
    for i in 0..f {
        let gp = &g_projected[i * d..(i + 1) * d];
        add_outer(grads.weight.data_mut(), &cache.fields[i * d..(i + 1) * d], gp);
        for (a, b) in g_fields[i * d..(i + 1) * d]
            .iter_mut()
            .zip(mat_vec(params.weight.data(), gp, d))
        {
            *a += b;
        }
    }
    g_fields
}

/// Concatenation of all pairwise interactions in lexicographic `(i, j)` order.
pub fn bilinear_interaction(fields: &Tensor, params: &BilinearParams) -> Result<Vec<f64>> {
    let d = params.weight.rows();
    if fields.rank() != 2 || fields.cols() != d || params.weight.cols() != d {
        return Err(Error::dim(
            "bilinear_interaction",
            format!("fields {:?}, weight {:?}", fields.shape(), params.weight.shape()),
        ));
    }
    if fields.rows() < 2 {
        return Err(Error::invalid("bilinear interaction needs at least two fields"));
    }
    Ok(forward(params, fields.data(), d).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_pair() {
        // v1·W = (1+2, 0+2) = (3, 2); p12 = (3·3, 2·4)
        let params = BilinearParams {
            weight: Tensor::new(&[2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap(),
        };
        let fields = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(bilinear_interaction(&fields, &params).unwrap(), vec![9.0, 8.0]);
    }

    #[test]
    fn identity_weight_is_hadamard() {
        let params = BilinearParams {
            weight: Tensor::identity(2),
        };
        let fields = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5]).unwrap();
        let out = bilinear_interaction(&fields, &params).unwrap();
        assert_eq!(out, vec![3.0, 8.0, -1.0, 1.0, -3.0, 2.0]);
    }

    #[test]
    fn zero_field_zeroes_its_pairs() {
        let params = BilinearParams {
            weight: Tensor::new(&[2, 2], vec![0.3, -1.0, 2.0, 0.7]).unwrap(),
        };
        let fields = Tensor::new(&[3, 2], vec![1.0, 2.0, 0.0, 0.0, -1.0, 0.5]).unwrap();
        let out = bilinear_interaction(&fields, &params).unwrap();
        // pairs (0,1), (0,2), (1,2)
        assert_eq!(&out[0..2], &[0.0, 0.0]);
        assert_eq!(&out[4..6], &[0.0, 0.0]);
        assert_ne!(&out[2..4], &[0.0, 0.0]);
    }

    #[test]
    fn single_field_rejected() {
        let params = BilinearParams {
            weight: Tensor::identity(2),
        };
        assert!(bilinear_interaction(&Tensor::zeros(&[1, 2]), &params).is_err());
    }
}
