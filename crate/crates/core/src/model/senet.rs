//! Squeeze-and-excitation over feature fields.

use crate::error::{Error, Result};
use crate::tensor::{add_outer, mat_vec, relu, sigmoid, vec_mat, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SenetParams {
    /// `[fields × reduced]`
    pub squeeze: Tensor,
    /// `[reduced × fields]`
    pub excite: Tensor,
}

impl SenetParams {
    pub fn fields(&self) -> usize {
        self.squeeze.rows()
    }

    pub fn reduced(&self) -> usize {
        self.squeeze.cols()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SenetCache {
    fields: Vec<f64>,
    z: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    pub(crate) gates: Vec<f64>,
}

/// `fields` is `[F × d]` row-major; returns the gated fields in the same layout.
pub(crate) fn forward(params: &SenetParams, fields: &[f64], d: usize) -> (Vec<f64>, SenetCache) {
    let f = params.fields();
    let r = params.reduced();
    let z: Vec<f64> = fields
        .chunks_exact(d)
        .map(|c| c.iter().sum::<f64>() / d as f64)
        .collect();
    let hidden_pre = vec_mat(&z, params.squeeze.data(), r);
    let hidden: Vec<f64> = hidden_pre.iter().map(|&v| relu(v)).collect();
    let gates: Vec<f64> = vec_mat(&hidden, params.excite.data(), f)
        .into_iter()
        .map(sigmoid)
        .collect();
    let out = fields
        .chunks_exact(d)
        .zip(&gates)
        .flat_map(|(c, a)| c.iter().map(move |v| a * v))
        .collect();
    let cache = SenetCache {
        fields: fields.to_vec(),
        z,
        hidden_pre,
        hidden,
        gates,
    };
    (out, cache)
}

pub(crate) fn backward(
    params: &SenetParams,
    cache: &SenetCache,
    g_out: &[f64],
    d: usize,
    grads: &mut SenetParams,
) -> Vec<f64> {
    let f = params.fields();
    let r = params.reduced();
    let mut g_fields: Vec<f64> = g_out
        .chunks_exact(d)
        .zip(&cache.gates)
        .flat_map(|(g, a)| g.iter().map(move |v| a * v))
        .collect();
    // dL/dgate_f = <g_out_f, field_f>, then through the sigmoid
    let g_logit: Vec<f64> = (0..f)
        .map(|i| {
            let a = cache.gates[i];
            let ga: f64 = g_out[i * d..(i + 1) * d]
                .iter()
                .zip(&cache.fields[i * d..(i + 1) * d])
                .map(|(g, x)| g * x)
                .sum();
            ga * a * (1.0 - a)
        })
        .collect();
    add_outer(grads.excite.data_mut(), &cache.hidden, &g_logit);
    let g_hidden = mat_vec(params.excite.data(), &g_logit, f);
    let g_pre: Vec<f64> = g_hidden
        .iter()
        .zip(&cache.hidden_pre)
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect();
    add_outer(grads.squeeze.data_mut(), &cache.z, &g_pre);
    let g_z = mat_vec(params.squeeze.data(), &g_pre, r);
    for (i, gz) in g_z.iter().enumerate() {
        for v in &mut g_fields[i * d..(i + 1) * d] {
            *v += gz / d as f64;
        }
    }
    g_fields
}

/// Rescales each field (row of `fields`) by its learned gate in (0, 1).
pub fn senet_reweight(fields: &Tensor, params: &SenetParams) -> Result<Tensor> {
    if fields.rank() != 2
        || fields.rows() != params.fields()
        || params.excite.shape() != [params.reduced(), params.fields()]
    {
        return Err(Error::dim(
            "senet_reweight",
            format!(
                "fields {:?}, squeeze {:?}, excite {:?}",
                fields.shape(),
                params.squeeze.shape(),
                params.excite.shape()
            ),
        ));
    }
    let (out, _) = forward(params, fields.data(), fields.cols());
    Tensor::new(fields.shape(), out)
}
