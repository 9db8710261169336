//! ReLU MLP head ending in a single logit.

use crate::tensor::{add_outer, dot, mat_vec, relu, vec_mat, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[in × out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec_mat(x, self.weight.data(), self.outputs());
        for (a, b) in z.iter_mut().zip(self.bias.data()) {
            *a += b;
        }
        z
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    /// Input to each hidden layer, then to the output layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

pub(crate) fn forward(hidden: &[Dense], output: &Dense, x: &[f64]) -> (f64, MlpCache) {
    let mut inputs = Vec::with_capacity(hidden.len() + 1);
    let mut pre = Vec::with_capacity(hidden.len());
    let mut h = x.to_vec();
    for layer in hidden {
        let z = layer.affine(&h);
        let next = z.iter().map(|&v| relu(v)).collect();
        inputs.push(std::mem::replace(&mut h, next));
        pre.push(z);
    }
    let logit = dot(&h, output.weight.data()) + output.bias.data()[0];
    inputs.push(h);
    (logit, MlpCache { inputs, pre })
}

/// Returns `dL/dx` for an upstream `dL/dlogit`.
pub(crate) fn backward(
    hidden: &[Dense],
    output: &Dense,
    cache: &MlpCache,
    g_logit: f64,
    g_hidden: &mut [Dense],
    g_output: &mut Dense,
) -> Vec<f64> {
    let last = cache.inputs.last().expect("mlp cache");
    add_outer(g_output.weight.data_mut(), last, &[g_logit]);
    g_output.bias.data_mut()[0] += g_logit;
    let mut g: Vec<f64> = output.weight.data().iter().map(|w| w * g_logit).collect();
    for l in (0..hidden.len()).rev() {
        let g_pre: Vec<f64> = g
            .iter()
            .zip(&cache.pre[l])
            .map(|(gv, z)| if *z > 0.0 { *gv } else { 0.0 })
            .collect();
        add_outer(g_hidden[l].weight.data_mut(), &cache.inputs[l], &g_pre);
        for (b, gv) in g_hidden[l].bias.data_mut().iter_mut().zip(&g_pre) {
            *b += gv;
        }
        g = mat_vec(hidden[l].weight.data(), &g_pre, hidden[l].outputs());
    }
    g
}
