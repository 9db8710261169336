//! DCN-style cross layers: `x_{l+1} = x0 · (w_l·x_l) + b_l + x_l`.

use crate::tensor::{dot, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct CrossLayer {
    /// `[d_x]`
    pub weight: Tensor,
    /// `[d_x]`
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub(crate) struct CrossCache {
    x0: Vec<f64>,
    /// Input of each layer.
    xs: Vec<Vec<f64>>,
    /// `w_l·x_l` per layer.
    proj: Vec<f64>,
}

pub(crate) fn forward(layers: &[CrossLayer], x0: &[f64]) -> (Vec<f64>, CrossCache) {
    let mut x = x0.to_vec();
    let mut xs = Vec::with_capacity(layers.len());
    let mut proj = Vec::with_capacity(layers.len());
    for layer in layers {
        let s = dot(layer.weight.data(), &x);
        let next: Vec<f64> = x0
            .iter()
            .zip(layer.bias.data())
            .zip(&x)
            .map(|((a, b), xl)| a * s + b + xl)
            .collect();
        xs.push(std::mem::replace(&mut x, next));
        proj.push(s);
    }
    (
        x,
        CrossCache {
            x0: x0.to_vec(),
            xs,
            proj,
        },
    )
}

/// Returns `dL/dx0`.
pub(crate) fn backward(layers: &[CrossLayer], cache: &CrossCache, g_out: &[f64], grads: &mut [CrossLayer]) -> Vec<f64> {
    let mut g = g_out.to_vec();
    let mut g_x0 = vec![0.0; g.len()];
    for l in (0..layers.len()).rev() {
        let xl = &cache.xs[l];
        let g_s = dot(&cache.x0, &g);
        for (i, gi) in g.iter().enumerate() {
            grads[l].bias.data_mut()[i] += gi;
            grads[l].weight.data_mut()[i] += g_s * xl[i];
            g_x0[i] += gi * cache.proj[l];
        }
        let w = layers[l].weight.data();
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi += g_s * wi;
        }
    }
    for (a, b) in g_x0.iter_mut().zip(&g) {
        *a += b;
    }
    g_x0
}

/// Applies the whole cross stack to `x0`. An empty stack is the identity.
pub fn cross_stack(x0: &[f64], layers: &[CrossLayer]) -> Vec<f64> {
    assert!(
        layers
            .iter()
            .all(|l| l.weight.len() == x0.len() && l.bias.len() == x0.len()),
        "cross layer width must match x0"
    );
    forward(layers, x0).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(w: &[f64], b: &[f64]) -> CrossLayer {
        CrossLayer {
            weight: Tensor::vector(w.to_vec()).unwrap(),
            bias: Tensor::vector(b.to_vec()).unwrap(),
        }
    }

    #[test]
    fn hand_computed_single_layer() {
        // w·x0 = 3 → x1 = (1,2)·3 + (1,2)
        let out = cross_stack(&[1.0, 2.0], &[layer(&[1.0, 1.0], &[0.0, 0.0])]);
        assert_eq!(out, vec![4.0, 8.0]);
    }

    #[test]
    fn empty_stack_is_identity() {
        assert_eq!(cross_stack(&[1.5, -2.0, 3.0], &[]), vec![1.5, -2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn zero_weights_are_identity(
            x0 in prop::collection::vec(-1e3f64..1e3, 1..20),
            depth in 0usize..4,
        ) {
            let zeros = vec![0.0; x0.len()];
            let layers: Vec<CrossLayer> = (0..depth).map(|_| layer(&zeros, &zeros)).collect();
            prop_assert_eq!(cross_stack(&x0, &layers), x0);
        }
    }
}
