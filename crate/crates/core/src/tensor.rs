//! Dense row-major `f64` arrays and the handful of operations the model needs.
//!
//! Every differentiable operation has a matching `*_backward` function that
//! maps an upstream gradient to gradients of the operation's inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::dim("tensor", format!("rank must be 1..=3, got {}", shape.len())));
    }
    if shape.contains(&0) {
        return Err(Error::dim("tensor", format!("dims must be positive, got {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor, validating the shape against the data length and rejecting non-finite values.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor construction".into()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// # Panics
    /// On a rank outside 1..=3 or a zero dimension.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = check_shape(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Self::new(&[n, d], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing dimensions (the row width).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.cols();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Element `(i, j)` of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    /// The `h`-th matrix of a rank-3 tensor, as a rank-2 tensor.
    pub fn slab(&self, h: usize) -> Tensor {
        assert_eq!(self.rank(), 3);
        let w = self.shape[1] * self.shape[2];
        Tensor {
            shape: vec![self.shape[1], self.shape[2]],
            data: self.data[h * w..(h + 1) * w].to_vec(),
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim(
                "transpose",
                format!("rank-2 required, got {:?}", self.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `C = A·B` for `A: [m×k]`, `B: [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::dim("matmul", format!("{:?} x {:?}", a.shape, b.shape)));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let x = a.data[i * k + t];
            if x == 0.0 {
                continue;
            }
            let src = &b.data[t * n..(t + 1) * n];
            for (o, w) in dst.iter_mut().zip(src) {
                *o += x * w;
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
    .ensure_finite("matmul")
}

/// Gradients of `C = A·B` given `dL/dC`: returns `(dL/dA, dL/dB)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = matmul(grad_out, &b.transpose()?)?;
    let gb = matmul(&a.transpose()?, grad_out)?;
    Ok((ga, gb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn activate(x: &Tensor, kind: Activation) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::NonFinite("activate input".into()));
    }
    let f = match kind {
        Activation::Sigmoid => sigmoid,
        Activation::Relu => relu,
    };
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| f(v)).collect(),
    })
}

/// `dL/dx` for `y = activate(x)`; `y` is the forward output.
pub fn activate_backward(x: &Tensor, y: &Tensor, grad_out: &Tensor, kind: Activation) -> Tensor {
    let data = match kind {
        Activation::Sigmoid => y
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(s, g)| g * s * (1.0 - s))
            .collect(),
        Activation::Relu => x
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
            .collect(),
    };
    Tensor {
        shape: x.shape.clone(),
        data,
    }
}

/// Softmax over the unmasked positions; masked positions are exactly zero.
pub fn softmax_masked(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::dim(
            "softmax_masked",
            format!("{} logits, {} mask entries", logits.len(), mask.len()),
        ));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyHistory);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax_masked input".into()));
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// `dL/dlogits` for `probs = softmax_masked(logits, mask)`.
pub fn softmax_masked_backward(probs: &[f64], grad_out: &[f64], mask: &[bool]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .zip(mask)
        .map(|((p, g), &m)| if m { p * (g - inner) } else { 0.0 })
        .collect()
}

// Slice kernels used by the layers. Matrices are rank-2 (or the flattened
// trailing dims of a rank-3 slab) in row-major order.

/// `x·W` for `x: [k]`, `W: [k×n]`.
pub(crate) fn vec_mat(x: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (t, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[t * n..(t + 1) * n]) {
            *o += xv * wv;
        }
    }
    out
}

/// `W·g` for `W: [k×n]`, `g: [n]` (the input-gradient of `vec_mat`).
pub(crate) fn mat_vec(w: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    w.chunks_exact(n)
        .map(|row| row.iter().zip(g).map(|(a, b)| a * b).sum())
        .collect()
}

/// `G += xᵀ·g` for `G: [k×n]` (the weight-gradient of `vec_mat`).
pub(crate) fn add_outer(grad: &mut [f64], x: &[f64], g: &[f64]) {
    let n = g.len();
    for (t, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, gv) in grad[t * n..(t + 1) * n].iter_mut().zip(g) {
            *o += xv * gv;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let b = t2(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);

        let any = Tensor::new(&[3, 4], (0..12).map(|v| v as f64 - 3.5).collect()).unwrap();
        assert_eq!(matmul(&Tensor::zeros(&[2, 3]), &any).unwrap(), Tensor::zeros(&[2, 4]));

        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), t2(&[&[19.0, 22.0], &[43.0, 50.0]]));
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "matmul", .. }));
    }

    #[test]
    fn matmul_overflow_is_numeric_error() {
        let a = Tensor::new(&[1, 1], vec![1e200]).unwrap();
        let err = matmul(&a, &a).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn tensor_invariants_enforced() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(&[0], vec![]).is_err());
    }

    #[test]
    fn activation_examples() {
        let x = Tensor::vector(vec![0.0, -3.0, 3.0, 3f64.ln()]).unwrap();
        let s = activate(&x, Activation::Sigmoid).unwrap();
        assert_eq!(s.data()[0], 0.5);
        assert_abs_diff_eq!(s.data()[3], 0.75, epsilon = 1e-15);
        let r = activate(&x, Activation::Relu).unwrap();
        assert_eq!(&r.data()[1..3], &[0.0, 3.0]);
        assert_eq!(clamp_probability(1.0), 1.0 - PROB_EPS);
        assert_eq!(clamp_probability(0.0), PROB_EPS);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!(sigmoid(-700.0) > 0.0);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_masked(&[1.0, 1.0, 1.0], &[true; 3]).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax_masked(&[9.0, -4.0, 7.0], &[false, true, false]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
        let p = softmax_masked(&[0.0, 2f64.ln()], &[true, true]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn softmax_all_masked_is_empty_history() {
        let err = softmax_masked(&[1.0, 2.0], &[false, false]).unwrap_err();
        assert!(matches!(err, Error::EmptyHistory));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax_masked(&[1000.0, 999.0, -1e6], &[true, true, true]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
        prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(
            a in small_matrix(3, 4),
            b in small_matrix(4, 2),
            c in small_matrix(2, 5),
        ) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                prop_assert!((l - r).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_properties(
            logits in prop::collection::vec(-30.0f64..30.0, 1..12),
            mask_bits in prop::collection::vec(any::<bool>(), 12),
            shift in -50.0f64..50.0,
        ) {
            let mut mask: Vec<bool> = mask_bits[..logits.len()].to_vec();
            mask[0] = true;
            let p = softmax_masked(&logits, &mask).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (v, m) in p.iter().zip(&mask) {
                if !m { prop_assert_eq!(*v, 0.0); }
            }
            let shifted: Vec<f64> = logits.iter().zip(&mask)
                .map(|(l, &m)| if m { l + shift } else { *l })
                .collect();
            let q = softmax_masked(&shifted, &mask).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
