//! Principal component analysis by exact eigendecomposition of the sample
//! covariance.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;
use crate::tensor::Tensor;

/// A fitted PCA projection for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `[D]` column means of the training matrix.
    pub mean: Vec<f64>,
    /// `[k × D]`, rows are orthonormal principal directions, strongest first.
    pub components: Tensor,
    /// `[k]`, nonincreasing and nonnegative.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    /// Fraction of total variance captured by each component; all zero for
    /// zero-variance input.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.output_dim()];
        }
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// `(X − mean)·componentsᵀ`
    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        pca_transform(self, x)
    }

    /// `Y·components + mean`
    pub fn inverse_transform(&self, y: &Tensor) -> Result<Tensor> {
        let (k, dim) = (self.output_dim(), self.input_dim());
        if y.rank() != 2 || y.cols() != k {
            return Err(Error::dim(
                "inverse_transform",
                format!("{:?} against k = {k}", y.shape()),
            ));
        }
        let mut out = Vec::with_capacity(y.rows() * dim);
        for i in 0..y.rows() {
            let mut row = self.mean.clone();
            for (c, &coef) in y.row(i).iter().enumerate() {
                for (r, w) in row.iter_mut().zip(self.components.row(c)) {
                    *r += coef * w;
                }
            }
            out.extend(row);
        }
        Tensor::new(&[y.rows(), dim], out)
    }
}

/// Fits a `k`-component PCA to the rows of `x` (`[n × D]`).
///
/// Components are sign-normalized so that each one's largest-magnitude
/// entry (lowest index on ties) is positive.
pub fn pca_fit(x: &Tensor, k: usize) -> Result<PcaModel> {
    if x.rank() != 2 {
        return Err(Error::dim("pca_fit", format!("matrix required, got {:?}", x.shape())));
    }
    let (n, dim) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 samples, got {n}")));
    }
    if k == 0 || k > dim.min(n) {
        return Err(Error::invalid(format!(
            "k = {k} out of range: must be in 1..={} (min of dimension {dim} and samples {n})",
            dim.min(n)
        )));
    }

    let mut mean = vec![0.0; dim];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Lower triangle of XcᵀXc, mirrored afterwards.
    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for i in 0..n {
        for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&mean) {
            *c = v - m;
        }
        for a in 0..dim {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            let row = &mut cov[a * dim..a * dim + a + 1];
            for (r, cb) in row.iter_mut().zip(&centered[..=a]) {
                *r += ca * cb;
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..dim {
        for b in 0..=a {
            let v = cov[a * dim + b] / denom;
            cov[a * dim + b] = v;
            cov[b * dim + a] = v;
        }
    }
    let total_variance = (0..dim).map(|a| cov[a * dim + a]).sum();

    let eig = symmetric_eigen(&cov, dim)?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(k * dim);
    let mut explained_variance = Vec::with_capacity(k);
    for &j in &order[..k] {
        let mut v = eig.vector(j);
        normalize_sign(&mut v);
        components.extend(v);
        explained_variance.push(eig.values[j].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components: Tensor::new(&[k, dim], components)?,
        explained_variance,
        total_variance,
    })
}

/// Flips `v` so that its largest-magnitude entry (first on ties) is positive.
pub fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn pca_transform(model: &PcaModel, x: &Tensor) -> Result<Tensor> {
    let dim = model.input_dim();
    if x.rank() != 2 || x.cols() != dim {
        return Err(Error::dim(
            "pca_transform",
            format!("input {:?} against fitted dimension {dim}", x.shape()),
        ));
    }
    let k = model.output_dim();
    let out: Vec<f64> = x
        .data()
        .par_chunks(dim)
        .flat_map_iter(|row| {
            let centered: Vec<f64> = row.iter().zip(&model.mean).map(|(v, m)| v - m).collect();
            (0..k).map(move |c| {
                model
                    .components
                    .row(c)
                    .iter()
                    .zip(&centered)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
            })
        })
        .collect();
    Tensor::new(&[x.rows(), k], out)
}
