//! Central-difference gradient verification.
//!
//! [`finite_diff_check`] compares analytic gradients against
//! `(L(θ+ε) − L(θ−ε)) / 2ε` element by element. [`run_suite`] drives it over
//! every layer of the model in isolation and over the composed model.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A collection of tensors addressable by stable names.
pub trait NamedParams: Clone {
    fn named(&self) -> Vec<(String, &Tensor)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

/// Ad-hoc named tensor list, used to check layers whose inputs are
/// differentiated alongside their weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorSet(pub Vec<(String, Tensor)>);

impl TensorSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.push((name.into(), t));
    }

    /// # Panics
    /// If `name` is absent.
    pub fn get(&self, name: &str) -> &Tensor {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.0
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    pub fn zeros_like(&self) -> Self {
        TensorSet(self.0.iter().map(|(n, t)| (n.clone(), Tensor::zeros_like(t))).collect())
    }
}

impl NamedParams for TensorSet {
    fn named(&self) -> Vec<(String, &Tensor)> {
        self.0.iter().map(|(n, t)| (n.clone(), t)).collect()
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.0.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    pub elements: usize,
}

pub fn relative_error(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-8)
}

/// Maximum relative error between central differences of `loss_fn` and `grads`.
pub fn finite_diff_check<P, F>(loss_fn: F, params: &P, grads: &P, eps: f64) -> Result<GradCheckReport>
where
    P: NamedParams,
    F: Fn(&P) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let param_names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grad_list = grads.named();
    if grad_list.len() != param_names.len()
        || grad_list
            .iter()
            .zip(params.named())
            .any(|((gn, gt), (pn, pt))| *gn != pn || gt.shape() != pt.shape())
    {
        return Err(Error::invalid("gradient names/shapes do not mirror parameters"));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        elements: 0,
    };
    for (ti, name) in param_names.iter().enumerate() {
        let len = grad_list[ti].1.len();
        for e in 0..len {
            let orig = work.named()[ti].1.data()[e];
            work.named_mut()[ti].1.data_mut()[e] = orig + eps;
            let plus = loss_fn(&work)?;
            work.named_mut()[ti].1.data_mut()[e] = orig - eps;
            let minus = loss_fn(&work)?;
            work.named_mut()[ti].1.data_mut()[e] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing {name}[{e}]")));
            }
            let fd = (plus - minus) / (2.0 * eps);
            let err = relative_error(fd, grad_list[ti].1.data()[e]);
            report.elements += 1;
            if report.worst.is_empty() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{e}]");
            }
        }
    }
    Ok(report)
}

mod suite;
pub use suite::{run_suite, SuiteReport, GRADCHECK_EPS, GRADCHECK_TOLERANCE};

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> TensorSet {
        let mut s = TensorSet::default();
        s.push("theta", Tensor::vector(vec![v]).unwrap());
        s
    }

    #[test]
    fn quadratic_is_exact_under_central_difference() {
        let params = scalar_set(3.0);
        let grads = scalar_set(6.0);
        let r = finite_diff_check(
            |p: &TensorSet| Ok(p.get("theta").data()[0].powi(2)),
            &params,
            &grads,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.elements, 1);
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let r = finite_diff_check(|_: &TensorSet| Ok(4.2), &scalar_set(1.0), &scalar_set(0.0), 1e-4).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let r = finite_diff_check(
            |p: &TensorSet| Ok(p.get("theta").data()[0].powi(2)),
            &scalar_set(3.0),
            &scalar_set(5.0),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.05);
        assert_eq!(r.worst, "theta[0]");
    }

    #[test]
    fn non_finite_loss_propagates() {
        let err =
            finite_diff_check(|_: &TensorSet| Ok(f64::NAN), &scalar_set(1.0), &scalar_set(0.0), 1e-4).unwrap_err();
        assert!(err.is_numeric());
    }

    #[test]
    fn mismatched_names_rejected() {
        let mut g = TensorSet::default();
        g.push("other", Tensor::vector(vec![0.0]).unwrap());
        assert!(finite_diff_check(|_: &TensorSet| Ok(0.0), &scalar_set(1.0), &g, 1e-4).is_err());
    }
}
