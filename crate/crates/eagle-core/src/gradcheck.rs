//! Central finite-difference gradient verification.
//!
//! The numeric side uses only forward evaluations, so it stays independent of
//! every pullback it checks. An element passes when
//! `|analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|)`;
//! the reported error is normalized so that `err < rtol` is the pass
//! condition.

use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::{no_grad, Result, Tensor};

#[derive(Debug, Clone)]
pub struct GradReport {
    /// Normalized error: `|a - n| / (max(|a|, |n|) + atol/rtol)`, maximized
    /// over elements. Pass iff `max_err < rtol`.
    pub max_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradReport {
    pub fn passes(&self, rtol: f64) -> bool {
        self.max_err < rtol
    }
}

/// Step size for the central difference, scaled per element.
pub fn default_step<T: Real>() -> f64 {
    if std::mem::size_of::<T>() == 4 {
        1e-2
    } else {
        1e-6
    }
}

/// Compare the analytic gradient of `f` w.r.t. `varied` against central finite
/// differences. `f` must reduce to a scalar tensor and must treat `varied` as
/// one of its leaves.
pub fn compare_gradients<T: Real>(
    varied: &Tensor<T>,
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    atol_over_rtol: f64,
) -> Result<GradReport> {
    let base = varied.to_vec();
    let shape = varied.shape().to_vec();

    let param = Tensor::<T>::parameter(&shape, base.clone())?;
    let loss = f(&param)?;
    loss.backward()?;
    let analytic = param
        .grad()
        .unwrap_or_else(|| vec![T::ZERO; param.numel()]);

    let step = default_step::<T>();
    let mut report = GradReport {
        max_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for i in 0..base.len() {
        let h = step * base[i].to_f64().abs().max(1.0);
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] = T::from_f64(base[i].to_f64() + h);
        minus[i] = T::from_f64(base[i].to_f64() - h);
        let fp = no_grad(|| -> Result<f64> {
            Ok(f(&Tensor::from_vec(&shape, plus)?)?.item().to_f64())
        })?;
        let fm = no_grad(|| -> Result<f64> {
            Ok(f(&Tensor::from_vec(&shape, minus)?)?.item().to_f64())
        })?;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i].to_f64();
        let err = (a - numeric).abs() / (a.abs().max(numeric.abs()) + atol_over_rtol);
        if err > report.max_err {
            report.max_err = err;
            report.worst_index = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

/// Deterministic random input for gradient checks: uniform in
/// `offset + [-1, 1]`.
pub fn random_input<T: Real>(shape: &[usize], seed: u64, offset: f64) -> Tensor<T> {
    let mut rng = Rng::new(seed);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(offset + rng.uniform(-1.0, 1.0)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape/data agree by construction")
}

/// Test helper: panics when the finite-difference check fails.
pub fn assert_grad_close<T: Real>(
    varied: &Tensor<T>,
    f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    rtol: f64,
) {
    let report = compare_gradients(varied, f, 0.1).expect("gradient check failed to run");
    assert!(
        report.passes(rtol),
        "gradient mismatch: err {:.3e} >= rtol {:.1e} at index {} (analytic {:.6e}, numeric {:.6e})",
        report.max_err,
        rtol,
        report.worst_index,
        report.analytic_at_worst,
        report.numeric_at_worst,
    );
}
