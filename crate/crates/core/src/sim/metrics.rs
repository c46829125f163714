//! Relative estimation errors and support recovery scores.

use std::sync::Arc;

use super::{fourier_basis, Truth};
use crate::error::{Error, Result};
use crate::func::{Curve, Grid, LowRankKernel};
use crate::models::Fit;

fn ratio(num2: f64, den2: f64) -> Result<f64> {
    if den2 <= 0.0 {
        return Err(Error::Domain("truth has zero norm".into()));
    }
    Ok((num2 / den2).sqrt())
}

/// `(Σ_j ‖β̂_j − β_j‖²)^{1/2} / (Σ_j ‖β_j‖²)^{1/2}`.
pub fn sflr_relative_error(est: &[Curve], truth: &[Curve]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::Structural(format!("{} estimates for {} truths", est.len(), truth.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, t) in est.iter().zip(truth) {
        num += e.sub(t)?.norm().powi(2);
        den += t.norm().powi(2);
    }
    ratio(num, den)
}

/// Same ratio with Hilbert–Schmidt norms.
pub fn kernel_relative_error(est: &[LowRankKernel], truth: &[LowRankKernel]) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::Structural(format!("{} estimates for {} truths", est.len(), truth.len())));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, t) in est.iter().zip(truth) {
        num += e.hs_distance(t)?.powi(2);
        den += t.hs_norm().powi(2);
    }
    ratio(num, den)
}

/// Relative error of a fitted model against the generating coefficients.
pub fn relative_error(fit: &Fit, truth: &Truth, grid: &Arc<Grid>) -> Result<f64> {
    match (fit, truth) {
        (Fit::Sflr(f), Truth::Sflr(_)) => sflr_relative_error(&f.betas(), &truth.sflr_curves(grid).expect("sflr")),
        (Fit::Fflr(f), Truth::Fflr(_)) => {
            let est: Vec<_> = (0..f.p()).map(|j| f.beta(j)).collect();
            kernel_relative_error(&est, &truth.fflr_kernels(grid).expect("fflr"))
        }
        (Fit::Vfar(f), Truth::Vfar(t)) => {
            let p = f.p();
            if t.p() != p {
                return Err(Error::Structural(format!("fit has p = {p}, truth p = {}", t.p())));
            }
            let psi = fourier_basis(grid);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..p {
                for k in 0..p {
                    for h in 1..=f.order() {
                        let a = f.a(j, k, h)?;
                        if h == 1 && t.scales[j][k] != 0.0 {
                            let truth_k = t.kernel(j, k, grid, &psi);
                            num += a.hs_distance(&truth_k)?.powi(2);
                            den += truth_k.hs_norm().powi(2);
                        } else if a.coef().iter().any(|&v| v != 0.0) {
                            num += a.hs_norm().powi(2);
                        }
                    }
                }
            }
            ratio(num, den)
        }
        _ => Err(Error::Structural("fit and truth are for different models".into())),
    }
}

/// F1 score of an estimated support against the true one.
pub fn f1_support(est: &[usize], truth: &[usize]) -> f64 {
    if est.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let tp = est.iter().filter(|j| truth.contains(j)).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let precision = tp / est.len() as f64;
    let recall = tp / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}
