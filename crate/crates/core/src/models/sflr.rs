//! Scalar-on-function linear regression `Y_t = Σ_j ⟨X_tj, β_j⟩ + ε_t`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{
    bases_from_specs, check_kind, coef_block, regression_moments, validate_fit_config, BasisSpec, FitConfig,
    FitManifest, GridSpec, Method, ModelKind, SolutionSpec,
};
use crate::autocov::{estimate_bases, project_scores, AutocovBasis, BasisConfig, BasisKindChoice, ScorePanel};
use crate::error::{Error, Result};
use crate::func::{Curve, FunctionalPanel, Grid};
use crate::rmd::{solve_path, solve_warm, BlockSolution, MomentSystem, RmdConfig};

/// SFLR moment system (`d̃ = 1`).
pub fn build_moments_sflr(scores: &ScorePanel, y: &[f64], lags: usize) -> Result<MomentSystem> {
    check_response(y, scores.n())?;
    regression_moments(scores, &DMatrix::from_column_slice(y.len(), 1, y), lags)
}

pub(crate) fn check_response(y: &[f64], n: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::Structural(format!("response has {} values, panel has n = {n}", y.len())));
    }
    if let Some(t) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite response at t = {t}")));
    }
    Ok(())
}

/// Step-1 output and moment system for one training sample, reusable
/// across regularization levels.
#[derive(Debug, Clone)]
pub struct SflrProblem {
    pub grid: Arc<Grid>,
    pub lags: usize,
    pub bases: Vec<AutocovBasis>,
    pub scores: ScorePanel,
    pub system: MomentSystem,
}

impl SflrProblem {
    pub fn new(panel: &FunctionalPanel, y: &[f64], basis: &BasisConfig) -> Result<SflrProblem> {
        check_response(y, panel.n())?;
        let bases = estimate_bases(panel, basis, BasisKindChoice::Autocov)?;
        let scores = project_scores(panel, &bases)?;
        let system = build_moments_sflr(&scores, y, basis.lag_budget)?;
        Ok(SflrProblem {
            grid: panel.grid().clone(),
            lags: basis.lag_budget,
            bases,
            scores,
            system,
        })
    }

    pub fn gamma_max(&self) -> f64 {
        self.system.gamma_max()
    }

    pub fn fit(&self, gamma: f64, rmd: &RmdConfig) -> Result<SflrFit> {
        let sol = solve_warm(&self.system, gamma, rmd, None)?;
        Ok(self.wrap(sol))
    }

    /// Warm-started fits along a descending γ path.
    pub fn fit_path(&self, gammas: &[f64], rmd: &RmdConfig) -> Result<Vec<Result<SflrFit>>> {
        Ok(solve_path(&self.system, gammas, rmd)?
            .into_iter()
            .map(|r| r.map(|s| self.wrap(s)))
            .collect())
    }

    pub fn wrap(&self, solution: BlockSolution) -> SflrFit {
        SflrFit {
            method: Method::Auto,
            grid: self.grid.clone(),
            lags: self.lags,
            bases: self.bases.clone(),
            solution,
        }
    }
}

/// Fitted SFLR model: `β̂_j = ψ̂_jᵀ b̂_j`.
#[derive(Debug, Clone)]
pub struct SflrFit {
    pub method: Method,
    pub grid: Arc<Grid>,
    pub lags: usize,
    pub bases: Vec<AutocovBasis>,
    pub solution: BlockSolution,
}

impl SflrFit {
    pub fn new(method: Method, grid: Arc<Grid>, lags: usize, bases: Vec<AutocovBasis>, solution: BlockSolution) -> Result<SflrFit> {
        let dims: Vec<usize> = bases.iter().map(|b| b.d).collect();
        let widths: Vec<usize> = solution.col_offsets.windows(2).map(|w| w[1] - w[0]).collect();
        if dims != widths || solution.theta.ncols() != 1 {
            return Err(Error::Structural("SFLR solution does not match the bases".into()));
        }
        Ok(SflrFit {
            method,
            grid,
            lags,
            bases,
            solution,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.solution.gamma
    }

    pub fn p(&self) -> usize {
        self.bases.len()
    }

    /// `b̂_j`.
    pub fn coefficients(&self, j: usize) -> DVector<f64> {
        coef_block(&self.solution.theta, &self.solution.col_offsets, j).column(0).into_owned()
    }

    /// `β̂_j` on the grid.
    pub fn beta(&self, j: usize) -> Curve {
        let b = self.coefficients(j);
        let values = if b.is_empty() {
            vec![0.0; self.grid.len()]
        } else {
            (self.bases[j].matrix(self.grid.len()) * b).as_slice().to_vec()
        };
        Curve::new(self.grid.clone(), values).expect("finite recovery")
    }

    pub fn betas(&self) -> Vec<Curve> {
        (0..self.p()).map(|j| self.beta(j)).collect()
    }

    pub fn support(&self) -> &[usize] {
        &self.solution.support
    }

    /// `Ŷ_t = Σ_j b̂_jᵀ η̂_tj` from scores on this fit's bases.
    pub fn predict_scores(&self, scores: &ScorePanel) -> Result<Vec<f64>> {
        if scores.matrix().ncols() != self.solution.theta.nrows() {
            return Err(Error::Structural("scores do not match the fitted bases".into()));
        }
        Ok((scores.matrix() * &self.solution.theta).column(0).iter().copied().collect())
    }

    pub fn predict(&self, panel: &FunctionalPanel) -> Result<Vec<f64>> {
        if panel.p() != self.p() {
            return Err(Error::Structural(format!("panel has p = {}, fit has {}", panel.p(), self.p())));
        }
        let scores = project_scores(panel, &self.bases)?;
        self.predict_scores(&scores)
    }

    pub fn manifest(&self) -> FitManifest {
        FitManifest {
            model: ModelKind::Sflr,
            method: self.method,
            lags: self.lags,
            order: None,
            instruments: None,
            grid: GridSpec::from_grid(&self.grid),
            bases: self.bases.iter().map(BasisSpec::from_basis).collect(),
            response_grid: None,
            response_basis: None,
            solutions: vec![SolutionSpec::from_solution(&self.solution)],
            row_failures: Vec::new(),
        }
    }

    pub fn from_manifest(m: &FitManifest) -> Result<SflrFit> {
        check_kind(m, ModelKind::Sflr)?;
        let grid = m.grid.to_grid()?;
        let bases = bases_from_specs(&m.bases, &grid)?;
        let sol = m
            .solutions
            .first()
            .ok_or_else(|| Error::Parse("SFLR manifest without a solution".into()))?
            .to_solution()?;
        SflrFit::new(m.method, grid, m.lags, bases, sol)
    }
}

/// Full AUTO pipeline at one regularization level.
pub fn fit_sflr(panel: &FunctionalPanel, y: &[f64], cfg: &FitConfig, gamma: f64) -> Result<SflrFit> {
    validate_fit_config(cfg)?;
    SflrProblem::new(panel, y, &cfg.basis)?.fit(gamma, &cfg.rmd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_scores(v: &[f64]) -> ScorePanel {
        ScorePanel::new(DMatrix::from_column_slice(v.len(), 1, v), &[1]).unwrap()
    }

    #[test]
    fn two_point_example() {
        let sys = build_moments_sflr(&scalar_scores(&[1.0, 2.0]), &[3.0, 0.5], 1).unwrap();
        assert_eq!(sys.g0()[(0, 0)], 6.0);
        assert_eq!(sys.g()[(0, 0)], -2.0);
        assert_eq!(sys.q(), 1);
    }

    #[test]
    fn zero_response_gives_zero_system() {
        let s = ScorePanel::new(DMatrix::from_fn(10, 3, |i, j| (i * 3 + j) as f64 * 0.1), &[2, 1]).unwrap();
        let sys = build_moments_sflr(&s, &[0.0; 10], 3).unwrap();
        assert_eq!(sys.gamma_max(), 0.0);
        assert_eq!(sys.q(), 6);
        let sol = crate::rmd::solve(&sys, 0.0, &RmdConfig::default()).unwrap();
        assert!(sol.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lag_budget_checked() {
        assert!(matches!(
            build_moments_sflr(&scalar_scores(&[1.0, 2.0]), &[1.0, 1.0], 2),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            build_moments_sflr(&scalar_scores(&[1.0, 2.0]), &[1.0], 1),
            Err(Error::Structural(_))
        ));
    }
}
