//! Function-on-function linear regression
//! `Y_t(v) = Σ_j ∫ X_tj(u) β_j(u,v) du + ε_t(v)`.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{
    bases_from_specs, check_kind, coef_block, regression_moments, validate_fit_config, BasisSpec, FitConfig,
    FitManifest, GridSpec, Method, ModelKind, SolutionSpec,
};
use crate::autocov::{
    estimate_bases, project_scores, project_series, AutocovBasis, BasisConfig, BasisKindChoice, ScorePanel,
};
use crate::error::{Error, Result};
use crate::func::{FunctionalPanel, Grid, LowRankKernel};
use crate::rmd::{solve_path, solve_warm, BlockSolution, MomentSystem, RmdConfig};

/// FFLR moment system; `response_scores` is `n × d̃`.
pub fn build_moments_fflr(scores: &ScorePanel, response_scores: &DMatrix<f64>, lags: usize) -> Result<MomentSystem> {
    if response_scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite response scores".into()));
    }
    regression_moments(scores, response_scores, lags)
}

/// Response basis by lag-0 FPCA (or the lag-pooled operator when
/// `autocov`) with the cumulative-share truncation.
pub(crate) fn response_basis(panel_y: &FunctionalPanel, cfg: &BasisConfig, autocov: bool) -> Result<AutocovBasis> {
    if panel_y.p() != 1 {
        return Err(Error::Structural(format!("response panel must hold one series, got {}", panel_y.p())));
    }
    if autocov {
        AutocovBasis::estimate(panel_y, 0, cfg)
    } else {
        AutocovBasis::estimate_fpca(panel_y, 0, cfg)
    }
}

#[derive(Debug, Clone)]
pub struct FflrProblem {
    pub grid: Arc<Grid>,
    pub response_grid: Arc<Grid>,
    pub lags: usize,
    pub bases: Vec<AutocovBasis>,
    pub response_basis: AutocovBasis,
    pub scores: ScorePanel,
    pub response_scores: DMatrix<f64>,
    pub system: MomentSystem,
}

impl FflrProblem {
    pub fn new(panel_x: &FunctionalPanel, panel_y: &FunctionalPanel, cfg: &FitConfig) -> Result<FflrProblem> {
        let basis = &cfg.basis;
        if panel_x.n() != panel_y.n() {
            return Err(Error::Structural(format!(
                "predictor panel has n = {}, response panel n = {}",
                panel_x.n(),
                panel_y.n()
            )));
        }
        let bases = estimate_bases(panel_x, basis, BasisKindChoice::Autocov)?;
        let scores = project_scores(panel_x, &bases)?;
        let rb = response_basis(panel_y, basis, cfg.response_autocov)?;
        FflrProblem::from_parts(panel_x.grid().clone(), panel_y, basis.lag_budget, bases, scores, rb)
    }

    /// Builds the moment system when the response basis is given.
    pub fn from_parts(
        grid: Arc<Grid>,
        panel_y: &FunctionalPanel,
        lags: usize,
        bases: Vec<AutocovBasis>,
        scores: ScorePanel,
        response_basis: AutocovBasis,
    ) -> Result<FflrProblem> {
        let response_scores = project_series(panel_y, 0, &response_basis)?;
        let system = build_moments_fflr(&scores, &response_scores, lags)?;
        Ok(FflrProblem {
            grid,
            response_grid: panel_y.grid().clone(),
            lags,
            bases,
            response_basis,
            scores,
            response_scores,
            system,
        })
    }

    pub fn gamma_max(&self) -> f64 {
        self.system.gamma_max()
    }

    pub fn fit(&self, gamma: f64, rmd: &RmdConfig) -> Result<FflrFit> {
        Ok(self.wrap(solve_warm(&self.system, gamma, rmd, None)?))
    }

    pub fn fit_path(&self, gammas: &[f64], rmd: &RmdConfig) -> Result<Vec<Result<FflrFit>>> {
        Ok(solve_path(&self.system, gammas, rmd)?
            .into_iter()
            .map(|r| r.map(|s| self.wrap(s)))
            .collect())
    }

    pub fn wrap(&self, solution: BlockSolution) -> FflrFit {
        FflrFit {
            method: Method::Auto,
            grid: self.grid.clone(),
            response_grid: self.response_grid.clone(),
            lags: self.lags,
            bases: self.bases.clone(),
            response_basis: self.response_basis.clone(),
            solution,
        }
    }
}

/// Fitted FFLR model: `β̂_j(u,v) = ψ̂_j(u)ᵀ B̂_j φ̂(v)`.
#[derive(Debug, Clone)]
pub struct FflrFit {
    pub method: Method,
    pub grid: Arc<Grid>,
    pub response_grid: Arc<Grid>,
    pub lags: usize,
    pub bases: Vec<AutocovBasis>,
    pub response_basis: AutocovBasis,
    pub solution: BlockSolution,
}

impl FflrFit {
    pub fn new(
        method: Method,
        grid: Arc<Grid>,
        response_grid: Arc<Grid>,
        lags: usize,
        bases: Vec<AutocovBasis>,
        response_basis: AutocovBasis,
        solution: BlockSolution,
    ) -> Result<FflrFit> {
        let dims: Vec<usize> = bases.iter().map(|b| b.d).collect();
        let widths: Vec<usize> = solution.col_offsets.windows(2).map(|w| w[1] - w[0]).collect();
        if dims != widths || solution.theta.ncols() != response_basis.d {
            return Err(Error::Structural("FFLR solution does not match the bases".into()));
        }
        Ok(FflrFit {
            method,
            grid,
            response_grid,
            lags,
            bases,
            response_basis,
            solution,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.solution.gamma
    }

    pub fn p(&self) -> usize {
        self.bases.len()
    }

    pub fn d_tilde(&self) -> usize {
        self.response_basis.d
    }

    /// `B̂_j` (`d_j × d̃`).
    pub fn coefficients(&self, j: usize) -> DMatrix<f64> {
        coef_block(&self.solution.theta, &self.solution.col_offsets, j)
    }

    pub fn beta(&self, j: usize) -> LowRankKernel {
        LowRankKernel::new(
            self.grid.clone(),
            self.response_grid.clone(),
            self.bases[j].matrix(self.grid.len()),
            self.coefficients(j),
            self.response_basis.matrix(self.response_grid.len()),
        )
        .expect("factor shapes follow the fit")
    }

    pub fn support(&self) -> &[usize] {
        &self.solution.support
    }

    /// Predicted response scores `Σ_j η̂_tjᵀ B̂_j` (`n × d̃`).
    pub fn predict_scores(&self, scores: &ScorePanel) -> Result<DMatrix<f64>> {
        if scores.matrix().ncols() != self.solution.theta.nrows() {
            return Err(Error::Structural("scores do not match the fitted bases".into()));
        }
        Ok(scores.matrix() * &self.solution.theta)
    }

    /// Predicted response curves on the response grid.
    pub fn predict(&self, panel_x: &FunctionalPanel) -> Result<FunctionalPanel> {
        if panel_x.p() != self.p() {
            return Err(Error::Structural(format!("panel has p = {}, fit has {}", panel_x.p(), self.p())));
        }
        let scores = project_scores(panel_x, &self.bases)?;
        let zeta = self.predict_scores(&scores)?;
        let curves = zeta * self.response_basis.matrix(self.response_grid.len()).transpose();
        FunctionalPanel::from_series(self.response_grid.clone(), &[curves])
    }

    pub fn manifest(&self) -> FitManifest {
        FitManifest {
            model: ModelKind::Fflr,
            method: self.method,
            lags: self.lags,
            order: None,
            instruments: None,
            grid: GridSpec::from_grid(&self.grid),
            bases: self.bases.iter().map(BasisSpec::from_basis).collect(),
            response_grid: Some(GridSpec::from_grid(&self.response_grid)),
            response_basis: Some(BasisSpec::from_basis(&self.response_basis)),
            solutions: vec![SolutionSpec::from_solution(&self.solution)],
            row_failures: Vec::new(),
        }
    }

    pub fn from_manifest(m: &FitManifest) -> Result<FflrFit> {
        check_kind(m, ModelKind::Fflr)?;
        let grid = m.grid.to_grid()?;
        let rgrid = m
            .response_grid
            .as_ref()
            .ok_or_else(|| Error::Parse("FFLR manifest without response grid".into()))?
            .to_grid()?;
        let rb = m
            .response_basis
            .as_ref()
            .ok_or_else(|| Error::Parse("FFLR manifest without response basis".into()))?
            .to_basis(&rgrid)?;
        let bases = bases_from_specs(&m.bases, &grid)?;
        let sol = m
            .solutions
            .first()
            .ok_or_else(|| Error::Parse("FFLR manifest without a solution".into()))?
            .to_solution()?;
        FflrFit::new(m.method, grid, rgrid, m.lags, bases, rb, sol)
    }
}

pub fn fit_fflr(panel_x: &FunctionalPanel, panel_y: &FunctionalPanel, cfg: &FitConfig, gamma: f64) -> Result<FflrFit> {
    validate_fit_config(cfg)?;
    FflrProblem::new(panel_x, panel_y, cfg)?.fit(gamma, &cfg.rmd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::sflr::build_moments_sflr;

    #[test]
    fn two_point_example() {
        let s = ScorePanel::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]), &[1]).unwrap();
        let sys = build_moments_fflr(&s, &DMatrix::from_column_slice(2, 1, &[3.0, -7.0]), 1).unwrap();
        assert_eq!(sys.g0()[(0, 0)], 6.0);
        assert_eq!(sys.g()[(0, 0)], -2.0);
    }

    #[test]
    fn single_response_column_matches_sflr_bitwise() {
        let s = ScorePanel::new(DMatrix::from_fn(12, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.7), &[3, 1]).unwrap();
        let y: Vec<f64> = (0..12).map(|t| (t as f64 * 0.37).sin()).collect();
        let a = build_moments_sflr(&s, &y, 3).unwrap();
        let b = build_moments_fflr(&s, &DMatrix::from_column_slice(12, 1, &y), 3).unwrap();
        assert_eq!(a.g(), b.g());
        assert_eq!(a.g0(), b.g0());
    }

    #[test]
    fn zero_response_gives_zero_estimate() {
        let s = ScorePanel::new(DMatrix::from_fn(12, 2, |i, j| (i + j) as f64), &[1, 1]).unwrap();
        let sys = build_moments_fflr(&s, &DMatrix::zeros(12, 3), 2).unwrap();
        let sol = crate::rmd::solve(&sys, 0.0, &RmdConfig::default()).unwrap();
        assert!(sol.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_bases_give_constant_kernel() {
        let grid = Grid::uniform(0.0, 1.0, 11).unwrap();
        let one = crate::func::Curve::from_fn(grid.clone(), |_| 1.0).unwrap();
        let basis = AutocovBasis::from_parts(0, crate::autocov::BasisKind::Covariance, vec![1.0], vec![one.clone()]).unwrap();
        let sol = BlockSolution {
            theta: DMatrix::from_element(1, 1, 1.0),
            col_offsets: vec![0, 1],
            gamma: 0.0,
            block_norms: vec![1.0],
            support: vec![0],
            stats: crate::rmd::SolverStats {
                iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                objective: 1.0,
                max_constraint: 0.0,
                rho: 0.0,
            },
            dual: DMatrix::zeros(0, 0),
            dual_theta: DMatrix::zeros(0, 0),
        };
        let fit = FflrFit::new(Method::Auto, grid.clone(), grid, 1, vec![basis.clone()], basis, sol).unwrap();
        let k = fit.beta(0).to_kernel();
        assert!(k.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
