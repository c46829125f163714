//! Covariance-based comparator: FPCA scores plus group-lasso least squares
//! solved by block FISTA.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autocov::{estimate_bases, project_scores, project_series, AutocovBasis, BasisConfig, BasisKindChoice, ScorePanel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::func::{FunctionalPanel, Grid};
use crate::models::fflr::response_basis;
use crate::models::sflr::check_response;
use crate::models::vfar::lagged_design;
use crate::models::{FflrFit, FitConfig, Method, RowFailure, SflrFit, VfarConfig, VfarFit};
use crate::rmd::{block_norms, BlockSolution, SolverStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FistaConfig {
    pub max_iter: usize,
    /// Stop when `‖Θ_k − Θ_{k−1}‖_F ≤ tol · max(1, ‖Θ_k‖_F)`.
    pub tol: f64,
    /// Or when the KKT violation is at most `kkt_tol · λ_max` (checked every
    /// 25 iterations).
    pub kkt_tol: f64,
}

impl Default for FistaConfig {
    fn default() -> Self {
        FistaConfig {
            max_iter: 10_000,
            tol: 1e-8,
            kkt_tol: 1e-7,
        }
    }
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.tol > 0.0 && self.tol.is_finite()) || !(self.kkt_tol >= 0.0 && self.kkt_tol.is_finite()) {
            return Err(Error::Config(format!("invalid FISTA settings {self:?}")));
        }
        Ok(())
    }
}

/// `(2n)⁻¹‖R − XΘ‖_F² + λ Σ_j ‖Θ_j‖_F`, kept in Gram form.
#[derive(Debug, Clone)]
pub struct GroupLassoProblem {
    /// `XᵀX / n`.
    gram: DMatrix<f64>,
    /// `XᵀR / n`.
    cross: DMatrix<f64>,
    /// `‖R‖² / (2n)`.
    half_rss0: f64,
    offsets: Vec<usize>,
    lipschitz: f64,
}

/// FISTA output.
#[derive(Debug, Clone)]
pub struct GroupLassoFit {
    pub theta: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iteration.
    pub trace: Vec<f64>,
    pub last_change: f64,
    pub step: f64,
}

impl GroupLassoProblem {
    pub fn new(design: &DMatrix<f64>, response: &DMatrix<f64>, dims: &[usize]) -> Result<GroupLassoProblem> {
        let n = design.nrows();
        if n == 0 || response.nrows() != n {
            return Err(Error::Structural(format!(
                "design has {n} rows, response has {}",
                response.nrows()
            )));
        }
        if dims.iter().sum::<usize>() != design.ncols() || response.ncols() == 0 {
            return Err(Error::Structural("group widths do not match the design".into()));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite group-lasso input".into()));
        }
        let nf = n as f64;
        let gram = design.tr_mul(design) / nf;
        let cross = design.tr_mul(response) / nf;
        let lipschitz = top_eigenvalue(&gram);
        Ok(GroupLassoProblem {
            gram,
            cross,
            half_rss0: response.norm_squared() / (2.0 * nf),
            offsets: crate::autocov::offsets_from_dims(dims),
            lipschitz,
        })
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn groups(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Smallest λ with an all-zero solution: `max_j ‖n⁻¹ X_jᵀR‖_F`.
    pub fn lambda_max(&self) -> f64 {
        block_norms(&self.cross, &self.offsets).into_iter().fold(0.0, f64::max)
    }

    fn gram_mul(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(theta.nrows(), theta.ncols());
        linalg::gemm(&mut out, 1.0, &self.gram, theta, 0.0);
        out
    }

    /// Smooth part given `gt = XᵀXθ / n`.
    fn smooth_with(&self, theta: &DMatrix<f64>, gt: &DMatrix<f64>) -> f64 {
        self.half_rss0 - theta.dot(&self.cross) + 0.5 * theta.dot(gt)
    }

    fn smooth(&self, theta: &DMatrix<f64>) -> f64 {
        self.smooth_with(theta, &self.gram_mul(theta))
    }

    pub fn objective(&self, theta: &DMatrix<f64>, lambda: f64) -> f64 {
        self.smooth(theta) + lambda * block_norms(theta, &self.offsets).iter().sum::<f64>()
    }

    fn gradient(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        self.gram_mul(theta) - &self.cross
    }

    fn prox(&self, v: &mut DMatrix<f64>, thresh: f64) {
        for j in 0..self.groups() {
            let (a, w) = (self.offsets[j], self.offsets[j + 1] - self.offsets[j]);
            let mut blk = v.rows_mut(a, w);
            let nrm = blk.norm();
            if nrm <= thresh {
                blk.fill(0.0);
            } else {
                blk.scale_mut(1.0 - thresh / nrm);
            }
        }
    }

    /// Block FISTA with backtracking and restart on objective increase.
    pub fn solve(&self, lambda: f64, cfg: &FistaConfig, warm: Option<&DMatrix<f64>>) -> Result<GroupLassoFit> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be finite and non-negative, got {lambda}")));
        }
        cfg.validate()?;
        let shape = (self.gram.nrows(), self.cross.ncols());
        let mut x = match warm {
            Some(w) if w.shape() == shape => w.clone(),
            Some(w) => return Err(Error::Structural(format!("warm start has shape {:?}", w.shape()))),
            None => DMatrix::zeros(shape.0, shape.1),
        };
        let mut fx = self.objective(&x, lambda);
        let mut trace = vec![fx];
        if self.lipschitz == 0.0 || lambda >= self.lambda_max() {
            let zero = DMatrix::zeros(shape.0, shape.1);
            let f0 = self.objective(&zero, lambda);
            return Ok(GroupLassoFit {
                theta: zero,
                objective: f0,
                iterations: 0,
                converged: true,
                trace: vec![f0],
                last_change: 0.0,
                step: 0.0,
            });
        }
        let kkt_tol = cfg.kkt_tol * self.lambda_max();
        let mut step = 1.0 / self.lipschitz;
        // Gram products are carried along: one product per accepted step.
        let mut gx = self.gram_mul(&x);
        let mut y = x.clone();
        let mut gy = gx.clone();
        let mut t = 1.0_f64;
        let mut change = f64::INFINITY;
        let done = |x: DMatrix<f64>, fx: f64, k: usize, trace: Vec<f64>, change: f64, step: f64| GroupLassoFit {
            theta: x,
            objective: fx,
            iterations: k,
            converged: true,
            trace,
            last_change: change,
            step,
        };
        for k in 1..=cfg.max_iter {
            let grad = &gy - &self.cross;
            let fy = self.smooth_with(&y, &gy);
            let (xn, gn, fs) = loop {
                let mut cand = &y - &grad * step;
                self.prox(&mut cand, step * lambda);
                let gc = self.gram_mul(&cand);
                let d = &cand - &y;
                let fs = self.smooth_with(&cand, &gc);
                let bound = fy + grad.dot(&d) + d.norm_squared() / (2.0 * step);
                if fs <= bound + 1e-14 * fy.abs().max(1.0) {
                    break (cand, gc, fs);
                }
                step *= 0.5;
            };
            let fxn = fs + lambda * block_norms(&xn, &self.offsets).iter().sum::<f64>();
            if fxn > fx {
                if y == x {
                    // a plain proximal step cannot descend: rounding floor
                    return Ok(done(x, fx, k, trace, change, step));
                }
                // restart from the last accepted iterate
                t = 1.0;
                y.copy_from(&x);
                gy.copy_from(&gx);
                continue;
            }
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mom = (t - 1.0) / tn;
            let diff = &xn - &x;
            change = diff.norm();
            y = &xn + &diff * mom;
            gy = &gn + (&gn - &gx) * mom;
            t = tn;
            x = xn;
            gx = gn;
            fx = fxn;
            trace.push(fx);
            if change <= cfg.tol * x.norm().max(1.0)
                || (k % 25 == 0 && self.kkt_from_grad(&x, &(&gx - &self.cross), lambda) <= kkt_tol)
            {
                return Ok(done(x, fx, k, trace, change, step));
            }
        }
        Ok(GroupLassoFit {
            theta: x,
            objective: fx,
            iterations: cfg.max_iter,
            converged: false,
            trace,
            last_change: change,
            step,
        })
    }

    /// Largest KKT violation of `theta` at `lambda`.
    pub fn kkt_violation(&self, theta: &DMatrix<f64>, lambda: f64) -> f64 {
        self.kkt_from_grad(theta, &self.gradient(theta), lambda)
    }

    fn kkt_from_grad(&self, theta: &DMatrix<f64>, grad: &DMatrix<f64>, lambda: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.groups() {
            let (a, w) = (self.offsets[j], self.offsets[j + 1] - self.offsets[j]);
            let g = grad.rows(a, w);
            let th = theta.rows(a, w);
            let nt = th.norm();
            let v = if nt > 0.0 {
                (g + th * (lambda / nt)).norm()
            } else {
                (g.norm() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Packs a FISTA result as a [`BlockSolution`]; `gamma` holds λ.
    ///
    /// Solver stats: `primal_residual` is the last iterate change,
    /// `dual_residual` the KKT violation, `max_constraint` the largest
    /// block gradient norm and `rho` the final inverse step.
    pub fn to_solution(&self, fit: &GroupLassoFit, lambda: f64) -> BlockSolution {
        let norms = block_norms(&fit.theta, &self.offsets);
        let support = norms.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(j, _)| j).collect();
        let grad = self.gradient(&fit.theta);
        BlockSolution {
            theta: fit.theta.clone(),
            col_offsets: self.offsets.clone(),
            gamma: lambda,
            block_norms: norms,
            support,
            stats: SolverStats {
                iterations: fit.iterations,
                primal_residual: fit.last_change,
                dual_residual: self.kkt_violation(&fit.theta, lambda),
                objective: fit.objective,
                max_constraint: block_norms(&grad, &self.offsets).into_iter().fold(0.0, f64::max),
                rho: if fit.step > 0.0 { 1.0 / fit.step } else { 0.0 },
            },
            dual: DMatrix::zeros(0, 0),
            dual_theta: DMatrix::zeros(0, 0),
        }
    }

    /// Solution at `lambda`, or a convergence error carrying the last iterate.
    pub fn solve_block(&self, lambda: f64, cfg: &FistaConfig, warm: Option<&DMatrix<f64>>) -> Result<BlockSolution> {
        let fit = self.solve(lambda, cfg, warm)?;
        let sol = self.to_solution(&fit, lambda);
        if fit.converged {
            Ok(sol)
        } else {
            Err(Error::Convergence {
                iterations: fit.iterations,
                best: Box::new(sol),
            })
        }
    }

    /// Warm-started solutions along a descending λ path.
    pub fn solve_path(&self, lambdas: &[f64], cfg: &FistaConfig) -> Result<Vec<Result<BlockSolution>>> {
        if lambdas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Domain("lambda path must be non-increasing".into()));
        }
        let mut warm: Option<DMatrix<f64>> = None;
        let mut out = Vec::with_capacity(lambdas.len());
        for &lam in lambdas {
            let r = self.solve_block(lam, cfg, warm.as_ref());
            match &r {
                Ok(s) => warm = Some(s.theta.clone()),
                Err(Error::Convergence { best, .. }) => warm = Some(best.theta.clone()),
                Err(_) => {}
            }
            out.push(r);
        }
        Ok(out)
    }
}

fn top_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.is_empty() {
        return 0.0;
    }
    let mut x = nalgebra::DVector::from_fn(sym.nrows(), |k, _| 1.0 + 0.5 * ((k + 1) as f64).sin());
    x /= x.norm();
    let mut lam = 0.0;
    for _ in 0..100 {
        let y = sym * &x;
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        lam = x.dot(&y);
        x = y / ny;
    }
    lam.max(0.0)
}

/// Convenience wrapper: solve one group-lasso problem from raw data.
pub fn fista_group_lasso(
    design: &DMatrix<f64>,
    response: &DMatrix<f64>,
    dims: &[usize],
    lambda: f64,
    cfg: &FistaConfig,
) -> Result<BlockSolution> {
    GroupLassoProblem::new(design, response, dims)?.solve_block(lambda, cfg, None)
}

fn check_fit_config(cfg: &FitConfig) -> Result<()> {
    crate::models::validate_fit_config(cfg)
}

/// FPCA bases and the SFLR least-squares problem `Y_t ~ Σ_j b_jᵀ η̂_tj`.
#[derive(Debug, Clone)]
pub struct CovSflrProblem {
    pub grid: Arc<Grid>,
    pub bases: Vec<AutocovBasis>,
    pub scores: ScorePanel,
    pub problem: GroupLassoProblem,
}

impl CovSflrProblem {
    pub fn new(panel: &FunctionalPanel, y: &[f64], basis: &BasisConfig) -> Result<CovSflrProblem> {
        check_response(y, panel.n())?;
        let bases = estimate_bases(panel, basis, BasisKindChoice::Covariance)?;
        let scores = project_scores(panel, &bases)?;
        let problem = GroupLassoProblem::new(scores.matrix(), &DMatrix::from_column_slice(y.len(), 1, y), &scores.dims())?;
        Ok(CovSflrProblem {
            grid: panel.grid().clone(),
            bases,
            scores,
            problem,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.problem.lambda_max()
    }

    pub fn wrap(&self, solution: BlockSolution) -> SflrFit {
        SflrFit {
            method: Method::Cov,
            grid: self.grid.clone(),
            lags: 0,
            bases: self.bases.clone(),
            solution,
        }
    }

    pub fn fit(&self, lambda: f64, cfg: &FistaConfig) -> Result<SflrFit> {
        Ok(self.wrap(self.problem.solve_block(lambda, cfg, None)?))
    }

    pub fn fit_path(&self, lambdas: &[f64], cfg: &FistaConfig) -> Result<Vec<Result<SflrFit>>> {
        Ok(self
            .problem
            .solve_path(lambdas, cfg)?
            .into_iter()
            .map(|r| r.map(|s| self.wrap(s)))
            .collect())
    }
}

/// FPCA bases on both sides and the regression `ζ̂_t ~ Σ_j B_jᵀ η̂_tj`.
#[derive(Debug, Clone)]
pub struct CovFflrProblem {
    pub grid: Arc<Grid>,
    pub response_grid: Arc<Grid>,
    pub bases: Vec<AutocovBasis>,
    pub response_basis: AutocovBasis,
    pub scores: ScorePanel,
    pub response_scores: DMatrix<f64>,
    pub problem: GroupLassoProblem,
}

impl CovFflrProblem {
    pub fn new(panel_x: &FunctionalPanel, panel_y: &FunctionalPanel, basis: &BasisConfig) -> Result<CovFflrProblem> {
        if panel_x.n() != panel_y.n() {
            return Err(Error::Structural(format!(
                "predictor panel has n = {}, response panel n = {}",
                panel_x.n(),
                panel_y.n()
            )));
        }
        let bases = estimate_bases(panel_x, basis, BasisKindChoice::Covariance)?;
        let scores = project_scores(panel_x, &bases)?;
        let rb = response_basis(panel_y, basis, false)?;
        let response_scores = project_series(panel_y, 0, &rb)?;
        let problem = GroupLassoProblem::new(scores.matrix(), &response_scores, &scores.dims())?;
        Ok(CovFflrProblem {
            grid: panel_x.grid().clone(),
            response_grid: panel_y.grid().clone(),
            bases,
            response_basis: rb,
            scores,
            response_scores,
            problem,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.problem.lambda_max()
    }

    pub fn wrap(&self, solution: BlockSolution) -> FflrFit {
        FflrFit {
            method: Method::Cov,
            grid: self.grid.clone(),
            response_grid: self.response_grid.clone(),
            lags: 0,
            bases: self.bases.clone(),
            response_basis: self.response_basis.clone(),
            solution,
        }
    }

    pub fn fit(&self, lambda: f64, cfg: &FistaConfig) -> Result<FflrFit> {
        Ok(self.wrap(self.problem.solve_block(lambda, cfg, None)?))
    }

    pub fn fit_path(&self, lambdas: &[f64], cfg: &FistaConfig) -> Result<Vec<Result<FflrFit>>> {
        Ok(self
            .problem
            .solve_path(lambdas, cfg)?
            .into_iter()
            .map(|r| r.map(|s| self.wrap(s)))
            .collect())
    }
}

/// FPCA bases and one least-squares VAR regression per target row.
#[derive(Debug, Clone)]
pub struct CovVfarProblem {
    pub grid: Arc<Grid>,
    pub config: VfarConfig,
    pub bases: Vec<AutocovBasis>,
    pub scores: ScorePanel,
    pub problems: Vec<GroupLassoProblem>,
}

impl CovVfarProblem {
    pub fn new(panel: &FunctionalPanel, basis: &BasisConfig, config: &VfarConfig) -> Result<CovVfarProblem> {
        let bases = estimate_bases(panel, basis, BasisKindChoice::Covariance)?;
        let scores = project_scores(panel, &bases)?;
        CovVfarProblem::from_scores(panel.grid().clone(), config, bases, scores)
    }

    pub fn from_scores(
        grid: Arc<Grid>,
        config: &VfarConfig,
        bases: Vec<AutocovBasis>,
        scores: ScorePanel,
    ) -> Result<CovVfarProblem> {
        let h = config.order;
        let z = lagged_design(&scores, h)?;
        let dims = scores.dims();
        let cols: Vec<usize> = (0..h).flat_map(|_| dims.iter().copied()).collect();
        let n = scores.n();
        // one Gram matrix for every row
        let base = GroupLassoProblem::new(&z, &scores.series(0).rows(h, n - h).into_owned(), &cols)?;
        let nf = (n - h) as f64;
        let problems = (0..scores.p())
            .map(|j| {
                let target = scores.series(j).rows(h, n - h).into_owned();
                GroupLassoProblem {
                    gram: base.gram.clone(),
                    cross: z.tr_mul(&target) / nf,
                    half_rss0: target.norm_squared() / (2.0 * nf),
                    offsets: base.offsets.clone(),
                    lipschitz: base.lipschitz,
                }
            })
            .collect();
        Ok(CovVfarProblem {
            grid,
            config: *config,
            bases,
            scores,
            problems,
        })
    }

    pub fn p(&self) -> usize {
        self.problems.len()
    }

    pub fn lambda_max(&self, j: usize) -> f64 {
        self.problems[j].lambda_max()
    }

    pub fn fit_row(&self, j: usize, lambda: f64, cfg: &FistaConfig) -> Result<BlockSolution> {
        self.problems[j].solve_block(lambda, cfg, None)
    }

    pub fn row_path(&self, j: usize, lambdas: &[f64], cfg: &FistaConfig) -> Result<Vec<Result<BlockSolution>>> {
        self.problems[j].solve_path(lambdas, cfg)
    }

    pub fn fit(&self, lambdas: &[f64], cfg: &FistaConfig) -> Result<VfarFit> {
        let p = self.p();
        if lambdas.len() != p && lambdas.len() != 1 {
            return Err(Error::Structural(format!("expected 1 or {p} lambda values, got {}", lambdas.len())));
        }
        let results: Vec<Result<BlockSolution>> = (0..p)
            .into_par_iter()
            .map(|j| self.fit_row(j, lambdas[if lambdas.len() == 1 { 0 } else { j }], cfg))
            .collect();
        let mut rows = Vec::with_capacity(p);
        let mut failures = Vec::new();
        for (j, r) in results.into_iter().enumerate() {
            match r {
                Ok(s) => rows.push(Some(s)),
                Err(e @ (Error::Config(_) | Error::Domain(_))) => return Err(e),
                Err(e) => {
                    failures.push(RowFailure {
                        row: j,
                        error: e.to_string(),
                    });
                    rows.push(None);
                }
            }
        }
        Ok(self.wrap(rows, failures))
    }

    pub fn wrap(&self, rows: Vec<Option<BlockSolution>>, failures: Vec<RowFailure>) -> VfarFit {
        VfarFit {
            method: Method::Cov,
            grid: self.grid.clone(),
            lags: 0,
            config: self.config,
            bases: self.bases.clone(),
            rows,
            failures,
        }
    }
}

pub fn fit_cov_sflr(panel: &FunctionalPanel, y: &[f64], cfg: &FitConfig, lambda: f64) -> Result<SflrFit> {
    check_fit_config(cfg)?;
    CovSflrProblem::new(panel, y, &cfg.basis)?.fit(lambda, &cfg.fista)
}

pub fn fit_cov_fflr(panel_x: &FunctionalPanel, panel_y: &FunctionalPanel, cfg: &FitConfig, lambda: f64) -> Result<FflrFit> {
    check_fit_config(cfg)?;
    CovFflrProblem::new(panel_x, panel_y, &cfg.basis)?.fit(lambda, &cfg.fista)
}

pub fn fit_cov_vfar(panel: &FunctionalPanel, cfg: &FitConfig, vcfg: &VfarConfig, lambdas: &[f64]) -> Result<VfarFit> {
    check_fit_config(cfg)?;
    CovVfarProblem::new(panel, &cfg.basis, vcfg)?.fit(lambdas, &cfg.fista)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Plain proximal gradient with the exact Lipschitz constant, run long.
    fn ista_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, dims: &[usize], lambda: f64) -> f64 {
        let n = x.nrows() as f64;
        let gram = x.tr_mul(x) / n;
        let lip = gram.clone().symmetric_eigenvalues().max();
        let offsets = crate::autocov::offsets_from_dims(dims);
        let mut th = DMatrix::zeros(x.ncols(), y.ncols());
        for _ in 0..200_000 {
            let grad = x.tr_mul(&(x * &th - y)) / n;
            th -= grad / lip;
            for j in 0..dims.len() {
                let mut b = th.rows_mut(offsets[j], dims[j]);
                let nb = b.norm();
                let s = if nb > lambda / lip { 1.0 - lambda / lip / nb } else { 0.0 };
                b.scale_mut(s);
            }
        }
        let r = y - x * &th;
        r.norm_squared() / (2.0 * n) + lambda * block_norms(&th, &offsets).iter().sum::<f64>()
    }

    #[test]
    fn matches_long_run_proximal_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 50, 12);
        let y = random(&mut rng, 50, 1);
        let dims = [2; 6];
        let p = GroupLassoProblem::new(&x, &y, &dims).unwrap();
        let lam = 0.3 * p.lambda_max();
        let fit = p.solve(lam, &FistaConfig::default(), None).unwrap();
        assert!(fit.converged);
        let oracle = ista_oracle(&x, &y, &dims, lam);
        assert!((fit.objective - oracle).abs() < 1e-6, "{} vs {oracle}", fit.objective);
    }

    #[test]
    fn orthonormal_design_soft_thresholds() {
        // XᵀX = nI with n = 4, three single-column groups
        let x = DMatrix::from_row_slice(4, 3, &[1., 1., 1., 1., -1., 1., 1., 1., -1., 1., -1., -1.]);
        assert_eq!(x.tr_mul(&x), DMatrix::identity(3, 3) * 4.0);
        let y = DMatrix::from_column_slice(4, 1, &[2.0, 0.5, -1.0, 3.0]);
        let ols = x.tr_mul(&y) / 4.0;
        let lam = 0.4;
        let sol = fista_group_lasso(&x, &y, &[1, 1, 1], lam, &FistaConfig::default()).unwrap();
        for j in 0..3 {
            let o = ols[j];
            let want = o.signum() * (o.abs() - lam).max(0.0);
            assert!((sol.theta[j] - want).abs() < 1e-8, "{j}: {} vs {want}", sol.theta[j]);
        }
    }

    #[test]
    fn zero_exactly_at_lambda_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, 30, 6);
        let y = random(&mut rng, 30, 2);
        let p = GroupLassoProblem::new(&x, &y, &[3, 2, 1]).unwrap();
        let lm = p.lambda_max();
        let at = p.solve(lm, &FistaConfig::default(), None).unwrap();
        assert!(at.theta.iter().all(|&v| v == 0.0));
        let below = p.solve(lm * (1.0 - 1e-6), &FistaConfig::default(), None).unwrap();
        assert!(below.theta.iter().any(|&v| v != 0.0));
        assert!(p.kkt_violation(&DMatrix::zeros(6, 2), lm) <= 1e-8);
    }

    #[test]
    fn non_finite_input_is_data_error() {
        let mut x = DMatrix::zeros(3, 2);
        x[(0, 0)] = f64::NAN;
        assert!(matches!(
            GroupLassoProblem::new(&x, &DMatrix::zeros(3, 1), &[2]),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn objective_trace_is_monotone(seed in any::<u64>(), frac in 0.01f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&mut rng, 20, 8);
            let y = random(&mut rng, 20, 2);
            let p = GroupLassoProblem::new(&x, &y, &[2, 2, 3, 1]).unwrap();
            let fit = p.solve(frac * p.lambda_max(), &FistaConfig::default(), None).unwrap();
            prop_assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(p.kkt_violation(&fit.theta, frac * p.lambda_max()) < 1e-5);
        }

        #[test]
        fn zero_iff_above_lambda_max(seed in any::<u64>(), frac in 0.5f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&mut rng, 15, 5);
            let y = random(&mut rng, 15, 1);
            let p = GroupLassoProblem::new(&x, &y, &[2, 3]).unwrap();
            let lm = p.lambda_max();
            prop_assume!((frac - 1.0).abs() > 1e-6);
            let fit = p.solve(frac * lm, &FistaConfig::default(), None).unwrap();
            let zero = fit.theta.iter().all(|&v| v == 0.0);
            prop_assert_eq!(zero, frac >= 1.0);
        }
    }
}
