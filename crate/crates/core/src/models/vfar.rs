//! Vector functional autoregression
//! `X_tj(v) = Σ_{h'≤H} Σ_j' ∫ X_{(t−h')j'}(u) A_jj'^{(h')}(u,v) du + ε_tj(v)`.
//!
//! Row `j` is regressed in score space on the stacked lags
//! `(η̂_{t−1}, …, η̂_{t−H})`; block column `(h'−1)p + j'` holds
//! `Ω̂_jj'^{(h')}` (`d_j' × d_j`).

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bases_from_specs, check_kind, coef_block, validate_fit_config, BasisSpec, FitConfig, FitManifest, GridSpec,
    Method, ModelKind, RowFailure, SolutionSpec,
};
use crate::autocov::{estimate_bases, project_scores, AutocovBasis, BasisConfig, BasisKindChoice, ScorePanel};
use crate::error::{Error, Result};
use crate::func::{FunctionalPanel, Grid, LowRankKernel};
use crate::rmd::{solve_path, solve_warm, BlockSolution, MomentSystem, RmdConfig};

/// Which score lags serve as instruments for the lag-`h` moment.
///
/// `Lagged` pairs target time `t` with `η̂_{t−H−h}`, which is uncorrelated
/// with both the innovation at `t` and the contamination at `t−1, …, t−H`.
/// `Leading` pairs it with `η̂_{t+h}`; that choice is correlated with the
/// innovation and only identifies the coefficients in degenerate cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instruments {
    #[default]
    Lagged,
    Leading,
}

impl std::str::FromStr for Instruments {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lagged" => Ok(Instruments::Lagged),
            "leading" => Ok(Instruments::Leading),
            _ => Err(Error::Config(format!("unknown instruments {s:?} (expected lagged or leading)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VfarConfig {
    /// Autoregressive order `H`.
    pub order: usize,
    pub instruments: Instruments,
}

impl Default for VfarConfig {
    fn default() -> Self {
        VfarConfig {
            order: 1,
            instruments: Instruments::Lagged,
        }
    }
}

/// `(n−H) × H·Σd` matrix whose row `t−H` is `(η̂_{t−1}, …, η̂_{t−H})`.
pub fn lagged_design(scores: &ScorePanel, order: usize) -> Result<DMatrix<f64>> {
    let n = scores.n();
    if order == 0 || n <= order {
        return Err(Error::Domain(format!("need 1 <= H < n, got H = {order}, n = {n}")));
    }
    let s = scores.matrix();
    let dsum = s.ncols();
    let mut z = DMatrix::zeros(n - order, order * dsum);
    for h in 1..=order {
        z.view_mut((0, (h - 1) * dsum), (n - order, dsum))
            .copy_from(&s.rows(order - h, n - order));
    }
    Ok(z)
}

/// Row ranges `(instrument start, design start, count)` for lag `h`.
fn ranges(n: usize, order: usize, h: usize, inst: Instruments) -> (usize, usize, usize) {
    let count = n - order - h;
    match inst {
        Instruments::Lagged => (0, h, count),
        Instruments::Leading => (order + h, 0, count),
    }
}

fn check_sizes(n: usize, order: usize, lags: usize) -> Result<()> {
    if order == 0 || lags == 0 || n <= order + lags {
        return Err(Error::Domain(format!("need n > H + L with H, L >= 1, got n = {n}, H = {order}, L = {lags}")));
    }
    Ok(())
}

fn vfar_g(scores: &ScorePanel, z: &DMatrix<f64>, order: usize, lags: usize, inst: Instruments) -> DMatrix<f64> {
    let s = scores.matrix();
    let dsum = s.ncols();
    let mut g = DMatrix::zeros(lags * dsum, z.ncols());
    for h in 1..=lags {
        let (i0, z0, m) = ranges(scores.n(), order, h, inst);
        g.rows_mut((h - 1) * dsum, dsum)
            .gemm_tr(-1.0 / m as f64, &s.rows(i0, m), &z.rows(z0, m), 0.0);
    }
    g
}

fn vfar_g0(scores: &ScorePanel, j: usize, order: usize, lags: usize, inst: Instruments) -> DMatrix<f64> {
    let s = scores.matrix();
    let dsum = s.ncols();
    let target = scores.series(j);
    let mut g0 = DMatrix::zeros(lags * dsum, target.ncols());
    for h in 1..=lags {
        let (i0, z0, m) = ranges(scores.n(), order, h, inst);
        g0.rows_mut((h - 1) * dsum, dsum)
            .gemm_tr(1.0 / m as f64, &s.rows(i0, m), &target.rows(order + z0, m), 0.0);
    }
    g0
}

fn layout(dims: &[usize], times: usize) -> Vec<usize> {
    (0..times).flat_map(|_| dims.iter().copied()).collect()
}

/// Moment system for target row `j`.
pub fn build_moments_vfar(
    scores: &ScorePanel,
    j: usize,
    order: usize,
    lags: usize,
    inst: Instruments,
) -> Result<MomentSystem> {
    check_sizes(scores.n(), order, lags)?;
    if j >= scores.p() {
        return Err(Error::Structural(format!("row {j} out of range for p = {}", scores.p())));
    }
    let z = lagged_design(scores, order)?;
    let dims = scores.dims();
    MomentSystem::new(
        vfar_g(scores, &z, order, lags, inst),
        vfar_g0(scores, j, order, lags, inst),
        &layout(&dims, lags),
        &layout(&dims, order),
    )
}

/// Per-row moment systems sharing one `Ĝ`.
#[derive(Debug, Clone)]
pub struct VfarProblem {
    pub grid: Arc<Grid>,
    pub lags: usize,
    pub config: VfarConfig,
    pub bases: Vec<AutocovBasis>,
    pub scores: ScorePanel,
    pub systems: Vec<MomentSystem>,
}

impl VfarProblem {
    pub fn new(panel: &FunctionalPanel, basis: &BasisConfig, config: &VfarConfig) -> Result<VfarProblem> {
        check_sizes(panel.n(), config.order, basis.lag_budget)?;
        let bases = estimate_bases(panel, basis, BasisKindChoice::Autocov)?;
        let scores = project_scores(panel, &bases)?;
        VfarProblem::from_scores(panel.grid().clone(), basis.lag_budget, config, bases, scores)
    }

    pub fn from_scores(
        grid: Arc<Grid>,
        lags: usize,
        config: &VfarConfig,
        bases: Vec<AutocovBasis>,
        scores: ScorePanel,
    ) -> Result<VfarProblem> {
        let (order, inst) = (config.order, config.instruments);
        let first = build_moments_vfar(&scores, 0, order, lags, inst)?;
        let mut systems = Vec::with_capacity(scores.p());
        for j in 1..scores.p() {
            systems.push(first.with_g0(vfar_g0(&scores, j, order, lags, inst))?);
        }
        systems.insert(0, first);
        Ok(VfarProblem {
            grid,
            lags,
            config: *config,
            bases,
            scores,
            systems,
        })
    }

    pub fn p(&self) -> usize {
        self.systems.len()
    }

    pub fn gamma_max(&self, j: usize) -> f64 {
        self.systems[j].gamma_max()
    }

    pub fn fit_row(&self, j: usize, gamma: f64, rmd: &RmdConfig) -> Result<BlockSolution> {
        solve_warm(&self.systems[j], gamma, rmd, None)
    }

    pub fn row_path(&self, j: usize, gammas: &[f64], rmd: &RmdConfig) -> Result<Vec<Result<BlockSolution>>> {
        solve_path(&self.systems[j], gammas, rmd)
    }

    /// Fits every row in parallel; `gammas` holds one level per row or a
    /// single shared level.
    pub fn fit(&self, gammas: &[f64], rmd: &RmdConfig) -> Result<VfarFit> {
        let p = self.p();
        if gammas.len() != p && gammas.len() != 1 {
            return Err(Error::Structural(format!("expected 1 or {p} gamma values, got {}", gammas.len())));
        }
        let results: Vec<Result<BlockSolution>> = (0..p)
            .into_par_iter()
            .map(|j| self.fit_row(j, gammas[if gammas.len() == 1 { 0 } else { j }], rmd))
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
            method: Method::Auto,
            grid: self.grid.clone(),
            lags: self.lags,
            config: self.config,
            bases: self.bases.clone(),
            rows,
            failures,
        }
    }
}

/// Fitted VFAR model; `rows[j]` is `None` when row `j` failed.
#[derive(Debug, Clone)]
pub struct VfarFit {
    pub method: Method,
    pub grid: Arc<Grid>,
    pub lags: usize,
    pub config: VfarConfig,
    pub bases: Vec<AutocovBasis>,
    pub rows: Vec<Option<BlockSolution>>,
    pub failures: Vec<RowFailure>,
}

impl VfarFit {
    pub fn new(
        method: Method,
        grid: Arc<Grid>,
        lags: usize,
        config: VfarConfig,
        bases: Vec<AutocovBasis>,
        rows: Vec<Option<BlockSolution>>,
        failures: Vec<RowFailure>,
    ) -> Result<VfarFit> {
        let dims: Vec<usize> = bases.iter().map(|b| b.d).collect();
        let cols = layout(&dims, config.order);
        if rows.len() != dims.len() {
            return Err(Error::Structural(format!("{} row fits for p = {}", rows.len(), dims.len())));
        }
        for (j, s) in rows.iter().enumerate() {
            if let Some(s) = s {
                let widths: Vec<usize> = s.col_offsets.windows(2).map(|w| w[1] - w[0]).collect();
                if widths != cols || s.theta.ncols() != dims[j] {
                    return Err(Error::Structural(format!("row {j} solution does not match the bases")));
                }
            }
        }
        Ok(VfarFit {
            method,
            grid,
            lags,
            config,
            bases,
            rows,
            failures,
        })
    }

    pub fn p(&self) -> usize {
        self.bases.len()
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn gammas(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.as_ref().map(|s| s.gamma)).collect()
    }

    fn row(&self, j: usize) -> Result<&BlockSolution> {
        self.rows[j]
            .as_ref()
            .ok_or_else(|| Error::Capability(format!("row {j} has no fitted solution")))
    }

    /// `Ω̂_jj'^{(h')}` (`d_j' × d_j`), `h'` starting at 1.
    pub fn omega(&self, j: usize, jp: usize, hp: usize) -> Result<DMatrix<f64>> {
        let s = self.row(j)?;
        Ok(coef_block(&s.theta, &s.col_offsets, (hp - 1) * self.p() + jp))
    }

    /// `Â_jj'^{(h')}(u,v) = ψ̂_j'(u)ᵀ Ω̂_jj'^{(h')} ψ̂_j(v)`.
    pub fn a(&self, j: usize, jp: usize, hp: usize) -> Result<LowRankKernel> {
        let g = self.grid.len();
        LowRankKernel::new(
            self.grid.clone(),
            self.grid.clone(),
            self.bases[jp].matrix(g),
            self.omega(j, jp, hp)?,
            self.bases[j].matrix(g),
        )
    }

    /// Full coefficient matrix: block column `j` of the result is row `j`'s
    /// solution, so predictions are `Z · coef` with `Z` from [`lagged_design`].
    pub fn coefficient_matrix(&self) -> Result<DMatrix<f64>> {
        let dims: Vec<usize> = self.bases.iter().map(|b| b.d).collect();
        let dsum: usize = dims.iter().sum();
        let mut out = DMatrix::zeros(self.order() * dsum, dsum);
        let mut c = 0;
        for j in 0..self.p() {
            out.columns_mut(c, dims[j]).copy_from(&self.row(j)?.theta);
            c += dims[j];
        }
        Ok(out)
    }

    /// In-sample one-step predictions: row `r` predicts `η̂_{r+H}`.
    pub fn predict_in_sample(&self, scores: &ScorePanel) -> Result<DMatrix<f64>> {
        self.check_scores(scores)?;
        let z = lagged_design(scores, self.order())?;
        Ok(z * self.coefficient_matrix()?)
    }

    /// Prediction of the score vector following the last row of `scores`.
    pub fn predict_next(&self, scores: &ScorePanel) -> Result<DMatrix<f64>> {
        self.check_scores(scores)?;
        let (n, h) = (scores.n(), self.order());
        if n < h {
            return Err(Error::Domain(format!("need at least H = {h} recent score rows, got {n}")));
        }
        let s = scores.matrix();
        let dsum = s.ncols();
        let mut z = DMatrix::zeros(1, h * dsum);
        for k in 1..=h {
            z.view_mut((0, (k - 1) * dsum), (1, dsum)).copy_from(&s.row(n - k));
        }
        Ok(z * self.coefficient_matrix()?)
    }

    pub fn project(&self, panel: &FunctionalPanel) -> Result<ScorePanel> {
        project_scores(panel, &self.bases)
    }

    fn check_scores(&self, scores: &ScorePanel) -> Result<()> {
        let dims: Vec<usize> = self.bases.iter().map(|b| b.d).collect();
        if scores.dims() != dims {
            return Err(Error::Structural("scores do not match the fitted bases".into()));
        }
        Ok(())
    }

    pub fn manifest(&self) -> FitManifest {
        FitManifest {
            model: ModelKind::Vfar,
            method: self.method,
            lags: self.lags,
            order: Some(self.config.order),
            instruments: Some(self.config.instruments),
            grid: GridSpec::from_grid(&self.grid),
            bases: self.bases.iter().map(BasisSpec::from_basis).collect(),
            response_grid: None,
            response_basis: None,
            solutions: self.rows.iter().flatten().map(SolutionSpec::from_solution).collect(),
            row_failures: self.failures.clone(),
        }
    }

    pub fn from_manifest(m: &FitManifest) -> Result<VfarFit> {
        check_kind(m, ModelKind::Vfar)?;
        let grid = m.grid.to_grid()?;
        let bases = bases_from_specs(&m.bases, &grid)?;
        let config = VfarConfig {
            order: m.order.ok_or_else(|| Error::Parse("VFAR manifest without order".into()))?,
            instruments: m.instruments.unwrap_or_default(),
        };
        let mut stored = m.solutions.iter();
        let mut rows = Vec::with_capacity(bases.len());
        for j in 0..bases.len() {
            if m.row_failures.iter().any(|f| f.row == j) {
                rows.push(None);
            } else {
                let s = stored
                    .next()
                    .ok_or_else(|| Error::Parse(format!("VFAR manifest lacks a solution for row {j}")))?;
                rows.push(Some(s.to_solution()?));
            }
        }
        if stored.next().is_some() {
            return Err(Error::Parse("VFAR manifest has more solutions than rows".into()));
        }
        VfarFit::new(m.method, grid, m.lags, config, bases, rows, m.row_failures.clone())
    }
}

pub fn fit_vfar(panel: &FunctionalPanel, cfg: &FitConfig, vcfg: &VfarConfig, gammas: &[f64]) -> Result<VfarFit> {
    validate_fit_config(cfg)?;
    VfarProblem::new(panel, &cfg.basis, vcfg)?.fit(gammas, &cfg.rmd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_scores(v: &[f64]) -> ScorePanel {
        ScorePanel::new(DMatrix::from_column_slice(v.len(), 1, v), &[1]).unwrap()
    }

    #[test]
    fn three_point_example_leading() {
        let sys = build_moments_vfar(&scalar_scores(&[1.0, 2.0, 3.0]), 0, 1, 1, Instruments::Leading).unwrap();
        assert_eq!(sys.g0()[(0, 0)], 6.0);
        assert_eq!(sys.g()[(0, 0)], -3.0);
    }

    #[test]
    fn three_point_example_lagged() {
        let sys = build_moments_vfar(&scalar_scores(&[1.0, 2.0, 3.0]), 0, 1, 1, Instruments::Lagged).unwrap();
        assert_eq!(sys.g0()[(0, 0)], 3.0);
        assert_eq!(sys.g()[(0, 0)], -2.0);
    }

    #[test]
    fn too_short_is_domain_error() {
        assert!(matches!(
            build_moments_vfar(&scalar_scores(&[1.0, 2.0]), 0, 1, 1, Instruments::Lagged),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_scores_zero_system() {
        let s = ScorePanel::new(DMatrix::zeros(8, 3), &[2, 1]).unwrap();
        let sys = build_moments_vfar(&s, 1, 2, 2, Instruments::Lagged).unwrap();
        assert!(sys.g().iter().chain(sys.g0().iter()).all(|&v| v == 0.0));
        assert_eq!((sys.q(), sys.p(), sys.d_tilde()), (4, 4, 1));
    }

    fn var1_scores(omega: &DMatrix<f64>, n: usize, seed: u64) -> ScorePanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = omega.nrows();
        let mut s = DMatrix::zeros(n, d);
        for t in 1..n {
            let prev = s.row(t - 1).into_owned();
            let noise = nalgebra::RowDVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            s.set_row(t, &(prev * omega + noise));
        }
        ScorePanel::new(s, &[d]).unwrap()
    }

    #[test]
    fn exact_var_recovers_transition() {
        let omega = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.3, 0.4]);
        let n = 40;
        let mut s2 = DMatrix::zeros(n, 2);
        s2.set_row(0, &nalgebra::RowDVector::from_row_slice(&[0.7, -1.1]));
        for t in 1..n {
            let prev = s2.row(t - 1).into_owned();
            s2.set_row(t, &(prev * &omega));
        }
        let scores = ScorePanel::new(s2, &[2]).unwrap();
        let problem = VfarProblem::from_scores(
            Grid::uniform(0.0, 1.0, 3).unwrap(),
            3,
            &VfarConfig::default(),
            vec![unit_basis(2)],
            scores.clone(),
        )
        .unwrap();
        let fit = problem.fit(&[0.0], &RmdConfig::default()).unwrap();
        let est = fit.omega(0, 0, 1).unwrap();
        assert!((&est - &omega).norm() < 1e-3, "{est}");
        let pred = fit.predict_next(&scores.slice_time(0..10)).unwrap();
        let truth = scores.matrix().row(9) * &omega;
        assert!((pred - truth).norm() < 1e-3);
    }

    fn unit_basis(d: usize) -> AutocovBasis {
        let grid = Grid::uniform(0.0, 1.0, 3).unwrap();
        let curves = (0..d)
            .map(|l| {
                let mut v = vec![0.0; 3];
                v[l] = 1.0;
                crate::func::Curve::new(grid.clone(), v).unwrap()
            })
            .collect();
        AutocovBasis::from_parts(0, crate::autocov::BasisKind::Covariance, vec![1.0; d], curves).unwrap()
    }

    #[test]
    fn lagged_instruments_consistent_with_noise() {
        let omega = DMatrix::from_element(1, 1, 0.6);
        let scores = var1_scores(&omega, 20000, 11);
        let sys = build_moments_vfar(&scores, 0, 1, 1, Instruments::Lagged).unwrap();
        let est = -sys.g0()[(0, 0)] / sys.g()[(0, 0)];
        assert!((est - 0.6).abs() < 0.05, "{est}");
    }

    #[test]
    fn identity_block_copies_previous_scores() {
        let s = ScorePanel::new(DMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64), &[2]).unwrap();
        let mut sol = BlockSolution::zero(
            &build_moments_vfar(&s, 0, 1, 1, Instruments::Lagged).unwrap(),
            1.0,
        );
        sol.theta = DMatrix::identity(2, 2);
        let fit = VfarFit::new(
            Method::Auto,
            Grid::uniform(0.0, 1.0, 3).unwrap(),
            1,
            VfarConfig::default(),
            vec![unit_basis(2)],
            vec![Some(sol)],
            vec![],
        )
        .unwrap();
        assert_eq!(fit.predict_next(&s).unwrap(), s.matrix().rows(4, 1).into_owned());
        let ins = fit.predict_in_sample(&s).unwrap();
        assert_eq!(ins, s.matrix().rows(0, 4).into_owned());
    }

    #[test]
    fn zero_fit_predicts_zero_and_failed_rows_reported() {
        let s = ScorePanel::new(DMatrix::from_fn(6, 2, |i, j| (i + j) as f64), &[1, 1]).unwrap();
        let sys = build_moments_vfar(&s, 0, 1, 1, Instruments::Lagged).unwrap();
        let fit = VfarFit::new(
            Method::Auto,
            Grid::uniform(0.0, 1.0, 3).unwrap(),
            1,
            VfarConfig::default(),
            vec![unit_basis(1), unit_basis(1)],
            vec![Some(BlockSolution::zero(&sys, 1.0)), None],
            vec![RowFailure {
                row: 1,
                error: "x".into(),
            }],
        )
        .unwrap();
        assert!(matches!(fit.predict_next(&s), Err(Error::Capability(_))));
        let back = VfarFit::from_manifest(&fit.manifest()).unwrap();
        assert!(back.rows[1].is_none());
        assert_eq!(back.rows[0].as_ref().unwrap().theta, DMatrix::zeros(2, 1));
    }
}
