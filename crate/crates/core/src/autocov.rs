//! Autocovariance-based dimension reduction.
//!
//! For each series the lag-pooled operator
//! `K(u,v) = Σ_{h=1}^{L} ∫ Σ̂_h(u,z) Σ̂_h(v,z) dz`
//! is built from sample autocovariances at nonzero lags, which are unaffected
//! by white-noise contamination. Its leading eigenfunctions form the basis
//! the curves are projected on. Classical lag-0 FPCA is provided alongside,
//! for response curves and the covariance-based baseline.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{check_grid, Curve, FunctionalPanel, Grid, Kernel};

/// Sample cross-covariance kernels `Σ̂_{h,jk}` at a single lag.
#[derive(Debug, Clone)]
pub struct LagCovEstimate {
    pub lag: usize,
    blocks: BTreeMap<(usize, usize), Kernel>,
}

impl LagCovEstimate {
    pub fn get(&self, j: usize, k: usize) -> Option<&Kernel> {
        self.blocks.get(&(j, k))
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.blocks.keys()
    }
}

/// `(n−h)⁻¹ Σ_{t<n−h} a_t(u) b_{t+h}(v)` for series matrices `a`, `b` (rows = time).
fn lagged_cross(a: &DMatrix<f64>, b: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let m = n - h;
    let head = a.rows(0, m);
    let tail = b.rows(h, m);
    let mut out = head.transpose() * tail;
    out /= m as f64;
    out
}

/// Sample autocovariance kernels `Σ̂_{h,jk}(u,v)` for the requested `(j, k)` pairs.
pub fn sample_autocov(panel: &FunctionalPanel, h: usize, pairs: &[(usize, usize)]) -> Result<LagCovEstimate> {
    if h >= panel.n() {
        return Err(Error::Domain(format!("lag {h} must be below n = {}", panel.n())));
    }
    let mut blocks = BTreeMap::new();
    for &(j, k) in pairs {
        if j >= panel.p() || k >= panel.p() {
            return Err(Error::Domain(format!("series pair ({j}, {k}) outside 0..{}", panel.p())));
        }
        let a = panel.series_matrix(j);
        let b = if j == k { a.clone() } else { panel.series_matrix(k) };
        let values = lagged_cross(&a, &b, h);
        blocks.insert((j, k), Kernel::new(panel.grid().clone(), panel.grid().clone(), values)?);
    }
    Ok(LagCovEstimate { lag: h, blocks })
}

/// `Σ_{h=1}^{L} S_h D S_hᵀ` for one series matrix.
fn lag_pooled(series: &DMatrix<f64>, weights: &[f64], lag_budget: usize) -> DMatrix<f64> {
    let g = series.ncols();
    let mut k = DMatrix::zeros(g, g);
    for h in 1..=lag_budget {
        let s = lagged_cross(series, series, h);
        let mut sd = s.clone();
        for (c, &w) in weights.iter().enumerate() {
            sd.column_mut(c).scale_mut(w);
        }
        k.gemm(1.0, &sd, &s.transpose(), 1.0);
    }
    // exact symmetry
    let kt = k.transpose();
    (k + kt) * 0.5
}

/// The lag-pooled operator `K̂_jj` for series `j`.
pub fn compute_k(panel: &FunctionalPanel, j: usize, lag_budget: usize) -> Result<Kernel> {
    if lag_budget == 0 || lag_budget >= panel.n() {
        return Err(Error::Domain(format!(
            "lag budget must satisfy 1 <= L < n, got L = {lag_budget}, n = {}",
            panel.n()
        )));
    }
    if j >= panel.p() {
        return Err(Error::Domain(format!("series {j} outside 0..{}", panel.p())));
    }
    let grid = panel.grid();
    let values = lag_pooled(&panel.series_matrix(j), grid.weights(), lag_budget);
    Kernel::new(grid.clone(), grid.clone(), values)
}

/// Eigenvalues (all of them, descending) and the leading eigenfunctions.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Curve>,
}

const NEG_EIGEN_TOL: f64 = 1e-10;

/// Weighted symmetric eigenproblem `∫ K(u,v) ψ(v) dv = λ ψ(u)`.
///
/// Eigenfunctions are orthonormal under the grid quadrature and signed so
/// that their largest-magnitude coordinate is positive.
pub fn eigen_decompose(k: &Kernel, max_components: usize) -> Result<Spectrum> {
    check_grid(k.grid_u(), k.grid_v(), "eigen_decompose")?;
    let grid = k.grid_u().clone();
    let vals = k.values();
    let scale = vals.amax().max(1.0);
    let asym = (vals - vals.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(Error::Data(format!("kernel is not symmetric (max asymmetry {asym:e})")));
    }
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let g = grid.len();
    let m = DMatrix::from_fn(g, g, |a, b| 0.5 * (vals[(a, b)] + vals[(b, a)]) * sqrt_w[a] * sqrt_w[b]);
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].abs().max(1.0);

    let mut eigenvalues = Vec::with_capacity(g);
    for &i in &order {
        let lam = eig.eigenvalues[i];
        if lam < 0.0 {
            if lam < -NEG_EIGEN_TOL * top {
                return Err(Error::Data(format!("kernel has negative eigenvalue {lam:e}")));
            }
            eigenvalues.push(0.0);
        } else {
            eigenvalues.push(lam);
        }
    }

    let eigenfunctions = order
        .iter()
        .take(max_components.min(g))
        .map(|&i| {
            let v = eig.eigenvectors.column(i);
            let mut values: Vec<f64> = v.iter().zip(&sqrt_w).map(|(x, s)| x / s).collect();
            orient(&mut values);
            Curve::new(grid.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Spectrum {
        eigenvalues,
        eigenfunctions,
    })
}

/// Flips the sign so the coordinate of largest magnitude is positive.
fn orient(values: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate() {
        if v.abs() > values[best].abs() {
            best = i;
        }
    }
    if values[best] < 0.0 {
        values.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Smallest `d` whose leading eigenvalues explain at least `threshold` of the total.
pub fn select_dim(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold {threshold} outside (0, 1)")));
    }
    if eigenvalues.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::Data("eigenvalues must be finite and nonnegative".into()));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::Data("spectrum is identically zero".into()));
    }
    let mut cum = 0.0;
    for (i, l) in eigenvalues.iter().enumerate() {
        cum += l;
        // ties count as reaching the threshold
        if cum / total >= threshold - 1e-12 {
            return Ok(i + 1);
        }
    }
    Ok(eigenvalues.len())
}

/// Eigen-decomposition of the lag-0 sample covariance of series `j`.
pub fn fpca(panel: &FunctionalPanel, j: usize, max_components: usize) -> Result<Spectrum> {
    if panel.n() < 2 {
        return Err(Error::Domain("fpca needs at least two curves".into()));
    }
    if j >= panel.p() {
        return Err(Error::Domain(format!("series {j} outside 0..{}", panel.p())));
    }
    let w = panel.series_matrix(j);
    let cov = lagged_cross(&w, &w, 0);
    let k = Kernel::new(panel.grid().clone(), panel.grid().clone(), (&cov + cov.transpose()) * 0.5)?;
    eigen_decompose(&k, max_components)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// Number of autocovariance lags pooled into `K̂` (L).
    pub lag_budget: usize,
    /// Cumulative eigenvalue share used to pick the truncation.
    pub threshold: f64,
    /// Hard cap on the truncation.
    pub d_max: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            lag_budget: 3,
            threshold: 0.9,
            d_max: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Eigenfunctions of the lag-pooled autocovariance operator.
    Autocov { lag_budget: usize },
    /// Classical FPCA (lag-0 covariance).
    Covariance,
}

/// Estimated eigenpairs and truncation for one series.
#[derive(Debug, Clone)]
pub struct AutocovBasis {
    pub series: usize,
    pub kind: BasisKind,
    /// Full spectrum, descending.
    pub eigenvalues: Vec<f64>,
    /// The `d` retained eigenfunctions.
    pub eigenfunctions: Vec<Curve>,
    pub d: usize,
}

impl AutocovBasis {
    /// Autocovariance basis for series `j` with data-driven truncation.
    pub fn estimate(panel: &FunctionalPanel, j: usize, cfg: &BasisConfig) -> Result<AutocovBasis> {
        let k = compute_k(panel, j, cfg.lag_budget)?;
        let cap = cfg.d_max.min(panel.n() - cfg.lag_budget).min(panel.grid().len()).max(1);
        let spec = eigen_decompose(&k, cap)?;
        let d = select_dim(&spec.eigenvalues, cfg.threshold)?.min(cap);
        Ok(AutocovBasis::from_spectrum(j, BasisKind::Autocov { lag_budget: cfg.lag_budget }, spec, d))
    }

    /// FPCA basis for series `j`, truncated by the same cumulative rule.
    pub fn estimate_fpca(panel: &FunctionalPanel, j: usize, cfg: &BasisConfig) -> Result<AutocovBasis> {
        let cap = cfg.d_max.min(panel.n()).min(panel.grid().len()).max(1);
        let spec = fpca(panel, j, cap)?;
        let d = select_dim(&spec.eigenvalues, cfg.threshold)?.min(cap);
        Ok(AutocovBasis::from_spectrum(j, BasisKind::Covariance, spec, d))
    }

    fn from_spectrum(series: usize, kind: BasisKind, spec: Spectrum, d: usize) -> AutocovBasis {
        let mut eigenfunctions = spec.eigenfunctions;
        eigenfunctions.truncate(d);
        AutocovBasis {
            series,
            kind,
            eigenvalues: spec.eigenvalues,
            eigenfunctions,
            d,
        }
    }

    /// Basis from explicit orthonormal curves (used when reloading fits).
    pub fn from_parts(series: usize, kind: BasisKind, eigenvalues: Vec<f64>, eigenfunctions: Vec<Curve>) -> Result<AutocovBasis> {
        if let Some(first) = eigenfunctions.first() {
            if eigenfunctions.iter().any(|c| c.grid() != first.grid()) {
                return Err(Error::Structural("eigenfunctions live on different grids".into()));
            }
        }
        Ok(AutocovBasis {
            series,
            kind,
            d: eigenfunctions.len(),
            eigenvalues,
            eigenfunctions,
        })
    }

    pub fn grid(&self) -> Option<&Arc<Grid>> {
        self.eigenfunctions.first().map(|c| c.grid())
    }

    /// `G × d` matrix whose columns are the retained eigenfunctions.
    pub fn matrix(&self, g: usize) -> DMatrix<f64> {
        DMatrix::from_fn(g, self.d, |k, l| self.eigenfunctions[l].values()[k])
    }
}

/// Estimates one basis per series (in parallel over series).
pub fn estimate_bases(panel: &FunctionalPanel, cfg: &BasisConfig, kind: BasisKindChoice) -> Result<Vec<AutocovBasis>> {
    (0..panel.p())
        .into_par_iter()
        .map(|j| match kind {
            BasisKindChoice::Autocov => AutocovBasis::estimate(panel, j, cfg),
            BasisKindChoice::Covariance => AutocovBasis::estimate_fpca(panel, j, cfg),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKindChoice {
    Autocov,
    Covariance,
}

/// Basis coefficients `η̂_tjl = ⟨W_tj, ψ̂_jl⟩`, blocked by series.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePanel {
    scores: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl ScorePanel {
    pub fn new(scores: DMatrix<f64>, dims: &[usize]) -> Result<ScorePanel> {
        let offsets = offsets_from_dims(dims);
        if *offsets.last().unwrap() != scores.ncols() {
            return Err(Error::Structural(format!(
                "score matrix has {} columns, block dims sum to {}",
                scores.ncols(),
                offsets.last().unwrap()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("scores contain non-finite values".into()));
        }
        Ok(ScorePanel { scores, offsets })
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn p(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.p()).map(|j| self.dim(j)).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// `n × d_j` block of series `j`.
    pub fn series(&self, j: usize) -> DMatrix<f64> {
        self.scores.columns(self.offsets[j], self.dim(j)).into_owned()
    }

    pub fn get(&self, t: usize, j: usize, l: usize) -> f64 {
        self.scores[(t, self.offsets[j] + l)]
    }

    pub fn slice_time(&self, range: std::ops::Range<usize>) -> ScorePanel {
        ScorePanel {
            scores: self.scores.rows(range.start, range.end - range.start).into_owned(),
            offsets: self.offsets.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "j", "l", "score"])?;
        for t in 0..self.n() {
            for j in 0..self.p() {
                for l in 0..self.dim(j) {
                    w.write_record(&[t.to_string(), j.to_string(), l.to_string(), self.get(t, j, l).to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn offsets_from_dims(dims: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(dims.len() + 1);
    offsets.push(0);
    for d in dims {
        offsets.push(offsets.last().unwrap() + d);
    }
    offsets
}

/// Projects every series of `panel` on its basis.
pub fn project_scores(panel: &FunctionalPanel, bases: &[AutocovBasis]) -> Result<ScorePanel> {
    if bases.len() != panel.p() {
        return Err(Error::Structural(format!(
            "{} bases supplied for {} series",
            bases.len(),
            panel.p()
        )));
    }
    let grid = panel.grid();
    let g = grid.len();
    let dims: Vec<usize> = bases.iter().map(|b| b.d).collect();
    let offsets = offsets_from_dims(&dims);
    let mut scores = DMatrix::zeros(panel.n(), *offsets.last().unwrap());
    for (j, basis) in bases.iter().enumerate() {
        if let Some(bg) = basis.grid() {
            check_grid(bg, grid, "project_scores")?;
        }
        if basis.d == 0 {
            continue;
        }
        let mut weighted = basis.matrix(g);
        for (k, &w) in grid.weights().iter().enumerate() {
            weighted.row_mut(k).scale_mut(w);
        }
        let block = panel.series_matrix(j) * weighted;
        scores.columns_mut(offsets[j], basis.d).copy_from(&block);
    }
    ScorePanel::new(scores, &dims)
}

/// Projects a single panel series on one basis: `n × d` scores.
pub fn project_series(panel: &FunctionalPanel, j: usize, basis: &AutocovBasis) -> Result<DMatrix<f64>> {
    if let Some(bg) = basis.grid() {
        check_grid(bg, panel.grid(), "project_series")?;
    }
    let g = panel.grid().len();
    let mut weighted = basis.matrix(g);
    for (k, &w) in panel.grid().weights().iter().enumerate() {
        weighted.row_mut(k).scale_mut(w);
    }
    Ok(panel.series_matrix(j) * weighted)
}

/// Writes `j,l,lambda` rows for the retained eigenvalues of each basis.
pub fn write_eigenvalues_csv<W: Write>(bases: &[AutocovBasis], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "l", "lambda"])?;
    for b in bases {
        for l in 0..b.d {
            w.write_record(&[b.series.to_string(), l.to_string(), b.eigenvalues[l].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes eigenfunctions as columns `u, psi_<j>_<l>, ...` over the grid.
pub fn write_eigenfunctions_csv<W: Write>(bases: &[AutocovBasis], grid: &Grid, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["u".to_string()];
    for b in bases {
        for l in 0..b.d {
            header.push(format!("psi_{}_{}", b.series, l));
        }
    }
    w.write_record(&header)?;
    for (k, u) in grid.points().iter().enumerate() {
        let mut row = vec![u.to_string()];
        for b in bases {
            for f in &b.eigenfunctions {
                row.push(f.values()[k].to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
