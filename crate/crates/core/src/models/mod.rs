//! Moment assembly, fitting, recovery and prediction for the three model
//! applications: scalar-on-function regression ([`sflr`]), function-on-function
//! regression ([`fflr`]) and vector functional autoregression ([`vfar`]).

pub mod fflr;
pub mod sflr;
pub mod vfar;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autocov::{AutocovBasis, BasisConfig, BasisKind, ScorePanel};
use crate::baseline::FistaConfig;
use crate::error::{Error, Result};
use crate::func::{Curve, Grid};
use crate::rmd::{BlockSolution, MomentSystem, RmdConfig, SolverStats};

pub use fflr::{build_moments_fflr, fit_fflr, FflrFit, FflrProblem};
pub use sflr::{build_moments_sflr, fit_sflr, SflrFit, SflrProblem};
pub use vfar::{build_moments_vfar, fit_vfar, Instruments, VfarConfig, VfarFit, VfarProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelKind {
    Sflr,
    Fflr,
    Vfar,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Sflr, ModelKind::Fflr, ModelKind::Vfar];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sflr => "SFLR",
            ModelKind::Fflr => "FFLR",
            ModelKind::Vfar => "VFAR",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SFLR" => Ok(ModelKind::Sflr),
            "FFLR" => Ok(ModelKind::Fflr),
            "VFAR" => Ok(ModelKind::Vfar),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Estimation route: autocovariance basis + block RMD, or FPCA + group lasso.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Auto,
    Cov,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Auto => "AUTO",
            Method::Cov => "COV",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AUTO" => Ok(Method::Auto),
            "COV" => Ok(Method::Cov),
            _ => Err(Error::Config(format!("unknown method {s:?} (expected auto or cov)"))),
        }
    }
}

/// Step-1 and Step-2 settings shared by the model fits.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub basis: BasisConfig,
    pub rmd: RmdConfig,
    /// Solver settings for the covariance-based comparator.
    pub fista: FistaConfig,
    /// FFLR only: reduce the response with the lag-pooled basis instead of FPCA.
    pub response_autocov: bool,
}

/// Instrumented regression moments shared by SFLR and FFLR.
///
/// Block row `i = (h−1)p + k`: `ĝ_i(0) = (n−h)⁻¹ Σ_t η̂_{(t+h)k} y_tᵀ` and
/// `Ĝ_{ij} = −(n−h)⁻¹ Σ_t η̂_{(t+h)k} η̂_tjᵀ`, with `t` over `0..n−h`.
pub(crate) fn regression_moments(scores: &ScorePanel, response: &DMatrix<f64>, lags: usize) -> Result<MomentSystem> {
    let n = scores.n();
    if response.nrows() != n {
        return Err(Error::Structural(format!(
            "response has {} rows, scores have {n}",
            response.nrows()
        )));
    }
    if lags == 0 || n <= lags {
        return Err(Error::Domain(format!("need 1 <= L < n, got L = {lags}, n = {n}")));
    }
    let s = scores.matrix();
    let dsum = s.ncols();
    let dt = response.ncols();
    let mut g = DMatrix::zeros(lags * dsum, dsum);
    let mut g0 = DMatrix::zeros(lags * dsum, dt);
    for h in 1..=lags {
        let m = n - h;
        let inst = s.rows(h, m);
        let scale = 1.0 / m as f64;
        let mut gb = g.rows_mut((h - 1) * dsum, dsum);
        gb.gemm_tr(-scale, &inst, &s.rows(0, m), 0.0);
        let mut g0b = g0.rows_mut((h - 1) * dsum, dsum);
        g0b.gemm_tr(scale, &inst, &response.rows(0, m), 0.0);
    }
    let dims = scores.dims();
    let row_dims: Vec<usize> = (0..lags).flat_map(|_| dims.iter().copied()).collect();
    MomentSystem::new(g, g0, &row_dims, &dims)
}

/// Log-spaced grid of `count` levels from `top` down to `ratio · top`.
pub fn log_grid(top: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![top];
    }
    let (a, b) = (top.ln(), (top * ratio).ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Block `j` rows of a coefficient matrix with the given offsets.
pub(crate) fn coef_block(theta: &DMatrix<f64>, offsets: &[usize], j: usize) -> DMatrix<f64> {
    theta.rows(offsets[j], offsets[j + 1] - offsets[j]).into_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GridSpec {
    pub fn from_grid(g: &Grid) -> GridSpec {
        GridSpec {
            points: g.points().to_vec(),
            weights: g.weights().to_vec(),
        }
    }

    pub fn to_grid(&self) -> Result<Arc<Grid>> {
        Grid::with_weights(self.points.clone(), self.weights.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub series: usize,
    pub kind: BasisKind,
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
}

impl BasisSpec {
    pub fn from_basis(b: &AutocovBasis) -> BasisSpec {
        BasisSpec {
            series: b.series,
            kind: b.kind,
            eigenvalues: b.eigenvalues.clone(),
            eigenfunctions: b.eigenfunctions.iter().map(|c| c.values().to_vec()).collect(),
        }
    }

    pub fn to_basis(&self, grid: &Arc<Grid>) -> Result<AutocovBasis> {
        let curves = self
            .eigenfunctions
            .iter()
            .map(|v| Curve::new(grid.clone(), v.clone()))
            .collect::<Result<Vec<_>>>()?;
        AutocovBasis::from_parts(self.series, self.kind, self.eigenvalues.clone(), curves)
    }
}

/// Serializable form of a [`BlockSolution`] (dual variables omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSpec {
    pub gamma: f64,
    pub objective: f64,
    pub support: Vec<usize>,
    pub block_norms: Vec<f64>,
    pub stats: SolverStats,
    pub col_dims: Vec<usize>,
    /// Row-major entries of θ̂.
    pub theta: Vec<Vec<f64>>,
}

impl SolutionSpec {
    pub fn from_solution(s: &BlockSolution) -> SolutionSpec {
        SolutionSpec {
            gamma: s.gamma,
            objective: s.stats.objective,
            support: s.support.clone(),
            block_norms: s.block_norms.clone(),
            stats: s.stats,
            col_dims: s.col_offsets.windows(2).map(|w| w[1] - w[0]).collect(),
            theta: s.theta.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn to_solution(&self) -> Result<BlockSolution> {
        let offsets = crate::autocov::offsets_from_dims(&self.col_dims);
        let rows = *offsets.last().unwrap();
        if self.theta.len() != rows {
            return Err(Error::Structural(format!(
                "stored theta has {} rows, block widths sum to {rows}",
                self.theta.len()
            )));
        }
        let dt = self.theta.first().map_or(0, |r| r.len());
        if self.theta.iter().any(|r| r.len() != dt) {
            return Err(Error::Structural("ragged theta rows".into()));
        }
        let theta = DMatrix::from_fn(rows, dt, |i, j| self.theta[i][j]);
        Ok(BlockSolution {
            dual: DMatrix::zeros(0, 0),
            dual_theta: DMatrix::zeros(0, 0),
            theta,
            col_offsets: offsets,
            gamma: self.gamma,
            block_norms: self.block_norms.clone(),
            support: self.support.clone(),
            stats: self.stats,
        })
    }
}

/// JSON manifest of a fitted model; enough to reload it for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub model: ModelKind,
    pub method: Method,
    pub lags: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruments: Option<Instruments>,
    pub grid: GridSpec,
    pub bases: Vec<BasisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_basis: Option<BasisSpec>,
    /// One solution for SFLR/FFLR, one per target row for VFAR.
    pub solutions: Vec<SolutionSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub row_failures: Vec<RowFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub row: usize,
    pub error: String,
}

/// Any fitted model.
#[derive(Debug, Clone)]
pub enum Fit {
    Sflr(SflrFit),
    Fflr(FflrFit),
    Vfar(VfarFit),
}

impl Fit {
    pub fn manifest(&self) -> FitManifest {
        match self {
            Fit::Sflr(f) => f.manifest(),
            Fit::Fflr(f) => f.manifest(),
            Fit::Vfar(f) => f.manifest(),
        }
    }

    pub fn from_manifest(m: &FitManifest) -> Result<Fit> {
        match m.model {
            ModelKind::Sflr => SflrFit::from_manifest(m).map(Fit::Sflr),
            ModelKind::Fflr => FflrFit::from_manifest(m).map(Fit::Fflr),
            ModelKind::Vfar => VfarFit::from_manifest(m).map(Fit::Vfar),
        }
    }
}

pub(crate) fn bases_from_specs(specs: &[BasisSpec], grid: &Arc<Grid>) -> Result<Vec<AutocovBasis>> {
    specs.iter().map(|b| b.to_basis(grid)).collect()
}

pub(crate) fn check_kind(m: &FitManifest, kind: ModelKind) -> Result<()> {
    if m.model != kind {
        return Err(Error::Parse(format!("manifest holds a {} fit, not {}", m.model.name(), kind.name())));
    }
    Ok(())
}

/// Validates the default RMD/basis settings once at fit entry.
pub(crate) fn validate_fit_config(cfg: &FitConfig) -> Result<()> {
    cfg.rmd.validate()?;
    cfg.fista.validate()?;
    let b = &cfg.basis;
    if b.lag_budget == 0 {
        return Err(Error::Config("lag_budget must be at least 1".into()));
    }
    if !(b.threshold > 0.0 && b.threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", b.threshold)));
    }
    if b.d_max == 0 {
        return Err(Error::Config("d_max must be at least 1".into()));
    }
    Ok(())
}
