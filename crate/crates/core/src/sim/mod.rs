//! Data-generating processes for the simulation design, ground truth,
//! error metrics, validation tuning and the benchmark runner.
//!
//! Scores of every series live in a 25-function Fourier basis and follow a
//! block-sparse VAR(1). Randomness comes from ChaCha20 streams: one master
//! seed, with a distinct stream per (model, n, p, replicate).

pub mod benchmark;
pub mod metrics;
pub mod tune;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{Curve, FunctionalPanel, Grid, LowRankKernel};
use crate::models::ModelKind;

pub use benchmark::{run_benchmark, BenchmarkConfig, BenchmarkRecord, BenchmarkReport, SummaryRow};
pub use metrics::{f1_support, kernel_relative_error, relative_error, sflr_relative_error};
pub use tune::{tune, Selection, Tuned};

/// Number of Fourier functions generating each series.
pub const BASIS_SIZE: usize = 25;
/// Contamination variances on the first five basis functions.
pub const NOISE_VARIANCES: [f64; 5] = [1.0, 0.8, 0.3, 1.5, 1.6];
/// Diagonal of every `Ω_jj`.
pub const OMEGA_DIAG_HEAD: [f64; 5] = [0.60, 0.59, 0.58, 0.3, 0.2];
/// VAR steps discarded before the first observation.
pub const BURN_IN: usize = 200;
/// Series carrying nonzero regression coefficients.
pub const REGRESSION_SUPPORT: [usize; 5] = [0, 1, 2, 3, 4];

/// ChaCha20 generator for `(master, stream)`.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// `ψ_1 = 1`, `ψ_{2l} = √2 cos(2πlu)`, `ψ_{2l+1} = √2 sin(2πlu)` for `l ≤ 12`,
/// as a `G × 25` matrix.
pub fn fourier_basis(grid: &Grid) -> DMatrix<f64> {
    let s2 = std::f64::consts::SQRT_2;
    let tau = 2.0 * std::f64::consts::PI;
    DMatrix::from_fn(grid.len(), BASIS_SIZE, |k, c| {
        let u = grid.points()[k];
        match c {
            0 => 1.0,
            _ => {
                let l = c.div_ceil(2) as f64;
                if c % 2 == 1 {
                    s2 * (tau * l * u).cos()
                } else {
                    s2 * (tau * l * u).sin()
                }
            }
        }
    })
}

/// Innovation variances: `0.7 − 0.1l` for `l ≤ 5`, `l⁻²` beyond (1-based `l`).
pub fn innovation_variances() -> [f64; BASIS_SIZE] {
    let mut v = [0.0; BASIS_SIZE];
    for (i, x) in v.iter_mut().enumerate() {
        let l = (i + 1) as f64;
        *x = if i < 5 { 0.7 - 0.1 * l } else { l.powi(-2) };
    }
    v
}

/// Diagonal of `Ω_jj`: `(0.60, 0.59, 0.58, 0.3, 0.2, 6⁻², …, 25⁻²)`.
pub fn omega_diagonal() -> [f64; BASIS_SIZE] {
    let mut v = [0.0; BASIS_SIZE];
    for (i, x) in v.iter_mut().enumerate() {
        *x = if i < 5 { OMEGA_DIAG_HEAD[i] } else { ((i + 1) as f64).powi(-2) };
    }
    v
}

/// Block-sparse transition `Ω = C ⊗ D` with `D = diag(omega_diagonal())`:
/// `C_jj = 1`, one off-diagonal entry 0.4 and two entries 0.1 per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Block scale matrix `C` (`p × p`).
    pub scales: Vec<Vec<f64>>,
}

impl Transition {
    pub fn p(&self) -> usize {
        self.scales.len()
    }

    pub fn scale_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |j, k| self.scales[j][k])
    }

    /// Nonzero `(k, scale)` pairs of block row `j`.
    pub fn row(&self, j: usize) -> Vec<(usize, f64)> {
        self.scales[j]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(k, &c)| (k, c))
            .collect()
    }

    /// `Ω_jk` (25 × 25, diagonal).
    pub fn block(&self, j: usize, k: usize) -> DMatrix<f64> {
        let d = omega_diagonal();
        DMatrix::from_fn(BASIS_SIZE, BASIS_SIZE, |a, b| if a == b { self.scales[j][k] * d[a] } else { 0.0 })
    }

    /// Dense `25p × 25p` matrix (series-major blocks).
    pub fn dense(&self) -> DMatrix<f64> {
        let p = self.p();
        let d = omega_diagonal();
        let mut out = DMatrix::zeros(BASIS_SIZE * p, BASIS_SIZE * p);
        for j in 0..p {
            for (k, c) in self.row(j) {
                for l in 0..BASIS_SIZE {
                    out[(j * BASIS_SIZE + l, k * BASIS_SIZE + l)] = c * d[l];
                }
            }
        }
        out
    }

    /// Spectral radius: `ρ(C) · max_l D_ll`, with `ρ(C)` from the real Schur form.
    pub fn spectral_radius(&self) -> f64 {
        radius(&self.scale_matrix()) * omega_diagonal().iter().cloned().fold(0.0, f64::max)
    }

    /// True VAR kernel `A_jk(u,v) = ψ(u)ᵀ Ω_jkᵀ ψ(v)` on `grid`.
    pub fn kernel(&self, j: usize, k: usize, grid: &Arc<Grid>, psi: &DMatrix<f64>) -> LowRankKernel {
        LowRankKernel::new(grid.clone(), grid.clone(), psi.clone(), self.block(j, k).transpose(), psi.clone())
            .expect("basis shapes are fixed")
    }
}

/// Spectral radius of a square matrix. Nonnegative matrices with equal row
/// sums are resolved exactly by the Collatz–Wielandt bounds; otherwise the
/// Gelfand limit `‖Cᵏ‖^{1/k}` is taken with `k = 2⁴⁰` by normalized squaring.
fn radius(c: &DMatrix<f64>) -> f64 {
    let sums: Vec<f64> = c.row_iter().map(|r| r.sum()).collect();
    let lo = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sums.iter().cloned().fold(0.0, f64::max);
    if c.iter().all(|&v| v >= 0.0) && hi - lo <= 1e-12 * hi.max(1.0) {
        return hi;
    }
    let mut m = c.clone();
    let mut log = 0.0;
    let mut k = 1.0;
    for _ in 0..40 {
        let s = m.norm();
        if s == 0.0 {
            return 0.0;
        }
        m /= s;
        log += s.ln() / k;
        m = &m * &m;
        k *= 2.0;
    }
    (log + m.norm().ln() / k).exp()
}

/// Draws the block pattern; off-diagonal positions are uniform without
/// replacement within each row.
pub fn gen_vfar_transition<R: Rng>(p: usize, rng: &mut R) -> Result<Transition> {
    if p < 4 {
        return Err(Error::Config(format!("the transition design needs p >= 4, got {p}")));
    }
    let mut scales = vec![vec![0.0; p]; p];
    for (j, row) in scales.iter_mut().enumerate() {
        row[j] = 1.0;
        let picks = sample(rng, p - 1, 3).into_vec();
        for (r, &idx) in picks.iter().enumerate() {
            let k = if idx >= j { idx + 1 } else { idx };
            row[k] = if r == 0 { 0.4 } else { 0.1 };
        }
    }
    let t = Transition { scales };
    let rho = t.spectral_radius();
    if !(rho < 1.0) {
        return Err(Error::Config(format!("generated transition is not stable (spectral radius {rho})")));
    }
    Ok(t)
}

/// `n × 25p` scores from `η_t = Ω η_{t−1} + ε_t`, started at zero and
/// burned in for [`BURN_IN`] steps.
pub fn gen_var_scores<R: Rng>(n: usize, omega: &Transition, rng: &mut R) -> Result<DMatrix<f64>> {
    let rho = omega.spectral_radius();
    if !(rho < 1.0) {
        return Err(Error::Config(format!("transition is not stable (spectral radius {rho})")));
    }
    let p = omega.p();
    let dim = BASIS_SIZE * p;
    let sd: Vec<f64> = innovation_variances().iter().map(|v| v.sqrt()).collect();
    let diag = omega_diagonal();
    let rows: Vec<Vec<(usize, f64)>> = (0..p).map(|j| omega.row(j)).collect();
    let mut prev = vec![0.0; dim];
    let mut cur = vec![0.0; dim];
    let mut out = DMatrix::zeros(n, dim);
    for step in 0..BURN_IN + n {
        for j in 0..p {
            for l in 0..BASIS_SIZE {
                let mut acc = 0.0;
                for &(k, c) in &rows[j] {
                    acc += c * prev[k * BASIS_SIZE + l];
                }
                let eps: f64 = rng.sample(StandardNormal);
                cur[j * BASIS_SIZE + l] = diag[l] * acc + sd[l] * eps;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        if step >= BURN_IN {
            let t = step - BURN_IN;
            for (c, v) in prev.iter().enumerate() {
                out[(t, c)] = *v;
            }
        }
    }
    Ok(out)
}

/// Stationary covariance of the scores, assembled from one `p × p` Lyapunov
/// solve per basis index (`Ω` and the innovation covariance are both
/// diagonal in the basis index).
pub fn stationary_covariance(omega: &Transition) -> DMatrix<f64> {
    let p = omega.p();
    let mut out = DMatrix::zeros(BASIS_SIZE * p, BASIS_SIZE * p);
    for (l, m) in per_index_covariances(omega).into_iter().enumerate() {
        for j in 0..p {
            for k in 0..p {
                out[(j * BASIS_SIZE + l, k * BASIS_SIZE + l)] = m[(j, k)];
            }
        }
    }
    out
}

/// `M_l = Σ_k (a_l C)^k v_l (a_l C)^kᵀ` for each basis index `l`, by doubling.
pub fn per_index_covariances(omega: &Transition) -> Vec<DMatrix<f64>> {
    let c = omega.scale_matrix();
    let p = c.nrows();
    let diag = omega_diagonal();
    let var = innovation_variances();
    (0..BASIS_SIZE)
        .map(|l| {
            let mut a = &c * diag[l];
            let mut x = DMatrix::identity(p, p) * var[l];
            for _ in 0..64 {
                x = &x + &a * &x * a.transpose();
                a = &a * &a;
                if a.amax() < 1e-30 {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Population lag-pooled operator eigenvalues for series `j` indexed by
/// basis function: `Σ_{h=1}^{L} (E[η_{(t+h)jl} η_{tjl}])²`. The operator is
/// diagonal in the Fourier basis, so these are its eigenvalues and the
/// `ψ_l` are its eigenfunctions.
pub fn population_k_spectrum(omega: &Transition, j: usize, lag_budget: usize) -> Vec<f64> {
    let c = omega.scale_matrix();
    let diag = omega_diagonal();
    per_index_covariances(omega)
        .into_iter()
        .enumerate()
        .map(|(l, m)| {
            let a = &c * diag[l];
            let mut g = m;
            let mut total = 0.0;
            for _ in 0..lag_budget {
                g = &a * g;
                total += g[(j, j)] * g[(j, j)];
            }
            total
        })
        .collect()
}

/// Uniform on `[−1, −0.5] ∪ [0.5, 1]`.
fn split_uniform<R: Rng>(rng: &mut R) -> f64 {
    let mag = rng.random_range(0.5..=1.0);
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

fn alternating(l: usize) -> f64 {
    // l is 1-based
    if l % 2 == 0 {
        (l as f64).powi(-2)
    } else {
        -(l as f64).powi(-2)
    }
}

/// SFLR coefficients `b_j` (length 25) for `j ∈ S`, zero elsewhere.
pub fn gen_sflr_coefficients<R: Rng>(p: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..p)
        .map(|j| {
            if !REGRESSION_SUPPORT.contains(&j) {
                return vec![0.0; BASIS_SIZE];
            }
            (1..=BASIS_SIZE)
                .map(|l| if l <= 3 { split_uniform(rng) } else { alternating(l) })
                .collect()
        })
        .collect()
}

/// FFLR coefficient matrices `B_j` (25 × 25, entry `(l, m)` multiplies
/// `ψ_l(u) ψ_m(v)`) for `j ∈ S`, zero elsewhere.
pub fn gen_fflr_coefficients<R: Rng>(p: usize, rng: &mut R) -> Vec<DMatrix<f64>> {
    (0..p)
        .map(|j| {
            if !REGRESSION_SUPPORT.contains(&j) {
                return DMatrix::zeros(BASIS_SIZE, BASIS_SIZE);
            }
            let mut b = DMatrix::zeros(BASIS_SIZE, BASIS_SIZE);
            for l in 1..=BASIS_SIZE {
                for m in 1..=BASIS_SIZE {
                    b[(l - 1, m - 1)] = if l <= 3 && m <= 3 {
                        split_uniform(rng)
                    } else {
                        let s = (l + m) as f64;
                        if (l + m) % 2 == 0 {
                            s.powi(-2)
                        } else {
                            -s.powi(-2)
                        }
                    };
                }
            }
            b
        })
        .collect()
}

/// `Y_t = Σ_j η_tjᵀ b_j + ε_t`; `noise_sd = 0` disables `ε`.
pub fn gen_sflr<R: Rng>(scores: &DMatrix<f64>, coefs: &[Vec<f64>], noise_sd: f64, rng: &mut R) -> Vec<f64> {
    let n = scores.nrows();
    (0..n)
        .map(|t| {
            let mut y = 0.0;
            for (j, b) in coefs.iter().enumerate() {
                if b.iter().any(|&v| v != 0.0) {
                    for l in 0..BASIS_SIZE {
                        y += scores[(t, j * BASIS_SIZE + l)] * b[l];
                    }
                }
            }
            if noise_sd > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                y += noise_sd * e;
            }
            y
        })
        .collect()
}

/// Response scores `ζ_tm = Σ_j Σ_l η_tjl B_j[l, m] + g_tm` (g on `m < 5`);
/// returns an `n × 25` matrix.
pub fn gen_fflr_scores<R: Rng>(scores: &DMatrix<f64>, coefs: &[DMatrix<f64>], noise: bool, rng: &mut R) -> DMatrix<f64> {
    let n = scores.nrows();
    let mut z = DMatrix::zeros(n, BASIS_SIZE);
    for (j, b) in coefs.iter().enumerate() {
        if b.iter().any(|&v| v != 0.0) {
            z += scores.columns(j * BASIS_SIZE, BASIS_SIZE) * b;
        }
    }
    if noise {
        for t in 0..n {
            for m in 0..5 {
                let g: f64 = rng.sample(StandardNormal);
                z[(t, m)] += g;
            }
        }
    }
    z
}

/// Hidden panel `X`, contamination `e` and observed `W = X + e`.
///
/// `e` is stored as the floating-point difference `W − X`, so the identity
/// holds bit for bit.
pub fn gen_panel<R: Rng>(
    scores: &DMatrix<f64>,
    grid: &Arc<Grid>,
    noise: bool,
    rng: &mut R,
) -> Result<(FunctionalPanel, FunctionalPanel, FunctionalPanel)> {
    let n = scores.nrows();
    if scores.ncols() % BASIS_SIZE != 0 {
        return Err(Error::Structural(format!("{} score columns is not a multiple of 25", scores.ncols())));
    }
    let p = scores.ncols() / BASIS_SIZE;
    let psi = fourier_basis(grid);
    let psi_t = psi.transpose();
    let g = grid.len();
    let sds: Vec<f64> = NOISE_VARIANCES.iter().map(|v| v.sqrt()).collect();
    let mut xs = Vec::with_capacity(p);
    let mut ws = Vec::with_capacity(p);
    let mut es = Vec::with_capacity(p);
    for j in 0..p {
        let x = scores.columns(j * BASIS_SIZE, BASIS_SIZE) * &psi_t;
        let mut w = x.clone();
        if noise {
            let z = DMatrix::from_fn(n, 5, |_, l| sds[l] * rng.sample::<f64, _>(StandardNormal));
            let e_raw = z * psi.columns(0, 5).transpose();
            w += e_raw;
        }
        let e = &w - &x;
        debug_assert_eq!(e.ncols(), g);
        xs.push(x);
        ws.push(w);
        es.push(e);
    }
    Ok((
        FunctionalPanel::from_series(grid.clone(), &ws)?,
        FunctionalPanel::from_series(grid.clone(), &xs)?,
        FunctionalPanel::from_series(grid.clone(), &es)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelKind,
    /// Observations per sample; training and validation each get `n`.
    pub n: usize,
    pub p: usize,
    pub grid_points: usize,
    /// Contamination `e` on the observed curves.
    pub noise: bool,
    /// Regression errors (`ε_t` for SFLR, `g_tm` for FFLR).
    pub response_noise: bool,
}

impl SimConfig {
    pub fn new(model: ModelKind, n: usize, p: usize) -> SimConfig {
        SimConfig {
            model,
            n,
            p,
            grid_points: 101,
            noise: true,
            response_noise: true,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Response {
    None,
    Scalar(Vec<f64>),
    Curves(FunctionalPanel),
}

impl Response {
    pub fn slice(&self, r: std::ops::Range<usize>) -> Result<Response> {
        Ok(match self {
            Response::None => Response::None,
            Response::Scalar(y) => Response::Scalar(y[r].to_vec()),
            Response::Curves(c) => Response::Curves(c.slice_time(r)?),
        })
    }
}

/// Ground-truth coefficients in the generating basis.
#[derive(Debug, Clone)]
pub enum Truth {
    Sflr(Vec<Vec<f64>>),
    Fflr(Vec<DMatrix<f64>>),
    Vfar(Transition),
}

impl Truth {
    pub fn sflr_curves(&self, grid: &Arc<Grid>) -> Option<Vec<Curve>> {
        let Truth::Sflr(b) = self else { return None };
        let psi = fourier_basis(grid);
        Some(
            b.iter()
                .map(|bj| {
                    let v = &psi * nalgebra::DVector::from_column_slice(bj);
                    Curve::new(grid.clone(), v.as_slice().to_vec()).expect("finite")
                })
                .collect(),
        )
    }

    pub fn fflr_kernels(&self, grid: &Arc<Grid>) -> Option<Vec<LowRankKernel>> {
        let Truth::Fflr(b) = self else { return None };
        let psi = fourier_basis(grid);
        Some(
            b.iter()
                .map(|bj| LowRankKernel::new(grid.clone(), grid.clone(), psi.clone(), bj.clone(), psi.clone()).expect("shapes"))
                .collect(),
        )
    }
}

/// One simulated trajectory of length `2n` (training then validation).
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub config: SimConfig,
    pub grid: Arc<Grid>,
    pub transition: Transition,
    /// True scores, `2n × 25p`.
    pub scores: DMatrix<f64>,
    pub w: FunctionalPanel,
    pub x: FunctionalPanel,
    pub e: FunctionalPanel,
    pub response: Response,
    pub truth: Truth,
}

/// A contiguous sample of observed curves and responses.
#[derive(Debug, Clone)]
pub struct Sample {
    pub w: FunctionalPanel,
    /// Signal curves, when known.
    pub x: Option<FunctionalPanel>,
    pub response: Response,
}

impl Sample {
    /// Observed curves and responses only.
    pub fn observed(w: FunctionalPanel, response: Response) -> Sample {
        Sample { w, x: None, response }
    }
}

impl SimOutput {
    pub fn sample(&self, r: std::ops::Range<usize>) -> Result<Sample> {
        Ok(Sample {
            w: self.w.slice_time(r.clone())?,
            x: Some(self.x.slice_time(r.clone())?),
            response: self.response.slice(r)?,
        })
    }

    pub fn train(&self) -> Result<Sample> {
        self.sample(0..self.config.n)
    }

    pub fn valid(&self) -> Result<Sample> {
        self.sample(self.config.n..2 * self.config.n)
    }
}

/// Generates a full replicate for `cfg`.
pub fn simulate<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<SimOutput> {
    if cfg.n < 2 || cfg.grid_points < 2 {
        return Err(Error::Config(format!("need n >= 2 and grid_points >= 2, got {cfg:?}")));
    }
    if cfg.model != ModelKind::Vfar && cfg.p < REGRESSION_SUPPORT.len() {
        return Err(Error::Config(format!("regression designs need p >= 5, got {}", cfg.p)));
    }
    let grid = Grid::uniform(0.0, 1.0, cfg.grid_points)?;
    let transition = gen_vfar_transition(cfg.p, rng)?;
    let total = 2 * cfg.n;
    let scores = gen_var_scores(total, &transition, rng)?;
    let (w, x, e) = gen_panel(&scores, &grid, cfg.noise, rng)?;
    let (response, truth) = match cfg.model {
        ModelKind::Vfar => (Response::None, Truth::Vfar(transition.clone())),
        ModelKind::Sflr => {
            let b = gen_sflr_coefficients(cfg.p, rng);
            let sd = if cfg.response_noise { 1.0 } else { 0.0 };
            (Response::Scalar(gen_sflr(&scores, &b, sd, rng)), Truth::Sflr(b))
        }
        ModelKind::Fflr => {
            let b = gen_fflr_coefficients(cfg.p, rng);
            let z = gen_fflr_scores(&scores, &b, cfg.response_noise, rng);
            let curves = z * fourier_basis(&grid).transpose();
            (
                Response::Curves(FunctionalPanel::from_series(grid.clone(), &[curves])?),
                Truth::Fflr(b),
            )
        }
    };
    Ok(SimOutput {
        config: *cfg,
        grid,
        transition,
        scores,
        w,
        x,
        e,
        response,
        truth,
    })
}

/// Standard normal draws scaled per coordinate (used by tests and benches).
pub fn normal_matrix<R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> DMatrix<f64> {
    let d = Normal::new(0.0, sd).expect("positive sd");
    DMatrix::from_fn(rows, cols, |_, _| d.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_gram_is_identity() {
        let grid = Grid::uniform(0.0, 1.0, 512).unwrap();
        let psi = fourier_basis(&grid);
        let gram = crate::func::weighted_gram(grid.weights(), &psi, &psi);
        assert!((gram - DMatrix::identity(25, 25)).amax() < 1e-6);
    }

    #[test]
    fn constants() {
        let d = omega_diagonal();
        assert_eq!(&d[..5], &[0.60, 0.59, 0.58, 0.3, 0.2]);
        assert_eq!(d[5], 1.0 / 36.0);
        assert_eq!(d[24], 1.0 / 625.0);
        let v = innovation_variances();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[4] - 0.2).abs() < 1e-15);
        assert_eq!(v[5], 1.0 / 36.0);
        assert_eq!(alternating(4), 1.0 / 16.0);
    }

    #[test]
    fn fflr_tail_coefficient() {
        let b = gen_fflr_coefficients(5, &mut stream_rng(1, 0));
        // l = 1, m = 4 → (−1)^5 / 25
        assert_eq!(b[0][(0, 3)], -1.0 / 25.0);
        assert!(b[0].view((0, 0), (3, 3)).iter().all(|v| (0.5..=1.0).contains(&v.abs())));
    }

    #[test]
    fn transition_pattern_and_stability() {
        for seed in 0..100 {
            let t = gen_vfar_transition(40, &mut stream_rng(seed, 7)).unwrap();
            for j in 0..40 {
                let row = t.row(j);
                assert_eq!(row.len(), 4);
                let mut s: Vec<f64> = row.iter().map(|r| r.1).collect();
                s.sort_by(f64::total_cmp);
                assert_eq!(s, vec![0.1, 0.1, 0.4, 1.0]);
                assert_eq!(t.scales[j][j], 1.0);
            }
            // independent route: ‖Ω^k‖^{1/k} on the scale matrix
            let c = t.scale_matrix();
            let mut pw = c.clone();
            for _ in 0..7 {
                pw = &pw * &pw;
            }
            let gelfand = pw.norm().powf(1.0 / 128.0) * 0.6;
            assert!(gelfand < 1.0, "seed {seed}: {gelfand}");
            assert!((t.spectral_radius() - 0.96).abs() < 1e-9);
        }
    }

    #[test]
    fn radius_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.5, 0.0]);
        assert!((radius(&a) - 1.0).abs() < 1e-9);
        let r = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        assert!((radius(&r) * 0.5 - 0.5).abs() < 1e-9);
        let u = DMatrix::from_row_slice(2, 2, &[0.3, 5.0, 0.0, 0.2]);
        assert!((radius(&u) - 0.3).abs() < 1e-9);
        assert_eq!(radius(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn lyapunov_matches_dense_fixed_point() {
        let t = gen_vfar_transition(4, &mut stream_rng(3, 0)).unwrap();
        let om = t.dense();
        let sig = DMatrix::from_fn(100, 100, |a, b| if a == b { innovation_variances()[a % 25] } else { 0.0 });
        let mut g = sig.clone();
        for _ in 0..2000 {
            g = &om * &g * om.transpose() + &sig;
        }
        let fast = stationary_covariance(&t);
        assert!((&fast - &g).amax() < 1e-9 * g.amax());
    }

    #[test]
    fn iid_scores_have_stated_variance() {
        let t = Transition {
            scales: vec![vec![0.0; 4]; 4],
        };
        let s = gen_var_scores(10_000, &t, &mut stream_rng(11, 1)).unwrap();
        let v = s.column(0).norm_squared() / 10_000.0;
        assert!((v - 0.6).abs() < 0.05, "{v}");
    }

    #[test]
    #[ignore = "Monte-Carlo, n = 10000"]
    fn lag_one_autocovariance_matches_lyapunov() {
        let t = gen_vfar_transition(4, &mut stream_rng(5, 0)).unwrap();
        let n = 10_000;
        let s = gen_var_scores(n, &t, &mut stream_rng(5, 1)).unwrap();
        let m = n - 1;
        let emp = s.rows(1, m).transpose() * s.rows(0, m) / m as f64;
        let pop = t.dense() * stationary_covariance(&t);
        let rel = (&emp - &pop).norm() / pop.norm();
        assert!(rel <= 0.1, "{rel}");
    }

    #[test]
    fn seeded_generation_is_bitwise_reproducible() {
        let cfg = SimConfig::new(ModelKind::Fflr, 20, 6);
        let a = simulate(&cfg, &mut stream_rng(9, 2)).unwrap();
        let b = simulate(&cfg, &mut stream_rng(9, 2)).unwrap();
        assert_eq!(a.w.data(), b.w.data());
        assert_eq!(a.scores, b.scores);
        let c = simulate(&cfg, &mut stream_rng(9, 3)).unwrap();
        assert_ne!(a.w.data(), c.w.data());
    }

    #[test]
    fn contamination_identity_is_exact() {
        let cfg = SimConfig::new(ModelKind::Sflr, 15, 5);
        let out = simulate(&cfg, &mut stream_rng(4, 0)).unwrap();
        for ((w, x), e) in out.w.data().iter().zip(out.x.data()).zip(out.e.data()) {
            assert_eq!(w - x, *e);
        }
        let quiet = simulate(&SimConfig { noise: false, ..cfg }, &mut stream_rng(4, 0)).unwrap();
        assert_eq!(quiet.w.data(), quiet.x.data());
    }

    #[test]
    fn noise_score_variance() {
        let grid = Grid::uniform(0.0, 1.0, 101).unwrap();
        let scores = DMatrix::zeros(10_000, 25);
        let (_, _, e) = gen_panel(&scores, &grid, true, &mut stream_rng(8, 0)).unwrap();
        let psi = fourier_basis(&grid);
        let proj = crate::func::weighted_gram(grid.weights(), &e.series_matrix(0).transpose(), &psi.columns(0, 1).into_owned());
        let v = proj.norm_squared() / 10_000.0;
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn noiseless_sflr_matches_quadrature() {
        let cfg = SimConfig {
            response_noise: false,
            ..SimConfig::new(ModelKind::Sflr, 10, 6)
        };
        let out = simulate(&cfg, &mut stream_rng(2, 0)).unwrap();
        let Response::Scalar(y) = &out.response else { panic!() };
        let betas = out.truth.sflr_curves(&out.grid).unwrap();
        for t in 0..20 {
            let q: f64 = (0..6)
                .map(|j| crate::func::inner_product(&out.x.curve(t, j), &betas[j]).unwrap())
                .sum();
            assert!((q - y[t]).abs() < 1e-6, "{t}: {q} vs {}", y[t]);
        }
    }

    #[test]
    fn noiseless_fflr_matches_double_integral() {
        let cfg = SimConfig {
            response_noise: false,
            grid_points: 61,
            ..SimConfig::new(ModelKind::Fflr, 5, 5)
        };
        let out = simulate(&cfg, &mut stream_rng(6, 0)).unwrap();
        let Response::Curves(yc) = &out.response else { panic!() };
        let kernels: Vec<_> = out.truth.fflr_kernels(&out.grid).unwrap().iter().map(|k| k.to_kernel().transpose()).collect();
        for t in 0..10 {
            let mut acc = vec![0.0; 61];
            for (j, k) in kernels.iter().enumerate() {
                let c = crate::func::kernel_apply(k, &out.x.curve(t, j)).unwrap();
                for (a, v) in acc.iter_mut().zip(c.values()) {
                    *a += v;
                }
            }
            for (a, b) in acc.iter().zip(yc.curve_values(t, 0)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn population_spectrum_matches_lagged_covariances() {
        let t = gen_vfar_transition(4, &mut stream_rng(1, 0)).unwrap();
        let om = t.dense();
        let g0 = stationary_covariance(&t);
        let spec = population_k_spectrum(&t, 2, 3);
        let mut gh = g0.clone();
        let mut want = vec![0.0; 25];
        for _ in 0..3 {
            gh = &om * gh;
            for l in 0..25 {
                want[l] += gh[(50 + l, 50 + l)].powi(2);
            }
        }
        for l in 0..25 {
            assert!((spec[l] - want[l]).abs() < 1e-12 * want[0]);
        }
    }
}
