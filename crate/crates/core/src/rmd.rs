//! Block regularized minimum-distance estimation.
//!
//! Solves
//!
//! ```text
//! min Σ_j ‖θ_j‖_F   subject to   max_i ‖(Ĝθ + ĝ(0))_i‖_F ≤ γ
//! ```
//!
//! by ADMM on the splitting `z = Ĝθ + ĝ(0)`, `w = θ` (see [`solve_warm`]).

use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::autocov::offsets_from_dims;
use crate::error::{Error, Result};
use crate::linalg;

/// Blocked linear moment map `θ ↦ Ĝθ + ĝ(0)`.
///
/// `Ĝ` and the block layout are reference counted so that systems differing
/// only in `ĝ(0)` (the VFAR rows) share them, including the cached operator
/// norm.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    g: Arc<DMatrix<f64>>,
    g0: DMatrix<f64>,
    row_offsets: Arc<Vec<usize>>,
    col_offsets: Arc<Vec<usize>>,
    factor: Arc<OnceLock<Factor>>,
}

/// Cached inverse of `ĜᵀĜ + βI` with `β = ‖Ĝ‖²_F / cols`.
#[derive(Debug)]
struct Factor {
    inv: DMatrix<f64>,
    beta: f64,
    sigma2: f64,
}

impl MomentSystem {
    pub fn new(g: DMatrix<f64>, g0: DMatrix<f64>, row_dims: &[usize], col_dims: &[usize]) -> Result<MomentSystem> {
        let row_offsets = offsets_from_dims(row_dims);
        let col_offsets = offsets_from_dims(col_dims);
        let rows = *row_offsets.last().unwrap();
        let cols = *col_offsets.last().unwrap();
        if g.nrows() != rows || g.ncols() != cols {
            return Err(Error::Structural(format!(
                "G is {}x{}, block layout needs {rows}x{cols}",
                g.nrows(),
                g.ncols()
            )));
        }
        if g0.nrows() != rows {
            return Err(Error::Structural(format!("g(0) has {} rows, expected {rows}", g0.nrows())));
        }
        if g0.ncols() == 0 {
            return Err(Error::Structural("g(0) has no columns".into()));
        }
        if g.iter().chain(g0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("moment system contains non-finite entries".into()));
        }
        Ok(MomentSystem {
            g: Arc::new(g),
            g0,
            row_offsets: Arc::new(row_offsets),
            col_offsets: Arc::new(col_offsets),
            factor: Arc::new(OnceLock::new()),
        })
    }

    /// Same `Ĝ` and layout, different `ĝ(0)`.
    pub fn with_g0(&self, g0: DMatrix<f64>) -> Result<MomentSystem> {
        if g0.nrows() != self.g.nrows() || g0.ncols() == 0 {
            return Err(Error::Structural(format!(
                "g(0) is {}x{}, expected {} rows",
                g0.nrows(),
                g0.ncols(),
                self.g.nrows()
            )));
        }
        if g0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("g(0) contains non-finite entries".into()));
        }
        Ok(MomentSystem {
            g: self.g.clone(),
            g0,
            row_offsets: self.row_offsets.clone(),
            col_offsets: self.col_offsets.clone(),
            factor: self.factor.clone(),
        })
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn g0(&self) -> &DMatrix<f64> {
        &self.g0
    }

    /// Number of block rows (constraints).
    pub fn q(&self) -> usize {
        self.row_offsets.len() - 1
    }

    /// Number of block columns (parameter blocks).
    pub fn p(&self) -> usize {
        self.col_offsets.len() - 1
    }

    pub fn d_tilde(&self) -> usize {
        self.g0.ncols()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_offsets(&self) -> &[usize] {
        &self.col_offsets
    }

    pub fn col_dims(&self) -> Vec<usize> {
        self.col_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn row_dims(&self) -> Vec<usize> {
        self.row_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `max_i ‖ĝ_i(0)‖_F`: the smallest γ for which θ = 0 is feasible.
    pub fn gamma_max(&self) -> f64 {
        block_norms(&self.g0, &self.row_offsets).into_iter().fold(0.0, f64::max)
    }

    /// `‖Ĝ_iθ + ĝ_i(0)‖_F` for every block row.
    pub fn residual_norms(&self, theta: &DMatrix<f64>) -> Result<Vec<f64>> {
        if theta.nrows() != self.g.ncols() || theta.ncols() != self.g0.ncols() {
            return Err(Error::Structural(format!(
                "theta is {}x{}, expected {}x{}",
                theta.nrows(),
                theta.ncols(),
                self.g.ncols(),
                self.g0.ncols()
            )));
        }
        let a = &*self.g * theta + &self.g0;
        Ok(block_norms(&a, &self.row_offsets))
    }

    /// Estimate of `σ_max(Ĝ)²` from 50 power iterations on `ĜᵀĜ`.
    pub fn op_norm_sq(&self) -> f64 {
        self.factor().sigma2
    }

    fn factor(&self) -> &Factor {
        self.factor.get_or_init(|| {
            let g = &*self.g;
            let nc = g.ncols().max(1);
            let fro2 = g.norm_squared();
            let beta = if fro2 > 0.0 { fro2 / nc as f64 } else { 1.0 };
            let mut gram = g.tr_mul(g);
            for i in 0..gram.nrows() {
                gram[(i, i)] += beta;
            }
            let inv = Cholesky::new(gram).expect("GᵀG + βI is positive definite").inverse();
            Factor {
                inv,
                beta,
                sigma2: power_iteration(g, 50),
            }
        })
    }

    /// Writes `Ĝ` as `block_row,block_col,row,col,value` triplets (all entries).
    pub fn write_g_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["block_row", "block_col", "row", "col", "value"])?;
        for bi in 0..self.q() {
            for bj in 0..self.p() {
                for r in 0..self.row_offsets[bi + 1] - self.row_offsets[bi] {
                    for c in 0..self.col_offsets[bj + 1] - self.col_offsets[bj] {
                        let v = self.g[(self.row_offsets[bi] + r, self.col_offsets[bj] + c)];
                        w.write_record(&[bi.to_string(), bj.to_string(), r.to_string(), c.to_string(), v.to_string()])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `ĝ(0)` as `block_row,row,col,value` triplets.
    pub fn write_g0_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["block_row", "row", "col", "value"])?;
        for bi in 0..self.q() {
            for r in 0..self.row_offsets[bi + 1] - self.row_offsets[bi] {
                for c in 0..self.g0.ncols() {
                    let v = self.g0[(self.row_offsets[bi] + r, c)];
                    w.write_record(&[bi.to_string(), r.to_string(), c.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the two triplet files written by [`write_g_csv`](Self::write_g_csv)
    /// and [`write_g0_csv`](Self::write_g0_csv). Block sizes are inferred from
    /// the largest in-block indices.
    pub fn read_csv<R1: Read, R2: Read>(g_csv: R1, g0_csv: R2) -> Result<MomentSystem> {
        let g_rows = read_triplets(g_csv, 5)?;
        let g0_rows = read_triplets(g0_csv, 4)?;
        let mut row_dims: Vec<usize> = Vec::new();
        let mut col_dims: Vec<usize> = Vec::new();
        let mut dt = 0usize;
        let grow = |dims: &mut Vec<usize>, b: usize, r: usize| {
            if dims.len() <= b {
                dims.resize(b + 1, 0);
            }
            dims[b] = dims[b].max(r + 1);
        };
        for rec in &g_rows {
            grow(&mut row_dims, rec.0[0], rec.0[2]);
            grow(&mut col_dims, rec.0[1], rec.0[3]);
        }
        for rec in &g0_rows {
            grow(&mut row_dims, rec.0[0], rec.0[1]);
            dt = dt.max(rec.0[2] + 1);
        }
        let ro = offsets_from_dims(&row_dims);
        let co = offsets_from_dims(&col_dims);
        let mut g = DMatrix::zeros(*ro.last().unwrap(), *co.last().unwrap());
        for (idx, v) in &g_rows {
            g[(ro[idx[0]] + idx[2], co[idx[1]] + idx[3])] = *v;
        }
        let mut g0 = DMatrix::zeros(*ro.last().unwrap(), dt);
        for (idx, v) in &g0_rows {
            g0[(ro[idx[0]] + idx[1], idx[2])] = *v;
        }
        MomentSystem::new(g, g0, &row_dims, &col_dims)
    }
}

fn read_triplets<R: Read>(input: R, width: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != width {
            return Err(Error::Parse(format!("expected {width} fields, got {rec:?}")));
        }
        let idx = (0..width - 1)
            .map(|i| rec[i].trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad index in {rec:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let v = rec[width - 1]
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad value in {rec:?}")))?;
        out.push((idx, v));
    }
    Ok(out)
}

/// Frobenius norm of each row block of `m`.
pub fn block_norms(m: &DMatrix<f64>, offsets: &[usize]) -> Vec<f64> {
    offsets
        .windows(2)
        .map(|w| m.rows(w[0], w[1] - w[0]).norm())
        .collect()
}

fn power_iteration(g: &DMatrix<f64>, iters: usize) -> f64 {
    let c = g.ncols();
    if c == 0 || g.nrows() == 0 {
        return 0.0;
    }
    // deterministic start with no special symmetry
    let mut x = nalgebra::DVector::from_fn(c, |k, _| 1.0 + 0.5 * ((k + 1) as f64).sin());
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = g.tr_mul(&(g * &x));
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        lambda = x.dot(&y);
        x = y / ny;
    }
    lambda.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmdConfig {
    pub feas_tol: f64,
    pub rel_obj_tol: f64,
    pub max_iter: usize,
    /// Blocks with norm below `support_rel_tol · max_j ‖θ̂_j‖_F` are off-support.
    pub support_rel_tol: f64,
    /// Initial ADMM penalty; adapted by residual balancing.
    pub rho: f64,
}

impl Default for RmdConfig {
    fn default() -> Self {
        RmdConfig {
            feas_tol: 1e-6,
            rel_obj_tol: 1e-7,
            max_iter: 20_000,
            support_rel_tol: 1e-4,
            rho: 1.0,
        }
    }
}

impl RmdConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.feas_tol, "feas_tol")?;
        pos(self.rel_obj_tol, "rel_obj_tol")?;
        pos(self.support_rel_tol, "support_rel_tol")?;
        pos(self.rho, "rho")?;
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    /// `max_i ‖Ĝ_iθ̂ + ĝ_i(0)‖_F` at the returned iterate.
    pub max_constraint: f64,
    pub rho: f64,
}

/// Block-sparse solution `θ̂` with its diagnostics.
#[derive(Debug, Clone)]
pub struct BlockSolution {
    pub theta: DMatrix<f64>,
    pub col_offsets: Vec<usize>,
    pub gamma: f64,
    pub block_norms: Vec<f64>,
    pub support: Vec<usize>,
    pub stats: SolverStats,
    /// Multiplier of the moment constraints, used for warm starts.
    pub dual: DMatrix<f64>,
    /// Multiplier of the `w = θ` copy constraint.
    pub dual_theta: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub gamma: f64,
    pub objective: f64,
    pub support: Vec<usize>,
    pub block_norms: Vec<f64>,
    pub stats: SolverStats,
}

impl BlockSolution {
    fn assemble(
        sys: &MomentSystem,
        theta: DMatrix<f64>,
        gamma: f64,
        cfg: &RmdConfig,
        iterations: usize,
        primal: f64,
        dual_res: f64,
        rho: f64,
        dual: DMatrix<f64>,
        dual_theta: DMatrix<f64>,
    ) -> BlockSolution {
        let block_norms = block_norms(&theta, sys.col_offsets());
        let top = block_norms.iter().cloned().fold(0.0, f64::max);
        let support = support_of(&block_norms, cfg.support_rel_tol * top);
        let max_constraint = block_norms_of_residual(sys, &theta);
        BlockSolution {
            col_offsets: sys.col_offsets().to_vec(),
            gamma,
            stats: SolverStats {
                iterations,
                primal_residual: primal,
                dual_residual: dual_res,
                objective: block_norms.iter().sum(),
                max_constraint,
                rho,
            },
            block_norms,
            support,
            theta,
            dual,
            dual_theta,
        }
    }

    /// All-zero solution for a given layout.
    pub fn zero(sys: &MomentSystem, gamma: f64) -> BlockSolution {
        let theta = DMatrix::zeros(sys.g().ncols(), sys.d_tilde());
        BlockSolution {
            block_norms: vec![0.0; sys.p()],
            support: Vec::new(),
            col_offsets: sys.col_offsets().to_vec(),
            gamma,
            stats: SolverStats {
                iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
                objective: 0.0,
                max_constraint: sys.gamma_max(),
                rho: 0.0,
            },
            dual: DMatrix::zeros(sys.g().nrows(), sys.d_tilde()),
            dual_theta: DMatrix::zeros(theta.nrows(), theta.ncols()),
            theta,
        }
    }

    pub fn objective(&self) -> f64 {
        self.stats.objective
    }

    pub fn p(&self) -> usize {
        self.col_offsets.len() - 1
    }

    /// Block `j` of θ̂ (`d_col(j) × d̃`).
    pub fn block(&self, j: usize) -> DMatrix<f64> {
        let (a, b) = (self.col_offsets[j], self.col_offsets[j + 1]);
        self.theta.rows(a, b - a).into_owned()
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            gamma: self.gamma,
            objective: self.stats.objective,
            support: self.support.clone(),
            block_norms: self.block_norms.clone(),
            stats: self.stats,
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }
}

fn support_of(norms: &[f64], cutoff: f64) -> Vec<usize> {
    norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > cutoff && n > 0.0)
        .map(|(j, _)| j)
        .collect()
}

fn block_norms_of_residual(sys: &MomentSystem, theta: &DMatrix<f64>) -> f64 {
    let a = sys.g() * theta + sys.g0();
    block_norms(&a, sys.row_offsets()).into_iter().fold(0.0, f64::max)
}

/// Group soft-threshold applied to every column block, in place.
fn block_shrink(theta: &mut DMatrix<f64>, offsets: &[usize], tau: f64) {
    for w in offsets.windows(2) {
        let mut blk = theta.rows_mut(w[0], w[1] - w[0]);
        let nrm = blk.norm();
        if nrm <= tau {
            blk.fill(0.0);
        } else {
            blk.scale_mut(1.0 - tau / nrm);
        }
    }
}

/// Projects each row block onto the Frobenius ball of radius `gamma`, in place.
fn project_balls(z: &mut DMatrix<f64>, offsets: &[usize], gamma: f64) {
    for w in offsets.windows(2) {
        let mut blk = z.rows_mut(w[0], w[1] - w[0]);
        let nrm = blk.norm();
        if nrm > gamma {
            if gamma == 0.0 {
                blk.fill(0.0);
            } else {
                blk.scale_mut(gamma / nrm);
            }
        }
    }
}

const CHECK_EVERY: usize = 10;
const RELAX: f64 = 1.6;
const OBJ_WINDOW: usize = 50;
const ADAPT_EVERY: usize = 10;
const ADAPT_RATIO: f64 = 5.0;
const INFEAS_MIN_ITER: usize = 500;

/// Solves the block RMD program at level `gamma`.
pub fn solve(sys: &MomentSystem, gamma: f64, cfg: &RmdConfig) -> Result<BlockSolution> {
    solve_warm(sys, gamma, cfg, None)
}

/// As [`solve`], starting from a previous solution on the same layout.
///
/// The splitting is `z = Ĝθ + ĝ(0)`, `w = θ`: the θ-step is a linear solve
/// with the cached factor of `ĜᵀĜ + βI`, the w-step a group soft-threshold
/// and the z-step a projection onto the Frobenius balls.
pub fn solve_warm(sys: &MomentSystem, gamma: f64, cfg: &RmdConfig, warm: Option<&BlockSolution>) -> Result<BlockSolution> {
    cfg.validate()?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be finite and nonnegative, got {gamma}")));
    }
    if gamma >= sys.gamma_max() {
        return Ok(BlockSolution::zero(sys, gamma));
    }
    if gamma == 0.0 {
        check_consistent(sys, cfg)?;
    }

    let g = sys.g();
    let g0 = sys.g0();
    let (nr, nc, dt) = (g.nrows(), g.ncols(), g0.ncols());
    let factor = sys.factor();
    if factor.sigma2 <= 0.0 {
        // Ĝ = 0: the constraint does not depend on θ and θ = 0 is infeasible.
        return Err(Error::Infeasible(format!(
            "G is zero and max block norm of g(0) is {} > gamma = {gamma}",
            sys.gamma_max()
        )));
    }
    let beta = factor.beta;
    let row_off = sys.row_offsets();
    let col_off = sys.col_offsets();

    let mut rho = cfg.rho;
    let mut w = DMatrix::zeros(nc, dt);
    let mut u = DMatrix::zeros(nr, dt);
    let mut v = DMatrix::zeros(nc, dt);
    if let Some(ws) = warm {
        if ws.theta.shape() == (nc, dt) && ws.dual.shape() == (nr, dt) && ws.dual_theta.shape() == (nc, dt) {
            w.copy_from(&ws.theta);
            if ws.stats.rho > 0.0 {
                rho = ws.stats.rho;
                u = &ws.dual / rho;
                v = &ws.dual_theta / rho;
            }
        }
    }
    let mut z = g * &w + g0 + &u;
    project_balls(&mut z, row_off, gamma);

    let eps_pri = cfg.feas_tol * ((nr * dt) as f64).sqrt();
    let eps_dual = cfg.feas_tol * ((nc * dt) as f64).sqrt();

    let mut obj_hist: Vec<f64> = Vec::new();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut primal = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut theta = w.clone();
    let mut a = DMatrix::zeros(nr, dt);
    let mut a_rel = DMatrix::zeros(nr, dt);
    let mut th_rel = DMatrix::zeros(nc, dt);
    let mut rhs = DMatrix::zeros(nc, dt);
    let mut tmp = DMatrix::zeros(nr, dt);
    let mut z_prev = z.clone();
    let mut w_prev = w.clone();
    let mut r_last_check: Option<DMatrix<f64>> = None;

    for k in 1..=cfg.max_iter {
        // θ-step: (ĜᵀĜ + βI)θ = Ĝᵀ(z − ĝ(0) − u) + β(w − v)
        for ((t, &zi), (&gi, &ui)) in tmp.as_mut_slice().iter_mut().zip(z.as_slice()).zip(g0.as_slice().iter().zip(u.as_slice())) {
            *t = zi - gi - ui;
        }
        for ((r, &wi), &vi) in rhs.as_mut_slice().iter_mut().zip(w.as_slice()).zip(v.as_slice()) {
            *r = wi - vi;
        }
        linalg::gemm_tr(&mut rhs, 1.0, g, &tmp, beta);
        linalg::gemm(&mut theta, 1.0, &factor.inv, &rhs, 0.0);
        a.copy_from(g0);
        linalg::gemm(&mut a, 1.0, g, &theta, 1.0);

        let check = k % CHECK_EVERY == 0;
        if check {
            w_prev.copy_from(&w);
            z_prev.copy_from(&z);
        }
        // over-relaxed w- and z-steps
        for (((wi, &ti), &vi), tr) in w
            .as_mut_slice()
            .iter_mut()
            .zip(theta.as_slice())
            .zip(v.as_slice())
            .zip(th_rel.as_mut_slice().iter_mut())
        {
            *tr = RELAX * ti + (1.0 - RELAX) * *wi;
            *wi = *tr + vi;
        }
        block_shrink(&mut w, col_off, 1.0 / (rho * beta));
        for (((zi, &ai), &ui), ar) in z
            .as_mut_slice()
            .iter_mut()
            .zip(a.as_slice())
            .zip(u.as_slice())
            .zip(a_rel.as_mut_slice().iter_mut())
        {
            *ar = RELAX * ai + (1.0 - RELAX) * *zi;
            *zi = *ar + ui;
        }
        project_balls(&mut z, row_off, gamma);
        for ((ui, &ar), &zi) in u.as_mut_slice().iter_mut().zip(a_rel.as_slice()).zip(z.as_slice()) {
            *ui += ar - zi;
        }
        for ((vi, &tr), &wi) in v.as_mut_slice().iter_mut().zip(th_rel.as_slice()).zip(w.as_slice()) {
            *vi += tr - wi;
        }

        if check {
            let r_z = &a - &z;
            let r_w = &theta - &w;
            let dz = &z - &z_prev;
            let dw = &w - &w_prev;
            let mut s = dw * beta;
            linalg::gemm_tr(&mut s, 1.0, g, &dz, 1.0);
            s *= rho;
            primal = (r_z.norm_squared() + beta * r_w.norm_squared()).sqrt();
            dual_res = s.norm();
            let obj: f64 = block_norms(&w, col_off).iter().sum();
            obj_hist.push(obj);

            let mut aw = g0.clone();
            linalg::gemm(&mut aw, 1.0, g, &w, 1.0);
            let max_res = block_norms(&aw, row_off).into_iter().fold(0.0, f64::max);
            let feasible = max_res <= gamma + cfg.feas_tol;
            if feasible && best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, w.clone()));
            }

            let lookback = OBJ_WINDOW / CHECK_EVERY;
            let stalled = obj_hist.len() > lookback && {
                let old = obj_hist[obj_hist.len() - 1 - lookback];
                (obj - old).abs() <= cfg.rel_obj_tol * (1.0 + obj.abs())
            };
            if feasible && primal <= eps_pri && dual_res <= eps_dual && stalled {
                let (du, dv) = (&u * rho, &v * rho);
                return Ok(BlockSolution::assemble(sys, w, gamma, cfg, k, primal, dual_res, rho, du, dv));
            }

            if k >= INFEAS_MIN_ITER && primal > eps_pri {
                if let Some(prev) = &r_last_check {
                    if infeasibility_certificate(g, g0, row_off, gamma, &r_z, prev, factor.sigma2) {
                        return Err(Error::Infeasible(format!(
                            "no θ satisfies the block constraints at gamma = {gamma} \
                             (persistent residual {primal:.3e} with vanishing dual progress)"
                        )));
                    }
                }
                r_last_check = Some(r_z.clone());
            }

            if k % ADAPT_EVERY == 0 && k < cfg.max_iter / 2 && primal > 0.0 && dual_res > 0.0 {
                let ratio = primal / dual_res;
                if !(1.0 / ADAPT_RATIO..=ADAPT_RATIO).contains(&ratio) {
                    let f = ratio.sqrt().clamp(0.01, 100.0);
                    rho *= f;
                    u /= f;
                    v /= f;
                }
            }
        }
    }

    let w_out = best.map(|(_, t)| t).unwrap_or(w);
    let (du, dv) = (&u * rho, &v * rho);
    let sol = BlockSolution::assemble(sys, w_out, gamma, cfg, cfg.max_iter, primal, dual_res, rho, du, dv);
    Err(Error::Convergence {
        iterations: cfg.max_iter,
        best: Box::new(sol),
    })
}

/// ADMM residual `r` converging to a nonzero `v` with `Ĝᵀv = 0` and
/// `⟨v, ĝ(0)⟩ > γ Σ_i ‖v_i‖` certifies infeasibility.
fn infeasibility_certificate(
    g: &DMatrix<f64>,
    g0: &DMatrix<f64>,
    row_off: &[usize],
    gamma: f64,
    r: &DMatrix<f64>,
    r_old: &DMatrix<f64>,
    sigma2: f64,
) -> bool {
    let nr = r.norm();
    if nr == 0.0 || (r - r_old).norm() > 1e-6 * nr {
        return false;
    }
    let gt = g.tr_mul(r).norm();
    if gt > 1e-6 * sigma2.sqrt() * nr {
        return false;
    }
    let lhs = r.dot(g0);
    let rhs = gamma * block_norms(r, row_off).iter().sum::<f64>();
    lhs - rhs > 1e-9 * nr * (1.0 + g0.norm())
}

/// For γ = 0 the system `Ĝθ = −ĝ(0)` must be consistent.
fn check_consistent(sys: &MomentSystem, cfg: &RmdConfig) -> Result<()> {
    let g = sys.g().clone();
    let rhs = -sys.g0();
    let svd = g.svd(true, true);
    let theta = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Data(format!("least-squares solve failed: {e}")))?;
    let resid = sys.g() * theta - rhs;
    let scale = 1.0 + sys.g0().norm();
    if resid.norm() > cfg.feas_tol * scale {
        return Err(Error::Infeasible(format!(
            "gamma = 0 but G θ = -g(0) is inconsistent (least-squares residual {:.3e})",
            resid.norm()
        )));
    }
    Ok(())
}

/// Solves along a non-increasing γ path, warm-starting each solve.
///
/// A failed γ is reported in place and the path continues.
pub fn solve_path(sys: &MomentSystem, gammas: &[f64], cfg: &RmdConfig) -> Result<Vec<Result<BlockSolution>>> {
    if gammas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Domain("gamma path must be sorted in descending order".into()));
    }
    let mut out = Vec::with_capacity(gammas.len());
    let mut last: Option<BlockSolution> = None;
    let mut infeasible_at: Option<f64> = None;
    for &gamma in gammas {
        // the feasible set shrinks with γ, so nothing below an infeasible level is feasible
        if let Some(g) = infeasible_at {
            out.push(Err(Error::Infeasible(format!(
                "gamma = {gamma} lies below the infeasible level {g}"
            ))));
            continue;
        }
        let res = solve_warm(sys, gamma, cfg, last.as_ref());
        if matches!(res, Err(Error::Infeasible(_))) {
            infeasible_at = Some(gamma);
        }
        match &res {
            Ok(sol) => last = Some(sol.clone()),
            Err(Error::Convergence { best, .. }) => last = Some((**best).clone()),
            Err(_) => {}
        }
        out.push(res);
    }
    Ok(out)
}

/// `(σ_min(m, Ĝ), σ_max(m, Ĝ))` at one subset size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub mu: f64,
    /// `⌈16 s / μ²⌉` before clamping to the block counts.
    pub m: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub ratio: f64,
    /// Whether `σ_min / σ_max ≥ μ` holds at this μ.
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub s: usize,
    pub points: Vec<SensitivityPoint>,
    /// `μ̂² / s` for the largest grid μ̂ meeting the singular-value ratio
    /// condition; `None` when no grid value qualifies.
    pub kappa_lower_proxy: Option<f64>,
}

pub const SENSITIVITY_MAX_BLOCKS: usize = 12;

/// Exhaustive singular-value diagnostics over block subsets.
pub fn sensitivity_diagnostic(sys: &MomentSystem, s: usize, mu_grid: &[f64]) -> Result<SensitivityReport> {
    if s == 0 {
        return Err(Error::Domain("sparsity s must be at least 1".into()));
    }
    if mu_grid.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
        return Err(Error::Domain("mu values must lie in (0, 1]".into()));
    }
    check_enumeration_cap(sys)?;
    let mut points = Vec::with_capacity(mu_grid.len());
    for &mu in mu_grid {
        let m = (16.0 * s as f64 / (mu * mu)).ceil() as usize;
        let (sigma_min, sigma_max) = sigma_bounds(sys, m)?;
        let ratio = if sigma_max > 0.0 { sigma_min / sigma_max } else { 0.0 };
        points.push(SensitivityPoint {
            mu,
            m,
            sigma_min,
            sigma_max,
            ratio,
            satisfied: ratio >= mu,
        });
    }
    let kappa_lower_proxy = points
        .iter()
        .filter(|p| p.satisfied)
        .map(|p| p.mu)
        .fold(None, |acc: Option<f64>, mu| Some(acc.map_or(mu, |a| a.max(mu))))
        .map(|mu| mu * mu / s as f64);
    Ok(SensitivityReport {
        s,
        points,
        kappa_lower_proxy,
    })
}

fn check_enumeration_cap(sys: &MomentSystem) -> Result<()> {
    if sys.p() > SENSITIVITY_MAX_BLOCKS || sys.q() > SENSITIVITY_MAX_BLOCKS {
        return Err(Error::Capability(format!(
            "subset enumeration supports at most {SENSITIVITY_MAX_BLOCKS} block rows and columns, got q = {}, p = {}",
            sys.q(),
            sys.p()
        )));
    }
    Ok(())
}

/// `σ_min(m,Ĝ) = min_{|M|≤m} max_{|J|≤m} σ_min(Ĝ_{J,M})` and
/// `σ_max(m,Ĝ) = max_{|M|≤m} max_{|J|≤m} σ_max(Ĝ_{J,M})` over nonempty subsets.
///
/// `m` larger than the block counts is clamped. Since `σ_min(Ĝ_{J,M})` grows
/// with `J` and shrinks with `M`, and `σ_max` grows with both, only subsets
/// of the largest admissible sizes are enumerated.
pub fn sigma_bounds(sys: &MomentSystem, m: usize) -> Result<(f64, f64)> {
    check_enumeration_cap(sys)?;
    if m == 0 {
        return Err(Error::Domain("subset size m must be at least 1".into()));
    }
    let mr = m.min(sys.q());
    let mc = m.min(sys.p());
    let row_sets = subsets_of_size(sys.q(), mr);
    let col_sets = subsets_of_size(sys.p(), mc);
    let mut smin = f64::INFINITY;
    let mut smax: f64 = 0.0;
    for cols in &col_sets {
        let cidx = expand(cols, sys.col_offsets());
        let mut inner: f64 = 0.0;
        for rows in &row_sets {
            let ridx = expand(rows, sys.row_offsets());
            let sub = sys.g().select_rows(&ridx).select_columns(&cidx);
            let (lo, hi) = extreme_singular_values(&sub);
            inner = inner.max(lo);
            smax = smax.max(hi);
        }
        smin = smin.min(inner);
    }
    Ok((smin, smax))
}

/// Smallest and largest singular values; a wide matrix has `σ_min = 0`.
pub(crate) fn extreme_singular_values(a: &DMatrix<f64>) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let sv = a.singular_values();
    let hi = sv.max();
    let lo = if a.nrows() < a.ncols() { 0.0 } else { sv.min() };
    (lo, hi)
}

fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    (1u32..(1u32 << n))
        .filter(|mask| mask.count_ones() as usize == k)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

fn expand(blocks: &[usize], offsets: &[usize]) -> Vec<usize> {
    blocks.iter().flat_map(|&b| offsets[b]..offsets[b + 1]).collect()
}
