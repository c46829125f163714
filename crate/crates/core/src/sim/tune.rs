//! Regularization choice by score-space prediction error on a validation
//! sample.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Response, Sample};
use crate::autocov::{project_scores, project_series, ScorePanel};
use crate::baseline::{CovFflrProblem, CovSflrProblem, CovVfarProblem};
use crate::error::{Error, Result};
use crate::func::FunctionalPanel;
use crate::models::vfar::lagged_design;
use crate::models::{log_grid, FflrProblem, Fit, FitConfig, Method, ModelKind, RowFailure, SflrProblem, VfarConfig, VfarProblem};
use crate::baseline::FistaConfig;
use crate::rmd::{solve_path, solve_warm, BlockSolution, RmdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneOptions {
    pub grid_size: usize,
    /// Smallest level as a fraction of the largest.
    pub grid_ratio: f64,
    /// Solver tolerance along the path (RMD feasibility, FISTA change and
    /// KKT); the selected level is re-solved at the fit configuration's
    /// tolerance.
    pub path_tol: f64,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            grid_size: 30,
            grid_ratio: 1e-3,
            path_tol: 1e-4,
        }
    }
}

impl TuneOptions {
    fn path_rmd(&self, cfg: &RmdConfig) -> RmdConfig {
        RmdConfig {
            feas_tol: cfg.feas_tol.max(self.path_tol),
            rel_obj_tol: cfg.rel_obj_tol.max(0.1 * self.path_tol),
            ..*cfg
        }
    }

    fn path_fista(&self, cfg: &FistaConfig) -> FistaConfig {
        FistaConfig {
            tol: cfg.tol.max(0.01 * self.path_tol),
            kkt_tol: cfg.kkt_tol.max(0.1 * self.path_tol),
            ..*cfg
        }
    }

    /// Log-spaced levels from `top` down to `grid_ratio · top`.
    pub fn grid(&self, top: f64) -> Vec<f64> {
        if !(top > 0.0 && top.is_finite()) {
            return vec![0.0];
        }
        log_grid(top, self.grid_ratio, self.grid_size.max(1))
    }
}

/// Validation errors along one grid and the chosen index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub grid: Vec<f64>,
    /// `NaN` where the fit failed.
    pub errors: Vec<f64>,
    pub index: usize,
    pub failures: usize,
}

impl Selection {
    pub fn value(&self) -> f64 {
        self.grid[self.index]
    }
}

/// Index of the smallest finite error; ties go to the larger level.
pub fn select_index(grid: &[f64], errors: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &e) in errors.iter().enumerate() {
        if !e.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if e < errors[b] || (e == errors[b] && grid[i] > grid[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

/// A validation-tuned fit; VFAR carries one selection per row.
#[derive(Debug, Clone)]
pub struct Tuned {
    pub fit: Fit,
    pub selections: Vec<Selection>,
}

impl Tuned {
    /// Selected level (median over rows for VFAR).
    pub fn gamma(&self) -> f64 {
        let mut v: Vec<f64> = self.selections.iter().map(Selection::value).collect();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => f64::NAN,
            m if m % 2 == 1 => v[m / 2],
            m => 0.5 * (v[m / 2 - 1] + v[m / 2]),
        }
    }
}

fn pick(
    grid: Vec<f64>,
    path: Vec<Result<BlockSolution>>,
    err: impl Fn(&BlockSolution) -> f64,
    refit: impl Fn(f64, &BlockSolution) -> Result<BlockSolution>,
) -> Result<(Selection, BlockSolution)> {
    let mut errors = Vec::with_capacity(path.len());
    let mut failures = 0;
    let mut first_err = None;
    for r in &path {
        match r {
            Ok(s) => errors.push(err(s)),
            Err(e) => {
                failures += 1;
                errors.push(f64::NAN);
                if first_err.is_none() {
                    first_err = Some(e.to_string());
                }
            }
        }
    }
    let Some(index) = select_index(&grid, &errors) else {
        return Err(Error::Capability(format!(
            "every grid point failed: {}",
            first_err.unwrap_or_default()
        )));
    };
    let rough = path.into_iter().nth(index).expect("index in range").expect("selected fit succeeded");
    let sol = refit(grid[index], &rough)?;
    Ok((
        Selection {
            grid,
            errors,
            index,
            failures,
        },
        sol,
    ))
}

fn scalar(r: &Response) -> Result<&[f64]> {
    match r {
        Response::Scalar(y) => Ok(y),
        _ => Err(Error::Structural("SFLR needs a scalar response".into())),
    }
}

fn curves(r: &Response) -> Result<&FunctionalPanel> {
    match r {
        Response::Curves(c) => Ok(c),
        _ => Err(Error::Structural("FFLR needs a functional response".into())),
    }
}

fn sse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared()
}

/// Fits along a grid on `train` and keeps the level with the smallest
/// score-space squared prediction error on `valid`.
pub fn tune(
    train: &Sample,
    valid: &Sample,
    model: ModelKind,
    method: Method,
    cfg: &FitConfig,
    vcfg: &VfarConfig,
    opts: &TuneOptions,
) -> Result<Tuned> {
    crate::models::validate_fit_config(cfg)?;
    match model {
        ModelKind::Sflr => tune_sflr(train, valid, method, cfg, opts),
        ModelKind::Fflr => tune_fflr(train, valid, method, cfg, opts),
        ModelKind::Vfar => tune_vfar(train, valid, method, cfg, vcfg, opts),
    }
}

fn tune_sflr(train: &Sample, valid: &Sample, method: Method, cfg: &FitConfig, opts: &TuneOptions) -> Result<Tuned> {
    let y = scalar(&train.response)?;
    let yv = DMatrix::from_column_slice(valid.w.n(), 1, scalar(&valid.response)?);
    match method {
        Method::Auto => {
            let prob = SflrProblem::new(&train.w, y, &cfg.basis)?;
            let sv = project_scores(&valid.w, &prob.bases)?;
            let grid = opts.grid(prob.gamma_max());
            let path = solve_path(&prob.system, &grid, &opts.path_rmd(&cfg.rmd))?;
            let refit = |g: f64, w: &BlockSolution| solve_warm(&prob.system, g, &cfg.rmd, Some(w));
            let (sel, sol) = pick(grid, path, |s| sse(&yv, &(sv.matrix() * &s.theta)), refit)?;
            Ok(Tuned {
                fit: Fit::Sflr(prob.wrap(sol)),
                selections: vec![sel],
            })
        }
        Method::Cov => {
            let prob = CovSflrProblem::new(&train.w, y, &cfg.basis)?;
            let sv = project_scores(&valid.w, &prob.bases)?;
            let grid = opts.grid(prob.lambda_max());
            let path = prob.problem.solve_path(&grid, &opts.path_fista(&cfg.fista))?;
            let refit = |l: f64, w: &BlockSolution| prob.problem.solve_block(l, &cfg.fista, Some(&w.theta));
            let (sel, sol) = pick(grid, path, |s| sse(&yv, &(sv.matrix() * &s.theta)), refit)?;
            Ok(Tuned {
                fit: Fit::Sflr(prob.wrap(sol)),
                selections: vec![sel],
            })
        }
    }
}

fn tune_fflr(train: &Sample, valid: &Sample, method: Method, cfg: &FitConfig, opts: &TuneOptions) -> Result<Tuned> {
    let y = curves(&train.response)?;
    let yv = curves(&valid.response)?;
    match method {
        Method::Auto => {
            let prob = FflrProblem::new(&train.w, y, cfg)?;
            let sv = project_scores(&valid.w, &prob.bases)?;
            let zv = project_series(yv, 0, &prob.response_basis)?;
            let grid = opts.grid(prob.gamma_max());
            let path = solve_path(&prob.system, &grid, &opts.path_rmd(&cfg.rmd))?;
            let refit = |g: f64, w: &BlockSolution| solve_warm(&prob.system, g, &cfg.rmd, Some(w));
            let (sel, sol) = pick(grid, path, |s| sse(&zv, &(sv.matrix() * &s.theta)), refit)?;
            Ok(Tuned {
                fit: Fit::Fflr(prob.wrap(sol)),
                selections: vec![sel],
            })
        }
        Method::Cov => {
            let prob = CovFflrProblem::new(&train.w, y, &cfg.basis)?;
            let sv = project_scores(&valid.w, &prob.bases)?;
            let zv = project_series(yv, 0, &prob.response_basis)?;
            let grid = opts.grid(prob.lambda_max());
            let path = prob.problem.solve_path(&grid, &opts.path_fista(&cfg.fista))?;
            let refit = |l: f64, w: &BlockSolution| prob.problem.solve_block(l, &cfg.fista, Some(&w.theta));
            let (sel, sol) = pick(grid, path, |s| sse(&zv, &(sv.matrix() * &s.theta)), refit)?;
            Ok(Tuned {
                fit: Fit::Fflr(prob.wrap(sol)),
                selections: vec![sel],
            })
        }
    }
}

type RowPath<'a> = Box<dyn Fn(usize, &[f64]) -> Result<Vec<Result<BlockSolution>>> + Sync + 'a>;
type RowRefit<'a> = Box<dyn Fn(usize, f64, &BlockSolution) -> Result<BlockSolution> + Sync + 'a>;

fn tune_rows(
    p: usize,
    tops: Vec<f64>,
    path: RowPath<'_>,
    refit: RowRefit<'_>,
    valid_scores: &ScorePanel,
    order: usize,
    opts: &TuneOptions,
) -> Result<(Vec<Option<BlockSolution>>, Vec<RowFailure>, Vec<Selection>)> {
    let z = lagged_design(valid_scores, order)?;
    let n = valid_scores.n();
    let results: Vec<Result<(Selection, BlockSolution)>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let target = valid_scores.series(j).rows(order, n - order).into_owned();
            let grid = opts.grid(tops[j]);
            let sols = path(j, &grid)?;
            pick(grid, sols, |s| sse(&target, &(&z * &s.theta)), |g, w| refit(j, g, w))
        })
        .collect();
    let mut rows = Vec::with_capacity(p);
    let mut failures = Vec::new();
    let mut selections = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok((sel, sol)) => {
                rows.push(Some(sol));
                selections.push(sel);
            }
            Err(e @ (Error::Config(_) | Error::Domain(_))) => return Err(e),
            Err(e) => {
                rows.push(None);
                failures.push(RowFailure {
                    row: j,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok((rows, failures, selections))
}

fn tune_vfar(
    train: &Sample,
    valid: &Sample,
    method: Method,
    cfg: &FitConfig,
    vcfg: &VfarConfig,
    opts: &TuneOptions,
) -> Result<Tuned> {
    match method {
        Method::Auto => {
            let prob = VfarProblem::new(&train.w, &cfg.basis, vcfg)?;
            let sv = project_scores(&valid.w, &prob.bases)?;
            let tops = (0..prob.p()).map(|j| prob.gamma_max(j)).collect();
            let (loose, rmd) = (opts.path_rmd(&cfg.rmd), cfg.rmd);
            let pr = &prob;
            let (rows, failures, selections) = tune_rows(
                prob.p(),
                tops,
                Box::new(move |j, g| pr.row_path(j, g, &loose)),
                Box::new(move |j, g, w| solve_warm(&pr.systems[j], g, &rmd, Some(w))),
                &sv,
                vcfg.order,
                opts,
            )?;
            Ok(Tuned {
                fit: Fit::Vfar(prob.wrap(rows, failures)),
                selections,
            })
        }
        Method::Cov => {
            let prob = CovVfarProblem::new(&train.w, &cfg.basis, vcfg)?;
            let sv = project_scores(&valid.w, &prob.bases)?;
            let tops = (0..prob.p()).map(|j| prob.lambda_max(j)).collect();
            let (loose, fista) = (opts.path_fista(&cfg.fista), cfg.fista);
            let pr = &prob;
            let (rows, failures, selections) = tune_rows(
                prob.p(),
                tops,
                Box::new(move |j, g| pr.row_path(j, g, &loose)),
                Box::new(move |j, l, w| pr.problems[j].solve_block(l, &fista, Some(&w.theta))),
                &sv,
                vcfg.order,
                opts,
            )?;
            Ok(Tuned {
                fit: Fit::Vfar(prob.wrap(rows, failures)),
                selections,
            })
        }
    }
}
