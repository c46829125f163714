//! Degeneration identities of the three fits and the comparator.

#![allow(dead_code)]

use afts_core::autocov::BasisKind;
use afts_core::baseline::{CovFflrProblem, CovSflrProblem, CovVfarProblem, FistaConfig};
use afts_core::models::{FflrProblem, SflrProblem, VfarProblem};
use afts_core::sim::{simulate, stream_rng, Response, SimConfig};
use afts_core::{AutocovBasis, BasisConfig, Curve, FunctionalPanel, ModelKind, RmdConfig, VfarConfig};
use nalgebra::DMatrix;

pub struct Check {
    pub name: &'static str,
    /// Largest absolute deviation from the identity.
    pub deviation: f64,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn sample(model: ModelKind, seed: u64) -> (FunctionalPanel, Response) {
    let cfg = SimConfig {
        grid_points: 51,
        ..SimConfig::new(model, 80, 6)
    };
    let out = simulate(&cfg, &mut stream_rng(seed, 0)).unwrap();
    let s = out.train().unwrap();
    (s.w, s.response)
}

fn scalar(r: Response) -> Vec<f64> {
    match r {
        Response::Scalar(y) => y,
        _ => unreachable!(),
    }
}

fn curves(r: Response) -> FunctionalPanel {
    match r {
        Response::Curves(c) => c,
        _ => unreachable!(),
    }
}

pub fn run(seed: u64) -> Vec<Check> {
    let basis = BasisConfig::default();
    let rmd = RmdConfig::default();
    let fista = FistaConfig::default();
    let mut out = Vec::new();

    let (xs, ys) = sample(ModelKind::Sflr, seed);
    let y = scalar(ys);
    let sflr = SflrProblem::new(&xs, &y, &basis).unwrap();
    let at_max = sflr.fit(sflr.gamma_max(), &rmd).unwrap();
    let above = sflr.fit(1.5 * sflr.gamma_max(), &rmd).unwrap();
    out.push(Check {
        name: "SFLR zero at gamma_max",
        deviation: max_abs(&at_max.solution.theta).max(max_abs(&above.solution.theta)),
    });

    let (xf, yf) = sample(ModelKind::Fflr, seed);
    let yf = curves(yf);
    let fflr = FflrProblem::new(&xf, &yf, &Default::default()).unwrap();
    let f = fflr.fit(fflr.gamma_max(), &rmd).unwrap();
    out.push(Check {
        name: "FFLR zero at gamma_max",
        deviation: max_abs(&f.solution.theta),
    });

    let (xv, _) = sample(ModelKind::Vfar, seed);
    let vfar = VfarProblem::new(&xv, &basis, &VfarConfig::default()).unwrap();
    let gm: Vec<f64> = (0..vfar.p()).map(|j| vfar.gamma_max(j)).collect();
    let v = vfar.fit(&gm, &rmd).unwrap();
    out.push(Check {
        name: "VFAR zero at gamma_max",
        deviation: v
            .rows
            .iter()
            .map(|r| r.as_ref().map_or(f64::INFINITY, |s| max_abs(&s.theta)))
            .fold(0.0, f64::max),
    });

    // constant response curves Y_t(v) = y_t with the constant basis φ ≡ 1
    let grid = xs.grid().clone();
    let g = grid.len();
    let ymat = DMatrix::from_fn(y.len(), g, |t, _| y[t]);
    let panel_y = FunctionalPanel::from_series(grid.clone(), &[ymat]).unwrap();
    let one = Curve::from_fn(grid.clone(), |_| 1.0).unwrap();
    let constant = AutocovBasis::from_parts(0, BasisKind::Covariance, vec![1.0], vec![one]).unwrap();
    let as_fflr = FflrProblem::from_parts(grid, &panel_y, sflr.lags, sflr.bases.clone(), sflr.scores.clone(), constant).unwrap();
    let gamma = 0.4 * sflr.gamma_max();
    let a = sflr.fit(gamma, &rmd).unwrap();
    let b = as_fflr.fit(gamma, &rmd).unwrap();
    out.push(Check {
        name: "FFLR with constant response basis equals SFLR",
        deviation: max_abs(&(&a.solution.theta - &b.solution.theta)),
    });

    let cs = CovSflrProblem::new(&xs, &y, &basis).unwrap();
    let cf = CovFflrProblem::new(&xf, &yf, &basis).unwrap();
    let cv = CovVfarProblem::new(&xv, &basis, &VfarConfig::default()).unwrap();
    let lm: Vec<f64> = (0..cv.p()).map(|j| cv.lambda_max(j)).collect();
    let dev = max_abs(&cs.fit(cs.lambda_max(), &fista).unwrap().solution.theta)
        .max(max_abs(&cf.fit(cf.lambda_max(), &fista).unwrap().solution.theta))
        .max(
            cv.fit(&lm, &fista)
                .unwrap()
                .rows
                .iter()
                .map(|r| r.as_ref().map_or(f64::INFINITY, |s| max_abs(&s.theta)))
                .fold(0.0, f64::max),
        );
    out.push(Check {
        name: "COV zero at lambda_max",
        deviation: dev,
    });
    out
}
