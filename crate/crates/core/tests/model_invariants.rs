#[path = "support/degeneration.rs"]
mod degeneration;

use afts_core::models::{FflrProblem, SflrProblem, VfarProblem};
use afts_core::sim::{simulate, stream_rng, Response, SimConfig};
use afts_core::{BasisConfig, ModelKind, RmdConfig, VfarConfig};

#[test]
fn degeneration_identities() {
    for seed in [1, 2] {
        for c in degeneration::run(seed) {
            if c.name.contains("equals") {
                assert!(c.deviation <= 1e-6, "{}: {}", c.name, c.deviation);
            } else {
                assert_eq!(c.deviation, 0.0, "{}", c.name);
            }
        }
    }
}

#[test]
fn norm_transfer_and_support() {
    let cfg = SimConfig {
        grid_points: 101,
        ..SimConfig::new(ModelKind::Sflr, 150, 8)
    };
    let out = simulate(&cfg, &mut stream_rng(4, 0)).unwrap();
    let s = out.train().unwrap();
    let Response::Scalar(y) = &s.response else { unreachable!() };
    let prob = SflrProblem::new(&s.w, y, &BasisConfig::default()).unwrap();
    let fit = prob.fit(0.3 * prob.gamma_max(), &RmdConfig::default()).unwrap();
    let mut nonzero = Vec::new();
    for j in 0..fit.p() {
        let b = fit.coefficients(j);
        let beta = fit.beta(j);
        assert!((beta.norm() - b.norm()).abs() <= 1e-6 * b.norm().max(1.0));
        assert_eq!(b.norm() == 0.0, beta.values().iter().all(|&v| v == 0.0));
        if b.norm() > 0.0 {
            nonzero.push(j);
        }
    }
    assert!(!nonzero.is_empty());
    assert!(fit.support().iter().all(|j| nonzero.contains(j)));

    let cfg = SimConfig {
        grid_points: 81,
        ..SimConfig::new(ModelKind::Fflr, 150, 6)
    };
    let out = simulate(&cfg, &mut stream_rng(5, 0)).unwrap();
    let s = out.train().unwrap();
    let Response::Curves(yc) = &s.response else { unreachable!() };
    let prob = FflrProblem::new(&s.w, yc, &Default::default()).unwrap();
    let fit = prob.fit(0.3 * prob.gamma_max(), &RmdConfig::default()).unwrap();
    for j in 0..fit.p() {
        let b = fit.coefficients(j);
        let hs = fit.beta(j).hs_norm();
        assert!((hs - b.norm()).abs() <= 1e-6 * b.norm().max(1.0), "series {j}: {hs} vs {}", b.norm());
    }
}

#[test]
fn vfar_rows_are_independent() {
    let cfg = SimConfig {
        grid_points: 51,
        ..SimConfig::new(ModelKind::Vfar, 120, 6)
    };
    let out = simulate(&cfg, &mut stream_rng(6, 0)).unwrap();
    let panel = out.train().unwrap().w;
    let prob = VfarProblem::new(&panel, &BasisConfig::default(), &VfarConfig::default()).unwrap();
    let rmd = RmdConfig::default();
    let gammas: Vec<f64> = (0..prob.p()).map(|j| 0.5 * prob.gamma_max(j)).collect();
    let joint = prob.fit(&gammas, &rmd).unwrap();
    // reversed order, one row at a time
    for j in (0..prob.p()).rev() {
        let alone = prob.fit_row(j, gammas[j], &rmd).unwrap();
        assert_eq!(joint.rows[j].as_ref().unwrap().theta, alone.theta, "row {j}");
    }
    // a different level on one row leaves the others untouched
    let mut changed = gammas.clone();
    changed[2] *= 0.5;
    let other = prob.fit(&changed, &rmd).unwrap();
    for j in (0..prob.p()).filter(|&j| j != 2) {
        assert_eq!(joint.rows[j].as_ref().unwrap().theta, other.rows[j].as_ref().unwrap().theta);
    }
}
