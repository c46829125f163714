use afts_core::autocov::{compute_k, eigen_decompose, project_series};
use afts_core::func::inner_product;
use afts_core::sim::normal_matrix;
use afts_core::{AutocovBasis, BasisConfig, FunctionalPanel, Grid};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn smooth_panel(n: usize, g: usize, seed: u64) -> FunctionalPanel {
    let grid = Grid::uniform(0.0, 1.0, g).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // AR(1) scores on 6 cosines plus white noise
    let z = normal_matrix(n, 6, 1.0, &mut rng);
    let mut s = DMatrix::zeros(n, 6);
    for t in 0..n {
        for l in 0..6 {
            let prev = if t > 0 { s[(t - 1, l)] } else { 0.0 };
            s[(t, l)] = 0.7 / (l + 1) as f64 * prev + z[(t, l)] / (l + 1) as f64;
        }
    }
    let e = normal_matrix(n, g, 0.3, &mut rng);
    let pts = grid.points().to_vec();
    let m = DMatrix::from_fn(n, g, |t, k| {
        (0..6).map(|l| s[(t, l)] * (std::f64::consts::PI * l as f64 * pts[k]).cos()).sum::<f64>() + e[(t, k)]
    });
    FunctionalPanel::from_series(grid, &[m]).unwrap()
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Nonzero spectrum of the lag-pooled operator through the time-domain dual.
///
/// `K = Σ_h A_h S_h A_hᵀ / (n−h)²` with `A_h` the first `n−h` curves as
/// columns and `S_h` the quadrature Gram matrix of the last `n−h` curves.
/// With `F_h = D^{1/2} A_h S_h^{1/2} / (n−h)`, `D` the quadrature weights, the
/// operator is similar to `Σ_h F_h F_hᵀ`, whose nonzero eigenvalues are those
/// of the stacked Gram matrix `FᵀF`.
fn dual_spectrum(panel: &FunctionalPanel, lags: usize) -> Vec<f64> {
    let w = panel.series_matrix(0);
    let n = w.nrows();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(panel.grid().weights()));
    let dh = d.map(f64::sqrt);
    let blocks: Vec<DMatrix<f64>> = (1..=lags)
        .map(|h| {
            let m = n - h;
            let a = w.rows(0, m).transpose();
            let tail = w.rows(h, m);
            let s = &tail * &d * tail.transpose();
            &dh * a * psd_sqrt(&s) / m as f64
        })
        .collect();
    let f = DMatrix::from_columns(&blocks.iter().flat_map(|b| b.column_iter().map(|c| c.into_owned())).collect::<Vec<_>>());
    let mut ev: Vec<f64> = SymmetricEigen::new(f.transpose() * f).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

#[test]
fn grid_and_dual_spectra_agree() {
    for (n, g, lags, seed) in [(30, 41, 3, 1u64), (25, 61, 2, 2), (40, 33, 4, 3)] {
        let panel = smooth_panel(n, g, seed);
        let k = compute_k(&panel, 0, lags).unwrap();
        let grid_ev = eigen_decompose(&k, 1).unwrap().eigenvalues;
        let dual_ev = dual_spectrum(&panel, lags);
        let top = grid_ev[0];
        for i in 0..10.min(n - lags) {
            let scale = grid_ev[i].abs().max(1e-3 * top);
            assert!(
                (grid_ev[i] - dual_ev[i]).abs() <= 1e-6 * scale,
                "n={n} G={g} L={lags}: eigenvalue {i}: grid {} dual {}",
                grid_ev[i],
                dual_ev[i]
            );
        }
    }
}

#[test]
fn scores_are_quadrature_projections() {
    let panel = smooth_panel(40, 51, 9);
    let basis = AutocovBasis::estimate(&panel, 0, &BasisConfig::default()).unwrap();
    let scores = project_series(&panel, 0, &basis).unwrap();
    for t in [0, 17, 39] {
        for l in 0..basis.d {
            let ip = inner_product(&panel.curve(t, 0), &basis.eigenfunctions[l]).unwrap();
            assert!((scores[(t, l)] - ip).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lag_pooled_operator_is_symmetric_psd(seed in any::<u64>(), n in 8usize..40, lags in 1usize..5) {
        prop_assume!(lags < n);
        let panel = smooth_panel(n, 31, seed);
        let k = compute_k(&panel, 0, lags).unwrap();
        let v = k.values();
        prop_assert_eq!(v, &v.transpose());
        let ev = SymmetricEigen::new(v.clone()).eigenvalues;
        let max = ev.max();
        prop_assert!(ev.min() >= -1e-8 * max.abs().max(1e-300));
    }

    #[test]
    fn eigenfunctions_orthonormal_and_signed(seed in any::<u64>(), n in 10usize..40) {
        let panel = smooth_panel(n, 37, seed);
        let k = compute_k(&panel, 0, 2).unwrap();
        let spec = eigen_decompose(&k, 5).unwrap();
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for (a, fa) in spec.eigenfunctions.iter().enumerate() {
            let vals = fa.values();
            let big = vals.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            prop_assert!(big > 0.0);
            for (b, fb) in spec.eigenfunctions.iter().enumerate() {
                let ip = inner_product(fa, fb).unwrap();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((ip - want).abs() < 1e-9, "<f{}, f{}> = {}", a, b, ip);
            }
        }
    }
}
