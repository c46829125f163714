use afts_core::sim::benchmark::replicate_stream;
use afts_core::sim::tune::{tune, TuneOptions};
use afts_core::sim::{simulate, stream_rng, SimConfig};
use afts_core::{FitConfig, Method, ModelKind, VfarConfig};
use rayon::prelude::*;

// Validation-selected γ should usually fall strictly inside the grid.
#[test]
fn sflr_selection_is_usually_interior() {
    let opts = TuneOptions::default();
    let interior: Vec<bool> = (0..50)
        .into_par_iter()
        .map(|rep| {
            let cfg = SimConfig::new(ModelKind::Sflr, 100, 40);
            let out = simulate(&cfg, &mut stream_rng(2024, replicate_stream(ModelKind::Sflr, 100, 40, rep))).unwrap();
            let (train, valid) = (out.train().unwrap(), out.valid().unwrap());
            let t = tune(&train, &valid, ModelKind::Sflr, Method::Auto, &FitConfig::default(), &VfarConfig::default(), &opts).unwrap();
            let i = t.selections[0].index;
            i > 0 && i + 1 < opts.grid_size
        })
        .collect();
    let rate = interior.iter().filter(|&&b| b).count() as f64 / interior.len() as f64;
    eprintln!("interior selection rate {rate:.2}");
    assert!(rate >= 0.7, "interior rate {rate}");
}
