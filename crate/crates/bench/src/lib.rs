//! Fixtures shared by the criterion benches.

use afts_core::sim::{simulate, stream_rng, Response, SimConfig};
use afts_core::{FunctionalPanel, ModelKind};

/// Training half of one simulated SFLR replicate.
pub fn sflr_sample(n: usize, p: usize, seed: u64) -> (FunctionalPanel, Vec<f64>) {
    let out = simulate(&SimConfig::new(ModelKind::Sflr, n, p), &mut stream_rng(seed, 0)).expect("simulation");
    let s = out.train().expect("training block");
    match s.response {
        Response::Scalar(y) => (s.w, y),
        _ => unreachable!("SFLR responses are scalar"),
    }
}

/// Training half of one simulated VFAR replicate.
pub fn vfar_panel(n: usize, p: usize, seed: u64) -> FunctionalPanel {
    let out = simulate(&SimConfig::new(ModelKind::Vfar, n, p), &mut stream_rng(seed, 0)).expect("simulation");
    out.train().expect("training block").w
}
