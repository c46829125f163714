//! Estimation for high-dimensional functional time series observed with
//! white-noise contamination.
//!
//! The pipeline has three steps: an autocovariance-based basis per series
//! ([`autocov`]), a block regularized minimum-distance fit in score space
//! ([`rmd`]), and recovery of functional coefficients ([`models`]). The
//! covariance-based comparator lives in [`baseline`] and the simulation
//! design in [`sim`].

pub mod autocov;
pub mod baseline;
pub mod error;
pub mod func;
pub mod io;
mod linalg;
pub mod models;
pub mod rmd;
pub mod sim;

pub use autocov::{AutocovBasis, BasisConfig, BasisKind, ScorePanel};
pub use error::{Error, Result};
pub use func::{Curve, FunctionalPanel, Grid, Kernel, LowRankKernel};
pub use models::{
    FflrFit, Fit, FitConfig, FitManifest, Instruments, Method, ModelKind, SflrFit, VfarConfig, VfarFit,
};
pub use rmd::{BlockSolution, MomentSystem, RmdConfig, SolverStats};
