//! Command-line driver: simulation, fitting, prediction, CIDR preprocessing
//! and the benchmark matrix.

pub mod cidr;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod split;

use std::path::PathBuf;

use afts_core::{Method, ModelKind};
use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "afts", version, about = "Autocovariance-based functional time series regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel from the benchmark design (or synthetic minute prices).
    Simulate(Args),
    /// Fit a scalar-on-function regression.
    FitSflr(Args),
    /// Fit a function-on-function regression.
    FitFflr(Args),
    /// Fit a vector functional autoregression.
    FitVfar(Args),
    /// Run the simulation benchmark matrix.
    Benchmark(Args),
    /// Turn minute prices into cumulative intraday return curves.
    Cidr(Args),
    /// Predict the test block of a fitted split.
    Predict(Args),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::FitSflr(_) => "fit-sflr",
            Command::FitFflr(_) => "fit-fflr",
            Command::FitVfar(_) => "fit-vfar",
            Command::Benchmark(_) => "benchmark",
            Command::Cidr(_) => "cidr",
            Command::Predict(_) => "predict",
        }
    }

    pub fn args(&self) -> &Args {
        match self {
            Command::Simulate(a)
            | Command::FitSflr(a)
            | Command::FitFflr(a)
            | Command::FitVfar(a)
            | Command::Benchmark(a)
            | Command::Cidr(a)
            | Command::Predict(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Args {
    /// TOML or JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed regularization level (skips validation tuning).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Number of tuning grid points.
    #[arg(long)]
    pub gamma_grid: Option<usize>,
    /// Lag budget of the autocovariance operator.
    #[arg(long = "L")]
    pub lag_budget: Option<usize>,
    /// VFAR order.
    #[arg(long = "H")]
    pub order: Option<usize>,
    /// Cumulative eigenvalue share used to pick the dimension.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// AUTO or COV.
    #[arg(long)]
    pub method: Option<Method>,
    /// SFLR, FFLR or VFAR.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Simulate without measurement error.
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long)]
    pub synthetic_prices: bool,
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<PathBuf>,
    #[arg(long)]
    pub fit_file: Option<PathBuf>,
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// Last minute index kept by `cidr`.
    #[arg(long)]
    pub n_cut: Option<usize>,
    #[arg(long)]
    pub index_ticker: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Args {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            n: self.n,
            p: self.p,
            seed: self.seed,
            gamma: self.gamma,
            gamma_grid: self.gamma_grid,
            lag_budget: self.lag_budget,
            order: self.order,
            threshold: self.threshold,
            method: self.method,
            model: self.model,
            replicates: self.replicates,
            grid_points: self.grid_points,
            no_noise: self.no_noise,
            synthetic_prices: self.synthetic_prices,
            panel: self.panel.clone(),
            response: self.response.clone(),
            fit_file: self.fit_file.clone(),
            prices: self.prices.clone(),
            n_cut: self.n_cut,
            index_ticker: self.index_ticker.clone(),
            out: self.out.clone(),
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let args = cli.command.args();
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.overrides())?;
    match &cli.command {
        Command::FitSflr(_) => cfg.model = ModelKind::Sflr,
        Command::FitFflr(_) => cfg.model = ModelKind::Fflr,
        Command::FitVfar(_) => cfg.model = ModelKind::Vfar,
        _ => {}
    }
    commands::run(cli.command.name(), &cfg)
}
