//! AUTO-vs-COV comparison over a grid of `(model, n, p)` cells.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{f1_support, relative_error};
use super::tune::{tune, TuneOptions};
use super::{simulate, stream_rng, SimConfig, REGRESSION_SUPPORT};
use crate::error::{Error, Result};
use crate::models::{Fit, FitConfig, Method, ModelKind, VfarConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub ns: Vec<usize>,
    pub ps: Vec<usize>,
    pub models: Vec<ModelKind>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub noise: bool,
    pub fit: FitConfig,
    pub vfar: VfarConfig,
    pub tune: TuneOptions,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            ns: vec![100, 200, 400],
            ps: vec![40, 80],
            models: ModelKind::ALL.to_vec(),
            methods: vec![Method::Auto, Method::Cov],
            replicates: 20,
            seed: 1,
            grid_points: 101,
            noise: true,
            fit: FitConfig::default(),
            vfar: VfarConfig::default(),
            tune: TuneOptions::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ps.is_empty() || self.models.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("benchmark needs at least one n, p, model and method".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.tune.grid_size == 0
            || !(self.tune.grid_ratio > 0.0 && self.tune.grid_ratio < 1.0)
            || !(self.tune.path_tol > 0.0 && self.tune.path_tol.is_finite())
        {
            return Err(Error::Config(format!("invalid tuning grid {:?}", self.tune)));
        }
        crate::models::validate_fit_config(&self.fit)
    }
}

/// Stream index for one replicate; every `(model, n, p, replicate)` gets
/// its own ChaCha20 stream under the master seed, and both methods see the
/// same data.
pub fn replicate_stream(model: ModelKind, n: usize, p: usize, replicate: usize) -> u64 {
    let m = match model {
        ModelKind::Sflr => 0u64,
        ModelKind::Fflr => 1,
        ModelKind::Vfar => 2,
    };
    (m << 60) | ((p as u64 & 0xfffff) << 40) | ((n as u64 & 0xfffff) << 20) | (replicate as u64 & 0xfffff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub model: ModelKind,
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    /// `NaN` when the replicate failed.
    pub rel_error: f64,
    pub gamma: f64,
    pub seconds: f64,
    /// SFLR only: support F1 against the true support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    /// VFAR rows without a fit.
    #[serde(default)]
    pub failed_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub failures: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub records: Vec<BenchmarkRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

fn run_replicate(cfg: &BenchmarkConfig, model: ModelKind, n: usize, p: usize, rep: usize) -> Vec<BenchmarkRecord> {
    let sim_cfg = SimConfig {
        grid_points: cfg.grid_points,
        noise: cfg.noise,
        ..SimConfig::new(model, n, p)
    };
    let mut rng = stream_rng(cfg.seed, replicate_stream(model, n, p, rep));
    let blank = |method: Method| BenchmarkRecord {
        model,
        method,
        n,
        p,
        replicate: rep,
        rel_error: f64::NAN,
        gamma: f64::NAN,
        seconds: 0.0,
        f1: None,
        failed_rows: 0,
        error: None,
    };
    let data = simulate(&sim_cfg, &mut rng).and_then(|out| Ok((out.train()?, out.valid()?, out)));
    let (train, valid, out) = match data {
        Ok(d) => d,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| BenchmarkRecord {
                    error: Some(e.to_string()),
                    ..blank(m)
                })
                .collect()
        }
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let res = tune(&train, &valid, model, method, &cfg.fit, &cfg.vfar, &cfg.tune)
                .and_then(|t| relative_error(&t.fit, &out.truth, &out.grid).map(|e| (t, e)));
            let seconds = start.elapsed().as_secs_f64();
            match res {
                Ok((t, err)) => BenchmarkRecord {
                    rel_error: err,
                    gamma: t.gamma(),
                    seconds,
                    f1: match &t.fit {
                        Fit::Sflr(f) => Some(f1_support(f.support(), &REGRESSION_SUPPORT)),
                        _ => None,
                    },
                    failed_rows: match &t.fit {
                        Fit::Vfar(f) => f.failures.len(),
                        _ => 0,
                    },
                    ..blank(method)
                },
                Err(e) => BenchmarkRecord {
                    seconds,
                    error: Some(e.to_string()),
                    ..blank(method)
                },
            }
        })
        .collect()
}

/// Runs every replicate of every cell (in parallel) and summarizes.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for &model in &cfg.models {
        for &p in &cfg.ps {
            for &n in &cfg.ns {
                for rep in 0..cfg.replicates {
                    tasks.push((model, n, p, rep));
                }
            }
        }
    }
    let records: Vec<BenchmarkRecord> = tasks
        .par_iter()
        .map(|&(model, n, p, rep)| run_replicate(cfg, model, n, p, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize(cfg, &records);
    Ok(BenchmarkReport {
        config: cfg.clone(),
        records,
        summary,
    })
}

fn summarize(cfg: &BenchmarkConfig, records: &[BenchmarkRecord]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &model in &cfg.models {
        for &method in &cfg.methods {
            for &p in &cfg.ps {
                for &n in &cfg.ns {
                    let cell: Vec<&BenchmarkRecord> = records
                        .iter()
                        .filter(|r| r.model == model && r.method == method && r.n == n && r.p == p)
                        .collect();
                    let mut v: Vec<f64> = cell.iter().map(|r| r.rel_error).filter(|x| x.is_finite()).collect();
                    v.sort_by(f64::total_cmp);
                    out.push(SummaryRow {
                        model,
                        method,
                        n,
                        p,
                        replicates: cell.len(),
                        failures: cell.len() - v.len(),
                        min: v.first().copied().unwrap_or(f64::NAN),
                        q1: quantile(&v, 0.25),
                        median: quantile(&v, 0.5),
                        q3: quantile(&v, 0.75),
                        max: v.last().copied().unwrap_or(f64::NAN),
                    });
                }
            }
        }
    }
    out
}

pub const RESULTS_HEADER: [&str; 8] = ["model", "method", "n", "p", "replicate", "rel_error", "gamma", "seconds"];
pub const SUMMARY_HEADER: [&str; 11] = [
    "model", "method", "n", "p", "replicates", "failures", "min", "q1", "median", "q3", "max",
];
pub const SUPPORT_HEADER: [&str; 6] = ["model", "method", "n", "p", "replicate", "f1"];

impl BenchmarkReport {
    pub fn write_results_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RESULTS_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.model.name().to_string(),
                r.method.name().to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.replicate.to_string(),
                r.rel_error.to_string(),
                r.gamma.to_string(),
                format!("{:.6}", r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        for s in &self.summary {
            w.write_record([
                s.model.name().to_string(),
                s.method.name().to_string(),
                s.n.to_string(),
                s.p.to_string(),
                s.replicates.to_string(),
                s.failures.to_string(),
                s.min.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.q3.to_string(),
                s.max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-replicate SFLR support F1 scores.
    pub fn write_support_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SUPPORT_HEADER)?;
        for r in &self.records {
            if let Some(f1) = r.f1 {
                w.write_record([
                    r.model.name().to_string(),
                    r.method.name().to_string(),
                    r.n.to_string(),
                    r.p.to_string(),
                    r.replicate.to_string(),
                    f1.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn cell_median(&self, model: ModelKind, method: Method, n: usize, p: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.model == model && s.method == method && s.n == n && s.p == p)
            .map(|s| s.median)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
    }

    #[test]
    fn streams_distinct() {
        let a = replicate_stream(ModelKind::Sflr, 100, 40, 0);
        let b = replicate_stream(ModelKind::Sflr, 100, 40, 1);
        let c = replicate_stream(ModelKind::Fflr, 100, 40, 0);
        let d = replicate_stream(ModelKind::Sflr, 400, 40, 0);
        assert!(a != b && a != c && a != d);
    }
}
