//! The seven subcommands.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use afts_core::baseline::{fit_cov_fflr, fit_cov_sflr, fit_cov_vfar};
use afts_core::models::{fit_fflr, fit_sflr, fit_vfar, FitManifest};
use afts_core::sim::benchmark::{replicate_stream, RESULTS_HEADER, SUMMARY_HEADER, SUPPORT_HEADER};
use afts_core::sim::tune::{tune, Selection};
use afts_core::sim::{run_benchmark, simulate, stream_rng, Response, Sample, SimConfig, Transition, Truth};
use afts_core::{Fit, FunctionalPanel, Grid, Method, ModelKind};
use serde::{Deserialize, Serialize};

use crate::cidr::{cidr_transform, intraday_returns, synthetic_prices, PricePanel, PRICE_HEADER};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{read_response_csv, write_response_csv, OutDir, Schema, RESPONSE_HEADER};
use crate::split::Split;

/// Minutes per synthetic trading day (09:30 to 16:00 inclusive).
pub const SYNTHETIC_MINUTES: usize = 391;

pub const SELECTION_HEADER: [&str; 5] = ["row", "index", "level", "error", "selected"];
pub const BETA_HEADER: [&str; 4] = ["j", "u_index", "u", "value"];
pub const SFLR_PREDICTION_HEADER: [&str; 3] = ["t", "y", "yhat"];
pub const CURVE_PREDICTION_HEADER: [&str; 4] = ["t", "j", "sq_error", "baseline_sq_error"];
pub const SUPPORT_RATE_HEADER: [&str; 7] = ["model", "method", "n", "p", "replicates", "rate_f1_ge_0_8", "mean_f1"];

/// Training means removed before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    /// Per-series mean curve.
    pub x_mean: Vec<Vec<f64>>,
    /// Scalar mean (SFLR), mean response curve (FFLR) or empty (VFAR).
    pub y_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub grid: Vec<f64>,
    /// `None` where the fit failed.
    pub errors: Vec<Option<f64>>,
    pub index: usize,
    pub failures: usize,
}

impl From<&Selection> for SelectionRecord {
    fn from(s: &Selection) -> Self {
        SelectionRecord {
            grid: s.grid.clone(),
            errors: s.errors.iter().map(|e| e.is_finite().then_some(*e)).collect(),
            index: s.index,
            failures: s.failures,
        }
    }
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub fit: FitManifest,
    pub split: Split,
    pub centering: Option<Centering>,
    /// Fixed level, or the selected level (median over rows for VFAR).
    pub gamma: f64,
    pub selections: Vec<SelectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub model: ModelKind,
    pub method: Method,
    pub n_test: usize,
    pub test_start: usize,
    pub test_end: usize,
    /// Mean squared prediction error ×100.
    pub mspe_x100: f64,
    /// Same for the training-mean predictor.
    pub mean_baseline_mspe_x100: f64,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    model: ModelKind,
    transition: &'a Transition,
    #[serde(skip_serializing_if = "Option::is_none")]
    sflr_coefficients: Option<&'a Vec<Vec<f64>>>,
    /// Row-major 25 × 25 per series.
    #[serde(skip_serializing_if = "Option::is_none")]
    fflr_coefficients: Option<Vec<Vec<Vec<f64>>>>,
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_panel(cfg: &RunConfig, path: &Path) -> CliResult<FunctionalPanel> {
    let grid = Grid::uniform(0.0, 1.0, cfg.grid_points)?;
    afts_core::io::read_panel_path(path, Some(grid)).map_err(|e| match e {
        afts_core::Error::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
        e => CliError::from(e),
    })
}

fn mean_curves(panel: &FunctionalPanel, r: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    let g = panel.grid().len();
    let m = r.len() as f64;
    (0..panel.p())
        .map(|j| {
            let mut acc = vec![0.0; g];
            for t in r.clone() {
                for (a, v) in acc.iter_mut().zip(panel.curve_values(t, j)) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / m).collect()
        })
        .collect()
}

fn subtract(panel: &FunctionalPanel, means: &[Vec<f64>]) -> CliResult<FunctionalPanel> {
    let (n, p, g) = (panel.n(), panel.p(), panel.grid().len());
    if means.len() != p || means.iter().any(|m| m.len() != g) {
        return Err(CliError::Data("centering means do not match the panel".into()));
    }
    let mut data = Vec::with_capacity(n * p * g);
    for t in 0..n {
        for (j, mean) in means.iter().enumerate() {
            data.extend(panel.curve_values(t, j).iter().zip(mean).map(|(v, m)| v - m));
        }
    }
    Ok(FunctionalPanel::new(panel.grid().clone(), n, p, data)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn model_of(command: &str) -> ModelKind {
    match command {
        "fit-sflr" => ModelKind::Sflr,
        "fit-fflr" => ModelKind::Fflr,
        _ => ModelKind::Vfar,
    }
}

pub fn run(command: &str, cfg: &RunConfig) -> CliResult<()> {
    match command {
        "simulate" => run_simulate(cfg),
        "fit-sflr" | "fit-fflr" | "fit-vfar" => run_fit(command, model_of(command), cfg),
        "benchmark" => run_bench(cfg),
        "cidr" => run_cidr(cfg),
        "predict" => run_predict(cfg),
        other => Err(CliError::Config(format!("unknown command {other:?}"))),
    }
}

fn run_simulate(cfg: &RunConfig) -> CliResult<()> {
    let mut out = OutDir::create(&cfg.out)?;
    if cfg.synthetic_prices {
        let prices = synthetic_prices(cfg.n, cfg.p, SYNTHETIC_MINUTES, &cfg.index_ticker, cfg.seed);
        let w = out.create_file("prices.csv", Schema::CsvHeader(PRICE_HEADER.iter().map(|s| s.to_string()).collect()))?;
        prices.write_csv(w)?;
        return out.finish("simulate", cfg);
    }
    let sim_cfg = SimConfig {
        grid_points: cfg.grid_points,
        noise: cfg.noise,
        ..SimConfig::new(cfg.model, cfg.n, cfg.p)
    };
    // same stream as replicate 0 of the benchmark cell
    let mut rng = stream_rng(cfg.seed, replicate_stream(cfg.model, cfg.n, cfg.p, 0));
    let sim = simulate(&sim_cfg, &mut rng)?;
    out.write_panel("panel.bin", &sim.w)?;
    out.write_panel("signal.bin", &sim.x)?;
    match &sim.response {
        Response::Scalar(y) => {
            let w = out.create_file("response.csv", Schema::csv(&RESPONSE_HEADER, &[0, 1]))?;
            write_response_csv(y, w)?;
        }
        Response::Curves(c) => out.write_panel("response.bin", c)?,
        Response::None => {}
    }
    let truth = TruthFile {
        model: cfg.model,
        transition: &sim.transition,
        sflr_coefficients: match &sim.truth {
            Truth::Sflr(b) => Some(b),
            _ => None,
        },
        fflr_coefficients: match &sim.truth {
            Truth::Fflr(b) => Some(
                b.iter()
                    .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
                    .collect(),
            ),
            _ => None,
        },
    };
    out.write_json("truth.json", &truth)?;
    out.finish("simulate", cfg)
}

fn load_response(cfg: &RunConfig, model: ModelKind, n: usize) -> CliResult<Response> {
    let r = match model {
        ModelKind::Vfar => return Ok(Response::None),
        ModelKind::Sflr => Response::Scalar(read_response_csv(cfg.require(&cfg.response, "response")?)?),
        ModelKind::Fflr => Response::Curves(load_panel(cfg, cfg.require(&cfg.response, "response")?)?),
    };
    let m = match &r {
        Response::Scalar(y) => y.len(),
        Response::Curves(c) => c.n(),
        Response::None => n,
    };
    if m != n {
        return Err(CliError::Data(format!("response has {m} observations, panel has {n}")));
    }
    Ok(r)
}

fn center_all(
    w: &FunctionalPanel,
    response: Response,
    train: std::ops::Range<usize>,
) -> CliResult<(FunctionalPanel, Response, Centering)> {
    let x_mean = mean_curves(w, train.clone());
    let wc = subtract(w, &x_mean)?;
    let (rc, y_mean) = match response {
        Response::Scalar(y) => {
            let m = mean(&y[train]);
            (Response::Scalar(y.iter().map(|v| v - m).collect()), vec![m])
        }
        Response::Curves(c) => {
            let m = mean_curves(&c, train);
            let cc = subtract(&c, &m)?;
            (Response::Curves(cc), m.into_iter().next().unwrap_or_default())
        }
        Response::None => (Response::None, Vec::new()),
    };
    Ok((wc, rc, Centering { x_mean, y_mean }))
}

fn fixed_fit(train: &Sample, model: ModelKind, cfg: &RunConfig, gamma: f64) -> CliResult<Fit> {
    let w = &train.w;
    Ok(match (&train.response, model, cfg.method) {
        (Response::Scalar(y), ModelKind::Sflr, Method::Auto) => Fit::Sflr(fit_sflr(w, y, &cfg.fit, gamma)?),
        (Response::Scalar(y), ModelKind::Sflr, Method::Cov) => Fit::Sflr(fit_cov_sflr(w, y, &cfg.fit, gamma)?),
        (Response::Curves(y), ModelKind::Fflr, Method::Auto) => Fit::Fflr(fit_fflr(w, y, &cfg.fit, gamma)?),
        (Response::Curves(y), ModelKind::Fflr, Method::Cov) => Fit::Fflr(fit_cov_fflr(w, y, &cfg.fit, gamma)?),
        (Response::None, ModelKind::Vfar, Method::Auto) => Fit::Vfar(fit_vfar(w, &cfg.fit, &cfg.vfar, &[gamma])?),
        (Response::None, ModelKind::Vfar, Method::Cov) => Fit::Vfar(fit_cov_vfar(w, &cfg.fit, &cfg.vfar, &[gamma])?),
        _ => return Err(CliError::Data(format!("response does not fit a {} model", model.name()))),
    })
}

fn run_fit(command: &str, model: ModelKind, cfg: &RunConfig) -> CliResult<()> {
    let raw = load_panel(cfg, cfg.require(&cfg.panel, "panel")?)?;
    let response = load_response(cfg, model, raw.n())?;
    let split = Split::new(raw.n(), &cfg.split)?;
    let (w, response, centering) = if cfg.center {
        let (w, r, c) = center_all(&raw, response, split.train.clone())?;
        (w, r, Some(c))
    } else {
        (raw, response, None)
    };
    let part = |r: std::ops::Range<usize>| -> CliResult<Sample> {
        Ok(Sample::observed(w.slice_time(r.clone())?, response.slice(r)?))
    };
    let train = part(split.train.clone())?;
    let (fit, selections, gamma) = match cfg.gamma {
        Some(g) => (fixed_fit(&train, model, cfg, g)?, Vec::new(), g),
        None => {
            if split.valid.is_empty() {
                return Err(CliError::Config("validation tuning needs a nonempty validation share (or set gamma)".into()));
            }
            let valid = part(split.valid.clone())?;
            let t = tune(&train, &valid, model, cfg.method, &cfg.fit, &cfg.vfar, &cfg.tune)?;
            let g = t.gamma();
            (t.fit, t.selections, g)
        }
    };

    let mut out = OutDir::create(&cfg.out)?;
    let file = FitFile {
        fit: fit.manifest(),
        split,
        centering,
        gamma,
        selections: selections.iter().map(SelectionRecord::from).collect(),
    };
    out.write_json("fit.json", &file)?;
    if !selections.is_empty() {
        let mut wr = csv::Writer::from_writer(out.create_file("selection.csv", Schema::csv(&SELECTION_HEADER, &[0, 1, 2, 3, 4]))?);
        wr.write_record(SELECTION_HEADER)?;
        for (row, s) in selections.iter().enumerate() {
            for (i, (level, err)) in s.grid.iter().zip(&s.errors).enumerate() {
                wr.write_record([
                    row.to_string(),
                    i.to_string(),
                    level.to_string(),
                    err.to_string(),
                    u8::from(i == s.index).to_string(),
                ])?;
            }
        }
        wr.flush()?;
    }
    if let Fit::Sflr(f) = &fit {
        let mut wr = csv::Writer::from_writer(out.create_file("beta.csv", Schema::csv(&BETA_HEADER, &[0, 1, 2, 3]))?);
        wr.write_record(BETA_HEADER)?;
        for j in 0..f.p() {
            let b = f.beta(j);
            for (k, (u, v)) in f.grid.points().iter().zip(b.values()).enumerate() {
                wr.write_record([j.to_string(), k.to_string(), u.to_string(), v.to_string()])?;
            }
        }
        wr.flush()?;
    }
    out.finish(command, cfg)
}

fn read_fit_file(path: &Path) -> CliResult<FitFile> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// `∫ (a − b)²` under the grid weights.
fn sq_dist(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.weights().iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * (x - y) * (x - y)).sum()
}

fn run_predict(cfg: &RunConfig) -> CliResult<()> {
    let ff = read_fit_file(cfg.require(&cfg.fit_file, "fit-file")?)?;
    let fit = Fit::from_manifest(&ff.fit)?;
    let raw = load_panel(cfg, cfg.require(&cfg.panel, "panel")?)?;
    let split = &ff.split;
    if raw.n() != split.n() {
        return Err(CliError::Data(format!("panel has n = {}, the fit was split on n = {}", raw.n(), split.n())));
    }
    if split.test.is_empty() {
        return Err(CliError::Data("the fit's split has an empty test block".into()));
    }
    let test = split.test.clone();
    let x_mean = match &ff.centering {
        Some(c) => c.x_mean.clone(),
        None => mean_curves(&raw, split.train.clone()),
    };
    let wc = match &ff.centering {
        Some(c) => subtract(&raw, &c.x_mean)?,
        None => raw.clone(),
    };
    let model = ff.fit.model;
    let response = load_response(cfg, model, raw.n())?;
    let mut out = OutDir::create(&cfg.out)?;
    let (mspe, base) = match (&fit, &response) {
        (Fit::Sflr(f), Response::Scalar(y)) => {
            let shift = ff.centering.as_ref().map_or(0.0, |c| c.y_mean[0]);
            let yhat: Vec<f64> = f.predict(&wc.slice_time(test.clone())?)?.iter().map(|v| v + shift).collect();
            let ybar = mean(&y[split.train.clone()]);
            let mut wr = csv::Writer::from_writer(out.create_file("predictions.csv", Schema::csv(&SFLR_PREDICTION_HEADER, &[0, 1, 2]))?);
            wr.write_record(SFLR_PREDICTION_HEADER)?;
            let (mut e, mut b) = (0.0, 0.0);
            for (i, t) in test.clone().enumerate() {
                e += (y[t] - yhat[i]).powi(2);
                b += (y[t] - ybar).powi(2);
                wr.write_record([t.to_string(), y[t].to_string(), yhat[i].to_string()])?;
            }
            wr.flush()?;
            (e / test.len() as f64, b / test.len() as f64)
        }
        (Fit::Fflr(f), Response::Curves(y)) => {
            let pred = f.predict(&wc.slice_time(test.clone())?)?;
            let ybar = mean_curves(y, split.train.clone()).remove(0);
            let shift = ff.centering.as_ref().map_or_else(|| vec![0.0; ybar.len()], |c| c.y_mean.clone());
            let grid = y.grid().clone();
            let mut wr = csv::Writer::from_writer(out.create_file("predictions.csv", Schema::csv(&CURVE_PREDICTION_HEADER, &[0, 1, 2, 3]))?);
            wr.write_record(CURVE_PREDICTION_HEADER)?;
            let (mut e, mut b) = (0.0, 0.0);
            for (i, t) in test.clone().enumerate() {
                let yhat: Vec<f64> = pred.curve_values(i, 0).iter().zip(&shift).map(|(v, s)| v + s).collect();
                let obs = y.curve_values(t, 0);
                let (ei, bi) = (sq_dist(&grid, obs, &yhat), sq_dist(&grid, obs, &ybar));
                e += ei;
                b += bi;
                wr.write_record([t.to_string(), "0".into(), ei.to_string(), bi.to_string()])?;
            }
            wr.flush()?;
            (e / test.len() as f64, b / test.len() as f64)
        }
        (Fit::Vfar(f), Response::None) => {
            let h = f.order();
            if test.start < h {
                return Err(CliError::Data(format!("the test block starts at {}, before H = {h} lags are available", test.start)));
            }
            let scores = f.project(&wc.slice_time(test.start - h..test.end)?)?;
            let pred = f.predict_in_sample(&scores)?;
            let grid = raw.grid().clone();
            let g = grid.len();
            let mut wr = csv::Writer::from_writer(out.create_file("predictions.csv", Schema::csv(&CURVE_PREDICTION_HEADER, &[0, 1, 2, 3]))?);
            wr.write_record(CURVE_PREDICTION_HEADER)?;
            let (mut e, mut b) = (0.0, 0.0);
            let offsets = scores.offsets().to_vec();
            for (r, t) in test.clone().enumerate() {
                for j in 0..raw.p() {
                    let psi = f.bases[j].matrix(g);
                    let coef = pred.view((r, offsets[j]), (1, offsets[j + 1] - offsets[j])).transpose();
                    let centered = &psi * coef;
                    let shift = if ff.centering.is_some() { &x_mean[j][..] } else { &[][..] };
                    let what: Vec<f64> = (0..g).map(|k| centered[k] + shift.get(k).copied().unwrap_or(0.0)).collect();
                    let obs = raw.curve_values(t, j);
                    let (ei, bi) = (sq_dist(&grid, obs, &what), sq_dist(&grid, obs, &x_mean[j]));
                    e += ei;
                    b += bi;
                    wr.write_record([t.to_string(), j.to_string(), ei.to_string(), bi.to_string()])?;
                }
            }
            wr.flush()?;
            let m = (test.len() * raw.p()) as f64;
            (e / m, b / m)
        }
        _ => return Err(CliError::Data("response does not match the fitted model".into())),
    };
    let metrics = PredictionMetrics {
        model,
        method: ff.fit.method,
        n_test: test.len(),
        test_start: test.start,
        test_end: test.end,
        mspe_x100: 100.0 * mspe,
        mean_baseline_mspe_x100: 100.0 * base,
    };
    out.write_json("metrics.json", &metrics)?;
    out.finish("predict", cfg)
}

fn run_cidr(cfg: &RunConfig) -> CliResult<()> {
    let prices = PricePanel::read_csv(open(cfg.require(&cfg.prices, "prices")?)?)?;
    let idx = prices.ticker_index(&cfg.index_ticker)?;
    let stocks: Vec<usize> = (0..prices.p()).filter(|&j| j != idx).collect();
    if stocks.is_empty() {
        return Err(CliError::Data("the price file holds only the index".into()));
    }
    let n_cut = cfg.n_cut.unwrap_or(prices.minutes - 1);
    let panel = cidr_transform(&prices, &stocks, n_cut)?;
    let y = intraday_returns(&prices, idx)?;
    let mut out = OutDir::create(&cfg.out)?;
    out.write_panel("panel.bin", &panel)?;
    write_response_csv(&y, out.create_file("response.csv", Schema::csv(&RESPONSE_HEADER, &[0, 1]))?)?;
    let mut wr = csv::Writer::from_writer(out.create_file("tickers.csv", Schema::csv(&["j", "ticker"], &[0]))?);
    wr.write_record(["j", "ticker"])?;
    for (j, &s) in stocks.iter().enumerate() {
        wr.write_record([j.to_string(), prices.tickers[s].clone()])?;
    }
    wr.flush()?;
    let mut wr = csv::Writer::from_writer(out.create_file("dates.csv", Schema::csv(&["t", "date"], &[0]))?);
    wr.write_record(["t", "date"])?;
    for (t, d) in prices.dates.iter().enumerate() {
        wr.write_record([t.to_string(), d.clone()])?;
    }
    wr.flush()?;
    out.finish("cidr", cfg)
}

fn run_bench(cfg: &RunConfig) -> CliResult<()> {
    let bc = cfg.benchmark();
    let report = run_benchmark(&bc)?;
    let mut out = OutDir::create(&cfg.out)?;
    report.write_results_csv(out.create_file("results.csv", Schema::csv(&RESULTS_HEADER, &[2, 3, 4, 5, 6, 7]))?)?;
    report.write_summary_csv(out.create_file("summary.csv", Schema::csv(&SUMMARY_HEADER, &[2, 3, 4, 5, 6, 7, 8, 9, 10]))?)?;
    report.write_support_csv(out.create_file("support.csv", Schema::csv(&SUPPORT_HEADER, &[2, 3, 4, 5]))?)?;
    let mut wr = csv::Writer::from_writer(out.create_file("support_rate.csv", Schema::csv(&SUPPORT_RATE_HEADER, &[2, 3, 4, 5, 6]))?);
    wr.write_record(SUPPORT_RATE_HEADER)?;
    for s in report.summary.iter().filter(|s| s.model == ModelKind::Sflr) {
        let f1: Vec<f64> = report
            .records
            .iter()
            .filter(|r| r.model == s.model && r.method == s.method && r.n == s.n && r.p == s.p)
            .filter_map(|r| r.f1)
            .collect();
        let rate = f1.iter().filter(|&&v| v >= 0.8).count() as f64 / s.replicates as f64;
        wr.write_record([
            s.model.name().to_string(),
            s.method.name().to_string(),
            s.n.to_string(),
            s.p.to_string(),
            s.replicates.to_string(),
            rate.to_string(),
            mean(&f1).to_string(),
        ])?;
    }
    wr.flush()?;
    let failed: Vec<String> = report
        .records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} {} n={} p={} rep={}: {e}", r.model.name(), r.method.name(), r.n, r.p, r.replicate)))
        .collect();
    if !failed.is_empty() {
        let mut w = out.create_file("failures.txt", Schema::Text)?;
        for line in &failed {
            writeln!(w, "{line}")?;
        }
        w.flush()?;
    }
    out.finish("benchmark", cfg)
}
