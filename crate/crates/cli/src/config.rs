//! Run configuration: one TOML or JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use afts_core::sim::tune::TuneOptions;
use afts_core::sim::BenchmarkConfig;
use afts_core::{FitConfig, Method, ModelKind, VfarConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Chronological train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRule {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule {
            train: 171.0,
            valid: 40.0,
            test: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub noise: bool,
    /// `simulate`: write synthetic minute prices instead of a model panel.
    pub synthetic_prices: bool,
    /// Fixed regularization level; validation tuning when absent.
    pub gamma: Option<f64>,
    pub tune: TuneOptions,
    pub fit: FitConfig,
    pub vfar: VfarConfig,
    pub split: SplitRule,
    /// Subtract training means before fitting.
    pub center: bool,
    pub ns: Vec<usize>,
    pub ps: Vec<usize>,
    pub models: Vec<ModelKind>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub panel: Option<PathBuf>,
    pub response: Option<PathBuf>,
    pub fit_file: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    /// Last minute kept by `cidr`.
    pub n_cut: Option<usize>,
    pub index_ticker: String,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        RunConfig {
            model: ModelKind::Sflr,
            method: Method::Auto,
            n: 100,
            p: 40,
            seed: 1,
            grid_points: b.grid_points,
            noise: true,
            synthetic_prices: false,
            gamma: None,
            tune: TuneOptions::default(),
            fit: FitConfig::default(),
            vfar: VfarConfig::default(),
            split: SplitRule::default(),
            center: true,
            ns: b.ns,
            ps: b.ps,
            models: b.models,
            methods: b.methods,
            replicates: b.replicates,
            panel: None,
            response: None,
            fit_file: None,
            prices: None,
            n_cut: None,
            index_ticker: "INDEX".into(),
            out: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line; each replaces the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<usize>,
    pub lag_budget: Option<usize>,
    pub order: Option<usize>,
    pub threshold: Option<f64>,
    pub method: Option<Method>,
    pub model: Option<ModelKind>,
    pub replicates: Option<usize>,
    pub grid_points: Option<usize>,
    pub no_noise: bool,
    pub synthetic_prices: bool,
    pub panel: Option<PathBuf>,
    pub response: Option<PathBuf>,
    pub fit_file: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub n_cut: Option<usize>,
    pub index_ticker: Option<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
            Some("toml") => toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))),
            _ => Err(CliError::Config(format!("{}: config must be .toml or .json", path.display()))),
        }
    }

    pub fn load(path: Option<&Path>, o: &Overrides) -> CliResult<RunConfig> {
        let mut c = match path {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        c.apply(o);
        c.validate()?;
        Ok(c)
    }

    /// `--n`, `--p`, `--model` and `--method` also narrow the benchmark matrix.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.n {
            self.n = n;
            self.ns = vec![n];
        }
        if let Some(p) = o.p {
            self.p = p;
            self.ps = vec![p];
        }
        if let Some(m) = o.model {
            self.model = m;
            self.models = vec![m];
        }
        if let Some(m) = o.method {
            self.method = m;
            self.methods = vec![m];
        }
        macro_rules! set {
            ($field:expr, $val:expr) => {
                if let Some(v) = $val.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed, o.seed);
        set!(self.tune.grid_size, o.gamma_grid);
        set!(self.fit.basis.lag_budget, o.lag_budget);
        set!(self.vfar.order, o.order);
        set!(self.fit.basis.threshold, o.threshold);
        set!(self.replicates, o.replicates);
        set!(self.grid_points, o.grid_points);
        set!(self.index_ticker, o.index_ticker);
        set!(self.out, o.out);
        if o.gamma.is_some() {
            self.gamma = o.gamma;
        }
        if o.no_noise {
            self.noise = false;
        }
        if o.synthetic_prices {
            self.synthetic_prices = true;
        }
        for (field, val) in [
            (&mut self.panel, &o.panel),
            (&mut self.response, &o.response),
            (&mut self.fit_file, &o.fit_file),
            (&mut self.prices, &o.prices),
        ] {
            if val.is_some() {
                *field = val.clone();
            }
        }
        if o.n_cut.is_some() {
            self.n_cut = o.n_cut;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n < 2 || self.p == 0 {
            return bad(format!("need n >= 2 and p >= 1, got n = {}, p = {}", self.n, self.p));
        }
        if self.grid_points < 2 {
            return bad(format!("grid_points must be at least 2, got {}", self.grid_points));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return bad(format!("gamma must be finite and nonnegative, got {g}"));
            }
        }
        let s = self.split;
        if [s.train, s.valid, s.test].iter().any(|v| !(*v >= 0.0 && v.is_finite())) || s.train <= 0.0 {
            return bad(format!("split proportions must be nonnegative with train > 0, got {s:?}"));
        }
        if self.vfar.order == 0 {
            return bad("VFAR order H must be at least 1".into());
        }
        if self.index_ticker.is_empty() {
            return bad("index_ticker must not be empty".into());
        }
        self.benchmark().validate()?;
        Ok(())
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            ns: self.ns.clone(),
            ps: self.ps.clone(),
            models: self.models.clone(),
            methods: self.methods.clone(),
            replicates: self.replicates,
            seed: self.seed,
            grid_points: self.grid_points,
            noise: self.noise,
            fit: self.fit,
            vfar: self.vfar,
            tune: self.tune,
        }
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> CliResult<&'a PathBuf> {
        field.as_ref().ok_or_else(|| CliError::Config(format!("missing input: --{name} (or `{}` in the config file)", name.replace('-', "_"))))
    }
}
