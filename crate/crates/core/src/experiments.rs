//! Config-driven experiment runner: the L63 comparison sweeps, the L96
//! multiscale closure sweep, the embedded-manifold demo, the learning-theory
//! scaling study and the partially observed L63 reservoir closure.
//!
//! A run is a list of independent `(cell, seed)` jobs executed on a bounded
//! worker pool and merged in deterministic order. Results are tidy
//! long-format rows; a failing job is recorded with its error and the run
//! carries on.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::dynamics::{
    nominal_rhs, Embedded4d, EmbeddedVariant, FnField, L63Params, L96Params, Lorenz63, Lorenz96Multiscale,
    Lorenz96Slow, ModelError, ModelErrorSpec, SharedField, VectorField,
};
use crate::error::{Error, Result};
use crate::features::sample_feature_map;
use crate::integrate::{integrate_partial, integrate_uniform, sample_attractor_ics, uniform_grid, IntegratorConfig, PartialTrajectory};
use crate::markovian::{
    fit_from_dataset, residual_dataset, tune_hyperparameters, ClosureLayout, HybridModel, Mode, SearchBox, TuningSetup,
};
use crate::metrics::{kde, kl_divergence, marginal_acf_error, marginal_kl, validity_time_partial, Bandwidth, GridSpec};
use crate::reservoir::{forecast_with_warmup, sample_reservoir, ReservoirConfig};
use crate::rng::derive_seed;
use crate::theory::{scaling_experiment, ScalingProblem, ScalingReport};
use crate::trajectory::Trajectory;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    EpsSweep,
    DataSweep,
    DimSweep,
    DtSweep,
    L96Sweep,
    ManifoldDemo,
    TheoryScaling,
    RcPartial,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::EpsSweep,
        Experiment::DataSweep,
        Experiment::DimSweep,
        Experiment::DtSweep,
        Experiment::L96Sweep,
        Experiment::ManifoldDemo,
        Experiment::TheoryScaling,
        Experiment::RcPartial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::EpsSweep => "eps-sweep",
            Experiment::DataSweep => "data-sweep",
            Experiment::DimSweep => "dim-sweep",
            Experiment::DtSweep => "dt-sweep",
            Experiment::L96Sweep => "l96-sweep",
            Experiment::ManifoldDemo => "manifold-demo",
            Experiment::TheoryScaling => "theory-scaling",
            Experiment::RcPartial => "rc-partial",
        }
    }

    /// The protocol field a sweep varies, if this is a sweep.
    pub fn sweep_param(self) -> Option<&'static str> {
        match self {
            Experiment::EpsSweep | Experiment::L96Sweep => Some("eps"),
            Experiment::DataSweep => Some("train_horizon"),
            Experiment::DimSweep => Some("n_features"),
            Experiment::DtSweep => Some("dt"),
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment '{s}'")))
    }
}

/// The model variants compared in every sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Nominal,
    DataOnlyCt,
    DataOnlyDt,
    HybridCt,
    HybridDt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Nominal,
        Variant::DataOnlyCt,
        Variant::DataOnlyDt,
        Variant::HybridCt,
        Variant::HybridDt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nominal => "nominal",
            Variant::DataOnlyCt => "data-only-ct",
            Variant::DataOnlyDt => "data-only-dt",
            Variant::HybridCt => "hybrid-ct",
            Variant::HybridDt => "hybrid-dt",
        }
    }

    fn uses_nominal(self) -> bool {
        matches!(self, Variant::Nominal | Variant::HybridCt | Variant::HybridDt)
    }

    fn is_discrete(self) -> bool {
        matches!(self, Variant::DataOnlyDt | Variant::HybridDt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorFamily {
    Parametric,
    Gp,
}

/// Data, model and evaluation settings shared by the sweep experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    /// Model-error magnitude (L63) or scale separation (L96).
    pub eps: f64,
    pub error_family: ErrorFamily,
    pub gp_lengthscale: f64,
    pub gp_fourier_terms: usize,
    /// Sampling step of all data and forecasts.
    pub dt: f64,
    pub train_horizon: f64,
    pub val_horizon: f64,
    pub test_horizon: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_features: usize,
    /// Hyperparameters used when `tune_budget = 0`.
    pub omega: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tune_budget: usize,
    pub search: SearchBox,
    pub spinup: f64,
    /// Length of the free runs compared in distribution (0 disables).
    pub stats_horizon: f64,
    /// Autocorrelation window in time units.
    pub acf_max_lag: f64,
    pub variants: Vec<Variant>,
    pub truth_integrator: IntegratorConfig,
    pub model_integrator: IntegratorConfig,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            eps: 0.05,
            error_family: ErrorFamily::Parametric,
            gp_lengthscale: 10.0,
            gp_fourier_terms: 256,
            dt: 0.001,
            train_horizon: 20.0,
            val_horizon: 10.0,
            test_horizon: 10.0,
            n_train: 1,
            n_val: 1,
            n_test: 5,
            n_features: 100,
            omega: 0.05,
            beta: 1.0,
            lambda: 1e-6,
            tune_budget: 0,
            search: SearchBox::default(),
            spinup: 20.0,
            stats_horizon: 0.0,
            acf_max_lag: 5.0,
            variants: Variant::ALL.to_vec(),
            truth_integrator: IntegratorConfig::truth(),
            model_integrator: IntegratorConfig::model(),
        }
    }
}

/// Settings of the embedded 4-D manifold demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    /// `(u_x, u_y, u_z)` at `t = 0`; `m(0)` is set on the manifold.
    pub init: [f64; 3],
    pub horizon_a: f64,
    pub horizon_b: f64,
    pub dt: f64,
    /// Offset added to `m(0)` in the perturbed variant-A run.
    pub perturb: f64,
    /// Initial transient excluded from the densities.
    pub burn_in: f64,
    /// Window (time units) of the running standard deviation of `u_x`.
    pub collapse_window: f64,
    pub collapse_std: f64,
    pub integrator_a: IntegratorConfig,
    /// Variant B is integrated with deliberately loose tolerances: the
    /// collapse it demonstrates is caused by the integrator.
    pub integrator_b: IntegratorConfig,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            init: [1.0, 3.0, 1.0],
            horizon_a: 20000.0,
            horizon_b: 3000.0,
            dt: 0.01,
            perturb: 1.0,
            burn_in: 10.0,
            collapse_window: 50.0,
            collapse_std: 1e-3,
            integrator_a: IntegratorConfig::dopri(1e-9, 1e-9, 0.01),
            integrator_b: IntegratorConfig::dopri(1e-3, 1e-6, 0.1),
        }
    }
}

/// Settings of the partially observed L63 reservoir experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcConfig {
    pub d_r: usize,
    pub spectral_scale: f64,
    pub leak: f64,
    pub input_scale: f64,
    pub bias_scale: f64,
    pub lambda: f64,
    pub dt: f64,
    pub train_horizon: f64,
    /// Prefix excluded from the readout fit.
    pub t_warm: f64,
    pub n_test: usize,
    /// Synchronization window before each forecast.
    pub tau1: f64,
    /// Free-run forecast length.
    pub tau2: f64,
    /// 3DVAR gain on the observed component during warm-up.
    pub gain: f64,
    pub spinup: f64,
    pub integrator: IntegratorConfig,
}

impl Default for RcConfig {
    fn default() -> Self {
        let r = ReservoirConfig::partial_l63(0);
        Self {
            d_r: r.d_r,
            spectral_scale: r.spectral_scale,
            leak: r.leak,
            input_scale: r.input_scale,
            bias_scale: r.bias_scale,
            lambda: 1e-8,
            dt: 0.01,
            train_horizon: 100.0,
            t_warm: 1.0,
            n_test: 10,
            tau1: 5.0,
            tau2: 5.0,
            gain: 0.5,
            spinup: 20.0,
            integrator: IntegratorConfig::model(),
        }
    }
}

/// A fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub full_scale: bool,
    /// Validity threshold relative to the mean state norm.
    pub gamma: f64,
    /// Values of the swept protocol field (see [`Experiment::sweep_param`]).
    pub grid: Vec<f64>,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub l63: L63Params,
    pub l96: L96Params,
    pub protocol: Protocol,
    pub manifold: ManifoldConfig,
    pub theory: ScalingProblem,
    pub reservoir: RcConfig,
}

const EPS_GRID: [f64; 4] = [0.01, 0.05, 0.2, 1.0];

impl ExperimentConfig {
    /// Desk-scale defaults (or full-scale with `full_scale`).
    pub fn preset(experiment: Experiment, full_scale: bool) -> Self {
        let mut c = Self {
            experiment,
            seeds: vec![0, 1, 2],
            full_scale,
            gamma: crate::metrics::DEFAULT_GAMMA,
            grid: Vec::new(),
            workers: 0,
            output: None,
            l63: L63Params::default(),
            l96: L96Params::default(),
            protocol: Protocol::default(),
            manifold: ManifoldConfig::default(),
            theory: ScalingProblem::default(),
            reservoir: RcConfig::default(),
        };
        let p = &mut c.protocol;
        if full_scale {
            c.seeds = (0..5).collect();
            p.n_train = 5;
            p.n_val = 7;
            p.n_test = 10;
            p.tune_budget = 30;
        }
        match experiment {
            Experiment::EpsSweep => {
                c.grid = EPS_GRID.to_vec();
                p.dt = 0.001;
                p.n_features = if full_scale { 200 } else { 100 };
                p.train_horizon = if full_scale { 100.0 } else { 20.0 };
            }
            Experiment::DataSweep => {
                p.eps = 0.2;
                p.dt = 0.01;
                p.n_features = if full_scale { 2000 } else { 200 };
                c.grid = if full_scale {
                    vec![1.0, 10.0, 100.0, 1000.0]
                } else {
                    vec![2.0, 5.0, 20.0, 50.0]
                };
            }
            Experiment::DimSweep => {
                p.eps = 0.05;
                p.dt = 0.001;
                p.train_horizon = if full_scale { 100.0 } else { 20.0 };
                c.grid = if full_scale {
                    vec![10.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
                } else {
                    vec![10.0, 50.0, 100.0, 200.0]
                };
            }
            Experiment::DtSweep => {
                p.eps = 0.05;
                p.n_features = 200;
                p.train_horizon = if full_scale { 1000.0 } else { 100.0 };
                c.grid = if full_scale {
                    vec![0.001, 0.005, 0.01, 0.05, 0.1]
                } else {
                    vec![0.001, 0.01, 0.1]
                };
            }
            Experiment::L96Sweep => {
                c.grid = vec![2f64.powi(-7), 2f64.powi(-5), 2f64.powi(-3), 2f64.powi(-1)];
                p.dt = 0.005;
                p.train_horizon = if full_scale { 100.0 } else { 20.0 };
                p.n_features = 200;
                p.omega = 0.2;
                p.beta = 1.0;
                p.lambda = 1e-5;
                p.stats_horizon = if full_scale { 200.0 } else { 50.0 };
                p.acf_max_lag = 5.0;
                p.spinup = 10.0;
                p.variants = vec![Variant::Nominal, Variant::HybridCt, Variant::HybridDt];
            }
            Experiment::ManifoldDemo => {
                c.seeds = vec![0];
            }
            Experiment::TheoryScaling => {
                c.seeds = vec![0];
                if full_scale {
                    c.theory.t_grid = (4..=10).map(|k| 2f64.powi(k)).collect();
                }
            }
            Experiment::RcPartial => {
                c.seeds = vec![0];
            }
        }
        c
    }

    /// Resolves a TOML document against the preset for `experiment`:
    /// keys in the file override the preset, unknown keys are errors, and
    /// `seed` (if given) replaces the seed list.
    pub fn from_toml(experiment: Experiment, text: &str, full_scale: bool, seed: Option<u64>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        if let Some(v) = user.get("experiment") {
            let named = v
                .as_str()
                .ok_or_else(|| Error::Config("'experiment' must be a string".into()))?;
            if named != experiment.name() {
                return Err(Error::Config(format!(
                    "config names experiment '{named}' but '{experiment}' was requested"
                )));
            }
        }
        let full = full_scale || user.get("full_scale").and_then(|v| v.as_bool()).unwrap_or(false);
        let preset = Self::preset(experiment, full);
        let mut merged = toml::Table::try_from(&preset).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, user);
        merged.insert("full_scale".into(), toml::Value::Boolean(full));
        let mut cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if let Some(s) = seed {
            cfg.seeds = vec![s];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(experiment: Experiment, path: &Path, full_scale: bool, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(experiment, &text, full_scale, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0".into());
        }
        let p = &self.protocol;
        if let Some(param) = self.experiment.sweep_param() {
            if self.grid.is_empty() {
                return bad("grid must be non-empty for a sweep".into());
            }
            for &g in &self.grid {
                let ok = match param {
                    "n_features" => g >= 1.0 && g.fract() == 0.0,
                    _ => g > 0.0 && g.is_finite(),
                };
                if !ok {
                    return bad(format!("grid value {g} is not a valid {param}"));
                }
            }
            for (name, n) in [("n_train", p.n_train), ("n_test", p.n_test), ("n_features", p.n_features)] {
                if n == 0 {
                    return bad(format!("protocol.{name} must be >= 1"));
                }
            }
            if p.tune_budget > 0 && p.n_val == 0 {
                return bad("protocol.n_val must be >= 1 when tuning".into());
            }
            for (name, v) in [
                ("dt", p.dt),
                ("train_horizon", p.train_horizon),
                ("test_horizon", p.test_horizon),
                ("eps", p.eps),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("protocol.{name} must be > 0"));
                }
            }
            if p.tune_budget > 0 && !(p.val_horizon > 0.0) {
                return bad("protocol.val_horizon must be > 0 when tuning".into());
            }
            if p.variants.is_empty() {
                return bad("protocol.variants must be non-empty".into());
            }
            p.truth_integrator.validate()?;
            p.model_integrator.validate()?;
        }
        match self.experiment {
            Experiment::L96Sweep => self.l96.validate().map_err(|e| Error::Config(e.to_string()))?,
            Experiment::ManifoldDemo => {
                let m = &self.manifold;
                if !(m.dt > 0.0 && m.horizon_a > m.burn_in && m.horizon_b > 0.0 && m.collapse_window > 0.0) {
                    return bad("manifold horizons, dt and window must be positive".into());
                }
            }
            Experiment::TheoryScaling => {
                let t = &self.theory;
                if t.t_grid.is_empty() || t.n_seeds == 0 || t.p == 0 || t.stride == 0 {
                    return bad("theory t_grid, n_seeds, p and stride must be non-empty / >= 1".into());
                }
            }
            Experiment::RcPartial => {
                let r = &self.reservoir;
                if r.n_test == 0 || r.d_r == 0 {
                    return bad("reservoir.n_test and reservoir.d_r must be >= 1".into());
                }
                if !(r.dt > 0.0 && r.train_horizon > r.t_warm && r.tau2 > 0.0 && r.tau1 >= 0.0) {
                    return bad("reservoir horizons must be positive with train_horizon > t_warm".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of [`Self::to_toml`], hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Results

/// One long-format result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub cell: usize,
    pub param: String,
    pub param_value: f64,
    pub variant: String,
    pub seed: u64,
    /// Training replicate (or window index for the theory study).
    pub replicate: usize,
    /// Test segment, when the metric is per segment.
    pub segment: Option<usize>,
    pub metric: String,
    pub value: f64,
}

/// The outcome of one `(cell, seed)` job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: usize,
    pub param: String,
    pub param_value: f64,
    pub seed: u64,
    /// `None` on success.
    pub error: Option<String>,
    pub rows: Vec<ResultRow>,
    /// Experiment-specific extras (scaling fit, manifold diagnostics, ...).
    pub extra: serde_json::Value,
}

impl CellRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub experiment: Experiment,
    pub cells: Vec<CellRecord>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.failed()).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.cells.iter().flat_map(|c| c.rows.iter())
    }

    /// Values of `metric` for `variant`, optionally restricted to one cell.
    pub fn values(&self, cell: Option<usize>, variant: &str, metric: &str) -> Vec<f64> {
        self.rows()
            .filter(|r| cell.is_none_or(|c| r.cell == c) && r.variant == variant && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// Median of [`Self::values`] (NaN when empty).
    pub fn median(&self, cell: Option<usize>, variant: &str, metric: &str) -> f64 {
        median(&self.values(cell, variant, metric))
    }

    /// Per-(cell, variant, metric) medians plus failures and extras.
    pub fn summary(&self) -> serde_json::Value {
        let mut keys: Vec<(usize, String, f64, String, String)> = Vec::new();
        for r in self.rows() {
            let k = (r.cell, r.param.clone(), r.param_value, r.variant.clone(), r.metric.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let medians: Vec<serde_json::Value> = keys
            .iter()
            .map(|(cell, param, value, variant, metric)| {
                let v = self.values(Some(*cell), variant, metric);
                serde_json::json!({
                    "cell": cell,
                    "param": param,
                    "param_value": value,
                    "variant": variant,
                    "metric": metric,
                    "median": finite_or_null(median(&v)),
                    "n": v.len(),
                })
            })
            .collect();
        let failures: Vec<serde_json::Value> = self
            .cells
            .iter()
            .filter(|c| c.failed())
            .map(|c| serde_json::json!({"cell": c.cell, "seed": c.seed, "error": c.error}))
            .collect();
        let extras: Vec<serde_json::Value> = self
            .cells
            .iter()
            .filter(|c| !c.extra.is_null())
            .map(|c| serde_json::json!({"cell": c.cell, "seed": c.seed, "param_value": c.param_value, "extra": c.extra}))
            .collect();
        serde_json::json!({
            "experiment": self.experiment.name(),
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "wall_time_s": self.wall_time_s,
            "n_jobs": self.cells.len(),
            "n_failed": self.n_failed(),
            "failures": failures,
            "medians": medians,
            "extras": extras,
        })
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// Median ignoring NaNs (infinities are kept); NaN when nothing remains.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct RowSink<'a> {
    experiment: &'a str,
    cell: usize,
    param: &'a str,
    param_value: f64,
    seed: u64,
    rows: Vec<ResultRow>,
}

impl RowSink<'_> {
    fn push(&mut self, variant: &str, replicate: usize, segment: Option<usize>, metric: &str, value: f64) {
        self.rows.push(ResultRow {
            experiment: self.experiment.to_string(),
            cell: self.cell,
            param: self.param.to_string(),
            param_value: self.param_value,
            variant: variant.to_string(),
            seed: self.seed,
            replicate,
            segment,
            metric: metric.to_string(),
            value,
        });
    }
}

// ---------------------------------------------------------------------------
// Running

struct Job {
    cell: usize,
    param: String,
    param_value: f64,
    seed: u64,
}

fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mk = |cell, param: &str, param_value, seed| Job {
        cell,
        param: param.to_string(),
        param_value,
        seed,
    };
    match cfg.experiment {
        Experiment::ManifoldDemo => vec![
            mk(0, "perturb", 0.0, cfg.seeds[0]),
            mk(1, "perturb", cfg.manifold.perturb, cfg.seeds[0]),
            mk(2, "variant_b", 0.0, cfg.seeds[0]),
        ],
        Experiment::TheoryScaling => cfg.seeds.iter().map(|&s| mk(0, "p", cfg.theory.p as f64, s)).collect(),
        Experiment::RcPartial => cfg
            .seeds
            .iter()
            .map(|&s| mk(0, "d_r", cfg.reservoir.d_r as f64, s))
            .collect(),
        e => {
            let param = e.sweep_param().unwrap_or("cell");
            cfg.grid
                .iter()
                .enumerate()
                .flat_map(|(i, &g)| cfg.seeds.iter().map(move |&s| (i, g, s)))
                .map(|(i, g, s)| mk(i, param, g, s))
                .collect()
        }
    }
}

/// Runs every `(cell, seed)` job of `cfg`; failures are recorded per job.
pub fn run(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let config_hash = cfg.hash()?;
    let jobs = jobs(cfg);
    let exec = || -> Vec<CellRecord> { jobs.par_iter().map(|j| run_job(cfg, j)).collect() };
    let cells = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(exec)
    } else {
        exec()
    };
    Ok(RunRecord {
        run_id: format!("{}-{}", cfg.experiment.name(), &config_hash[..12]),
        config_hash,
        experiment: cfg.experiment,
        cells,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn run_job(cfg: &ExperimentConfig, job: &Job) -> CellRecord {
    let mut sink = RowSink {
        experiment: cfg.experiment.name(),
        cell: job.cell,
        param: &job.param,
        param_value: job.param_value,
        seed: job.seed,
        rows: Vec::new(),
    };
    let outcome = match cfg.experiment {
        Experiment::EpsSweep | Experiment::DataSweep | Experiment::DimSweep | Experiment::DtSweep => {
            protocol_for(cfg, job.param_value).and_then(|p| l63_cell(cfg, &p, job.seed, &mut sink))
        }
        Experiment::L96Sweep => protocol_for(cfg, job.param_value).and_then(|p| l96_cell(cfg, &p, job.seed, &mut sink)),
        Experiment::ManifoldDemo => manifold_cell(cfg, job.cell, &mut sink),
        Experiment::TheoryScaling => theory_cell(cfg, job.seed, &mut sink),
        Experiment::RcPartial => rc_cell(cfg, job.seed, &mut sink),
    };
    let (error, extra) = match outcome {
        Ok(extra) => (None, extra),
        Err(e) => (Some(e.to_string()), serde_json::Value::Null),
    };
    CellRecord {
        cell: job.cell,
        param: job.param.clone(),
        param_value: job.param_value,
        seed: job.seed,
        error,
        rows: if extra.is_null() && sink.rows.is_empty() { Vec::new() } else { sink.rows },
        extra,
    }
}

/// The protocol with the swept field set to `value`.
fn protocol_for(cfg: &ExperimentConfig, value: f64) -> Result<Protocol> {
    let mut p = cfg.protocol.clone();
    match cfg.experiment.sweep_param() {
        Some("eps") => p.eps = value,
        Some("train_horizon") => p.train_horizon = value,
        Some("n_features") => p.n_features = value as usize,
        Some("dt") => p.dt = value,
        _ => return Err(Error::invalid("not a sweep experiment")),
    }
    Ok(p)
}

/// Stream indices for [`derive_seed`] so that each ingredient of a job
/// draws from its own sequence.
mod salt {
    pub const ICS: u64 = 11;
    pub const FEATURES: u64 = 12;
    pub const TUNING: u64 = 13;
    pub const GP: u64 = 14;
    pub const RESERVOIR: u64 = 15;
}

/// Truth trajectories for one seed: training, validation, test segments,
/// and a long statistics run. ICs depend on the seed only, so cells of a
/// sweep are compared on identical data.
struct Dataset {
    train: Vec<Trajectory>,
    val: Vec<Trajectory>,
    test: Vec<Trajectory>,
    stats: Option<Trajectory>,
}

fn generate<F: VectorField + ?Sized>(
    truth: &F,
    p: &Protocol,
    seed: u64,
    bounds: &[(f64, f64)],
    observe: &(dyn Fn(Trajectory) -> Result<Trajectory> + Sync),
) -> Result<Dataset> {
    let n_val = if p.tune_budget > 0 { p.n_val } else { 0 };
    let n_stats = usize::from(p.stats_horizon > 0.0);
    let n = p.n_train + n_val + p.n_test + n_stats;
    let ics = sample_attractor_ics(truth, n, p.spinup, bounds, derive_seed(seed, salt::ICS), &p.truth_integrator)?;
    let run = |x0: &Vec<f64>, horizon: f64| observe(integrate_uniform(truth, x0, horizon, p.dt, &p.truth_integrator)?);
    let (train_ics, rest) = ics.split_at(p.n_train);
    let (val_ics, rest) = rest.split_at(n_val);
    let (test_ics, stats_ics) = rest.split_at(p.n_test);
    Ok(Dataset {
        train: train_ics.par_iter().map(|x| run(x, p.train_horizon)).collect::<Result<_>>()?,
        val: val_ics.par_iter().map(|x| run(x, p.val_horizon)).collect::<Result<_>>()?,
        test: test_ics.par_iter().map(|x| run(x, p.test_horizon)).collect::<Result<_>>()?,
        stats: stats_ics.first().map(|x| run(x, p.stats_horizon)).transpose()?,
    })
}

/// How a fitted variant's closure is laid out for a given system.
struct SystemSpec {
    nominal: SharedField,
    hybrid_layout: ClosureLayout,
}

/// Per-fit outcome: variant, replicate, `[omega, beta, lambda, objective]`,
/// per-segment validity times and optional `(KL, ACF error)`.
type FitOutcome = (Variant, usize, [f64; 4], Vec<f64>, Option<(f64, f64)>);

/// Fits `variant` on one training trajectory (tuning if requested) and
/// reports its hyperparameters.
#[allow(clippy::too_many_arguments)]
fn fit_variant(
    variant: Variant,
    train: &Trajectory,
    val: &[Trajectory],
    sys: &SystemSpec,
    p: &Protocol,
    seed: u64,
    replicate: usize,
    norm_scale: f64,
    gamma: f64,
) -> Result<(HybridModel, [f64; 4])> {
    let mode = if variant.is_discrete() {
        Mode::DiscreteTime { dt: p.dt }
    } else {
        Mode::ContinuousTime
    };
    let nominal = variant.uses_nominal().then(|| sys.nominal.clone());
    if variant == Variant::Nominal {
        let m = HybridModel::nominal_only(Mode::ContinuousTime, sys.nominal.clone(), p.model_integrator)?;
        return Ok((m, [0.0, 0.0, 0.0, 0.0]));
    }
    let layout = if variant.uses_nominal() {
        sys.hybrid_layout
    } else {
        ClosureLayout::Vector
    };
    let d_in = match layout {
        ClosureLayout::Vector => train.dim(),
        ClosureLayout::SharedScalar => 1,
    };
    let feature_seed = derive_seed(derive_seed(seed, salt::FEATURES), replicate as u64);
    let (omega, beta, lambda) = if p.tune_budget > 0 {
        let setup = TuningSetup {
            nominal: nominal.clone(),
            n_features: p.n_features,
            feature_seed,
            layout,
            integrator: p.model_integrator,
            gamma,
            norm_scale,
            seed: derive_seed(derive_seed(seed, salt::TUNING), replicate as u64),
        };
        let report = tune_hyperparameters(train, val, p.tune_budget, mode, &p.search, &setup)?;
        (report.best.omega, report.best.beta, report.best.lambda)
    } else {
        (p.omega, p.beta, p.lambda)
    };
    let map = sample_feature_map(d_in, p.n_features, omega, beta, feature_seed)?;
    let ds = residual_dataset(train, nominal.as_ref(), mode, &p.model_integrator)?;
    let model = fit_from_dataset(&ds, train.dim(), nominal, &map, lambda, layout, &p.model_integrator)?;
    let objective = model.training_objective();
    Ok((model, [omega, beta, lambda, objective]))
}

/// Fits and evaluates every variant on one dataset.
fn evaluate_variants(
    data: &Dataset,
    sys: &SystemSpec,
    p: &Protocol,
    seed: u64,
    gamma: f64,
    sink: &mut RowSink<'_>,
) -> Result<serde_json::Value> {
    // The validity threshold is a property of the attractor, so it is taken
    // from the (cell-independent) test segments rather than the training data,
    // whose length may be the swept parameter.
    let norm_scale = data.test.iter().map(Trajectory::mean_norm).sum::<f64>() / data.test.len() as f64;
    let max_lag = ((p.acf_max_lag / p.dt).round() as usize).max(1);
    let mut fits = Vec::new();
    for &variant in &p.variants {
        let reps = if variant == Variant::Nominal { 1 } else { data.train.len() };
        for (rep, train) in data.train.iter().take(reps).enumerate() {
            fits.push((variant, rep, train));
        }
    }
    let results: Vec<Result<FitOutcome>> = fits
        .par_iter()
        .map(|&(variant, rep, train)| {
            let (model, hyper) = fit_variant(variant, train, &data.val, sys, p, seed, rep, norm_scale, gamma)?;
            let validity = data
                .test
                .iter()
                .map(|seg| {
                    let pred = model.forecast(seg.first_state(), seg.horizon(), p.dt)?;
                    validity_time_partial(&seg.rebased(0.0), &pred, gamma, norm_scale)
                })
                .collect::<Result<Vec<f64>>>()?;
            let stats = match &data.stats {
                Some(reference) => {
                    let run = model.forecast(reference.first_state(), reference.horizon(), p.dt)?;
                    Some(match run.failure {
                        None => (
                            marginal_kl(reference, &run.trajectory)?,
                            marginal_acf_error(reference, &run.trajectory, max_lag)?,
                        ),
                        Some(_) => (f64::INFINITY, f64::INFINITY),
                    })
                }
                None => None,
            };
            Ok((variant, rep, hyper, validity, stats))
        })
        .collect();
    for r in results {
        let (variant, rep, hyper, validity, stats) = r?;
        let name = variant.name();
        for (j, v) in validity.iter().enumerate() {
            sink.push(name, rep, Some(j), "validity_time", *v);
        }
        if variant != Variant::Nominal {
            for (metric, v) in ["omega", "beta", "lambda", "training_objective"].iter().zip(hyper) {
                sink.push(name, rep, None, metric, v);
            }
        }
        if let Some((kl, acf)) = stats {
            sink.push(name, rep, None, "kl_divergence", kl);
            sink.push(name, rep, None, "acf_error", acf);
        }
    }
    Ok(serde_json::json!({ "norm_scale": norm_scale }))
}

fn l63_error_spec(p: &Protocol, seed: u64) -> ModelErrorSpec {
    match p.error_family {
        ErrorFamily::Parametric => ModelErrorSpec::Parametric { eps: p.eps },
        ErrorFamily::Gp => ModelErrorSpec::GpDraw {
            eps: p.eps,
            lengthscale: p.gp_lengthscale,
            n_fourier: p.gp_fourier_terms,
            seed: derive_seed(seed, salt::GP),
        },
    }
}

/// Attractor-sampling box for L63.
pub const L63_BOX: [(f64, f64); 3] = [(-15.0, 15.0), (-20.0, 20.0), (5.0, 40.0)];

fn l63_cell(cfg: &ExperimentConfig, p: &Protocol, seed: u64, sink: &mut RowSink<'_>) -> Result<serde_json::Value> {
    let truth = Lorenz63::new(cfg.l63);
    let error = ModelError::from_spec(&l63_error_spec(p, seed), 3, &cfg.l63)?;
    let sys = SystemSpec {
        nominal: Arc::new(nominal_rhs(truth, error)?),
        hybrid_layout: ClosureLayout::Vector,
    };
    let data = generate(&truth, p, seed, &L63_BOX, &|t| Ok(t))?;
    evaluate_variants(&data, &sys, p, seed, cfg.gamma, sink)
}

fn l96_cell(cfg: &ExperimentConfig, p: &Protocol, seed: u64, sink: &mut RowSink<'_>) -> Result<serde_json::Value> {
    let params = L96Params { eps: p.eps, ..cfg.l96 };
    let truth = Lorenz96Multiscale::new(params)?;
    let k = params.k;
    let mut bounds = vec![(-5.0, 10.0); k];
    bounds.extend(std::iter::repeat_n((-0.5, 0.5), k * params.j));
    let slow: Vec<usize> = (0..k).collect();
    let sys = SystemSpec {
        nominal: Arc::new(Lorenz96Slow { params }),
        hybrid_layout: ClosureLayout::SharedScalar,
    };
    let data = generate(&truth, p, seed, &bounds, &|t| t.project(&slow))?;
    evaluate_variants(&data, &sys, p, seed, cfg.gamma, sink)
}

// ---------------------------------------------------------------------------
// Embedded-manifold demo

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub variant: EmbeddedVariant,
    pub perturb: f64,
    /// `KL(4-D run ‖ 3-D reference)` of the `u_x` densities (variant A).
    pub kl_to_reference: Option<f64>,
    /// First `t` whose trailing window has `std(u_x) < collapse_std` (variant B).
    pub collapse_time: Option<f64>,
    /// `|m − m†|` at the end of the run.
    pub final_invariant_gap: f64,
    /// Largest `|m − m†|` over the run.
    pub max_invariant_gap: f64,
    pub n_samples: usize,
}

/// First window start `t` such that `std(x[t, t + window]) < threshold`.
pub fn collapse_time(traj: &Trajectory, component: usize, window: f64, threshold: f64) -> Option<f64> {
    let dt = traj.uniform_step()?;
    let w = ((window / dt).round() as usize).max(2);
    let x = traj.column(component);
    if x.len() < w {
        return None;
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in &x[..w] {
        s1 += v;
        s2 += v * v;
    }
    let n = w as f64;
    for i in 0..=x.len() - w {
        if i > 0 {
            let (old, new) = (x[i - 1], x[i + w - 1]);
            s1 += new - old;
            s2 += new * new - old * old;
        }
        let var = (s2 / n - (s1 / n).powi(2)).max(0.0);
        if var.sqrt() < threshold {
            // Confirm with a direct two-pass estimate (the running sums lose
            // precision once the signal has collapsed).
            let m = x[i..i + w].iter().sum::<f64>() / n;
            let sd = (x[i..i + w].iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if sd < threshold {
                return Some(traj.times()[i]);
            }
        }
    }
    None
}

/// Integrates the embedded system `variant` from the configured state with
/// `m(0) = m†(y0) + perturb`. Variant A is compared in distribution to the
/// 3-D L63 run from the same state; variant B is scanned for collapse.
pub fn manifold_demo(variant: EmbeddedVariant, perturb: f64, l63: &L63Params, cfg: &ManifoldConfig) -> Result<ManifoldReport> {
    let sys = Embedded4d { variant, params: *l63 };
    let [x0, y0, z0] = cfg.init;
    let m0 = sys.manifold_m(&[x0, y0, z0]) + perturb;
    let (horizon, integ) = match variant {
        EmbeddedVariant::A => (cfg.horizon_a, &cfg.integrator_a),
        EmbeddedVariant::B => (cfg.horizon_b, &cfg.integrator_b),
    };
    let run = integrate_partial(&sys, &[x0, y0, z0, m0], (0.0, horizon), Some(&uniform_grid(0.0, horizon, cfg.dt)), integ)?;
    let traj = run.into_result()?;
    let gaps: Vec<f64> = traj.states().map(|s| (s[3] - sys.manifold_m(s)).abs()).collect();
    let mut report = ManifoldReport {
        variant,
        perturb,
        kl_to_reference: None,
        collapse_time: None,
        final_invariant_gap: *gaps.last().unwrap_or(&0.0),
        max_invariant_gap: gaps.iter().copied().fold(0.0, f64::max),
        n_samples: traj.len(),
    };
    match variant {
        EmbeddedVariant::A => {
            let reference = integrate_uniform(&Lorenz63::new(*l63), &cfg.init, horizon, cfg.dt, integ)?;
            let post = |t: &Trajectory| t.window(cfg.burn_in, f64::INFINITY).column(0);
            let grid = GridSpec::default();
            let p = kde(&post(&traj), &grid, Bandwidth::Silverman)?;
            let q = kde(&post(&reference), &grid, Bandwidth::Silverman)?;
            report.kl_to_reference = Some(kl_divergence(&p, &q));
        }
        EmbeddedVariant::B => {
            report.collapse_time = collapse_time(&traj, 0, cfg.collapse_window, cfg.collapse_std);
        }
    }
    Ok(report)
}

fn manifold_cell(cfg: &ExperimentConfig, cell: usize, sink: &mut RowSink<'_>) -> Result<serde_json::Value> {
    let (variant, perturb, name) = match cell {
        0 => (EmbeddedVariant::A, 0.0, "a-correct"),
        1 => (EmbeddedVariant::A, cfg.manifold.perturb, "a-perturbed"),
        _ => (EmbeddedVariant::B, 0.0, "b-correct"),
    };
    let rep = manifold_demo(variant, perturb, &cfg.l63, &cfg.manifold)?;
    if let Some(kl) = rep.kl_to_reference {
        sink.push(name, 0, None, "kl_to_reference", kl);
    }
    if variant == EmbeddedVariant::B {
        sink.push(name, 0, None, "collapsed", f64::from(u8::from(rep.collapse_time.is_some())));
        if let Some(t) = rep.collapse_time {
            sink.push(name, 0, None, "collapse_time", t);
        }
    }
    sink.push(name, 0, None, "max_invariant_gap", rep.max_invariant_gap);
    serde_json::to_value(&rep).map_err(|e| Error::invalid(e.to_string()))
}

// ---------------------------------------------------------------------------
// Theory scaling

fn theory_cell(cfg: &ExperimentConfig, seed: u64, sink: &mut RowSink<'_>) -> Result<serde_json::Value> {
    let problem = ScalingProblem {
        seed,
        ..cfg.theory.clone()
    };
    let report = scaling_experiment(&problem)?;
    for r in &report.rows {
        sink.param_value = r.t;
        sink.push("linear-dictionary", r.seed, None, "R_hat", r.r_hat);
        sink.push("linear-dictionary", r.seed, None, "G_hat", r.g_hat);
    }
    sink.param_value = problem.p as f64;
    let mut extra = report.summary_json();
    extra["medians"] = serde_json::json!(report.medians);
    extra["table"] = serde_json::json!(report.table());
    Ok(extra)
}

/// The theory cell's raw report, for callers that want the table itself.
pub fn theory_report(cfg: &ExperimentConfig, seed: u64) -> Result<ScalingReport> {
    scaling_experiment(&ScalingProblem {
        seed,
        ..cfg.theory.clone()
    })
}

// ---------------------------------------------------------------------------
// Partially observed L63 with a reservoir closure

/// Per-seed results of the partial-L63 reservoir experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcReport {
    pub rms_fit: f64,
    pub rms_baseline: f64,
    pub validity_reservoir: Vec<f64>,
    pub validity_nominal: Vec<f64>,
}

impl RcReport {
    pub fn rms_ratio(&self) -> f64 {
        self.rms_fit / self.rms_baseline
    }

    /// Fraction of test segments on which the reservoir forecast is valid longer.
    pub fn win_rate(&self) -> f64 {
        let wins = self
            .validity_reservoir
            .iter()
            .zip(&self.validity_nominal)
            .filter(|(r, n)| r > n)
            .count();
        wins as f64 / self.validity_reservoir.len().max(1) as f64
    }
}

/// Observe `u_x` of L63 with `f0(u_x) = −a·u_x`, fit a reservoir readout on
/// one training run, then forecast test segments after a 3DVAR warm-up and
/// compare with the free-running `f0` from the true state.
pub fn rc_partial(l63: &L63Params, rc: &RcConfig, gamma: f64, seed: u64) -> Result<RcReport> {
    let truth = Lorenz63::new(*l63);
    let a = l63.a;
    let f0 = FnField::new(1, move |x: &[f64], out: &mut [f64]| out[0] = -a * x[0]);
    let truth_cfg = IntegratorConfig::truth();
    let ics = sample_attractor_ics(&truth, 1 + rc.n_test, rc.spinup, &L63_BOX, derive_seed(seed, salt::ICS), &truth_cfg)?;
    let observe = |x0: &Vec<f64>, horizon: f64| integrate_uniform(&truth, x0, horizon, rc.dt, &truth_cfg)?.project(&[0]);
    let train = observe(&ics[0], rc.train_horizon)?;
    let mut model = sample_reservoir(ReservoirConfig {
        d_r: rc.d_r,
        d_x: 1,
        spectral_scale: rc.spectral_scale,
        leak: rc.leak,
        input_scale: rc.input_scale,
        bias_scale: rc.bias_scale,
        seed: derive_seed(seed, salt::RESERVOIR),
    })?;
    let fit = model.train(&train, &f0, rc.lambda, rc.t_warm, &rc.integrator)?;
    let norm_scale = train.mean_norm();
    let gain = DMatrix::from_element(1, 1, rc.gain);
    let per_segment: Vec<(f64, f64)> = ics[1..]
        .par_iter()
        .map(|x0| {
            let seg = observe(x0, rc.tau1 + rc.tau2)?;
            let fc = forecast_with_warmup(&model, &f0, &seg, &gain, rc.tau1, rc.tau2, &rc.integrator)?;
            let t_hand = fc.forecast.trajectory.t_start();
            let truth_tail = seg.window(t_hand - 1e-9, f64::INFINITY).rebased(0.0);
            let pred = PartialTrajectory {
                trajectory: fc.forecast.trajectory.rebased(0.0),
                failure: fc.forecast.failure,
            };
            let v_rc = validity_time_partial(&truth_tail, &pred, gamma, norm_scale)?;
            let grid = uniform_grid(0.0, truth_tail.horizon(), rc.dt);
            let t1 = *grid.last().unwrap();
            let free = integrate_partial(&f0, truth_tail.first_state(), (0.0, t1), Some(&grid), &rc.integrator)?;
            let v_f0 = validity_time_partial(&truth_tail, &free, gamma, norm_scale)?;
            Ok((v_rc, v_f0))
        })
        .collect::<Result<_>>()?;
    Ok(RcReport {
        rms_fit: fit.rms_fit,
        rms_baseline: fit.rms_baseline,
        validity_reservoir: per_segment.iter().map(|v| v.0).collect(),
        validity_nominal: per_segment.iter().map(|v| v.1).collect(),
    })
}

fn rc_cell(cfg: &ExperimentConfig, seed: u64, sink: &mut RowSink<'_>) -> Result<serde_json::Value> {
    let rep = rc_partial(&cfg.l63, &cfg.reservoir, cfg.gamma, seed)?;
    sink.push("reservoir", 0, None, "rms_fit", rep.rms_fit);
    sink.push("reservoir", 0, None, "rms_baseline", rep.rms_baseline);
    sink.push("reservoir", 0, None, "rms_ratio", rep.rms_ratio());
    for (j, (r, n)) in rep.validity_reservoir.iter().zip(&rep.validity_nominal).enumerate() {
        sink.push("reservoir", 0, Some(j), "validity_time", *r);
        sink.push("nominal", 0, Some(j), "validity_time", *n);
    }
    Ok(serde_json::json!({ "rms_ratio": rep.rms_ratio(), "win_rate": rep.win_rate() }))
}

// ---------------------------------------------------------------------------
// Output files

/// Writes `results.csv`, `summary.json` and `config.lock.toml` into `dir`
/// (plus `scaling.csv` / `scaling.json` for the theory study).
pub fn write_outputs(record: &RunRecord, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("results.csv")).map_err(csv_err)?;
    for row in record.rows() {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    let summary = serde_json::to_string_pretty(&record.summary()).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), summary + "\n")?;
    let lock = format!(
        "# resolved configuration; config_hash = {}\n{}",
        record.config_hash,
        cfg.to_toml()?
    );
    std::fs::write(dir.join("config.lock.toml"), lock)?;
    if record.experiment == Experiment::TheoryScaling {
        write_scaling_files(record, dir)?;
    }
    Ok(())
}

fn write_scaling_files(record: &RunRecord, dir: &Path) -> Result<()> {
    let ok: Vec<&CellRecord> = record.cells.iter().filter(|c| !c.failed()).collect();
    for c in &ok {
        let suffix = if ok.len() == 1 { String::new() } else { format!("-seed{}", c.seed) };
        if let Some(table) = c.extra.get("table").and_then(|t| t.as_str()) {
            std::fs::write(dir.join(format!("scaling{suffix}.csv")), table)?;
        }
        let summary = serde_json::json!({
            "slope": c.extra["slope"],
            "ci_low": c.extra["ci_low"],
            "ci_high": c.extra["ci_high"],
        });
        std::fs::write(
            dir.join(format!("scaling{suffix}.json")),
            serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))? + "\n",
        )?;
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}
