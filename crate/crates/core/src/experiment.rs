//! Config-driven experiment runner behind the `domlab` binary.
//!
//! A run simulates the source system, drives the reservoir(s), trains the
//! readout and then executes the enabled analysis blocks. Every block writes
//! its own CSV/JSON artifacts and reports the checks it performed together
//! with their tolerances. A failing block is recorded and does not stop the
//! others.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dominance::{
    certify_linear, differential_check, dominant_set, linearization_storage, DominanceCertificate,
};
use crate::dynamics::{
    rk4_integrate, sample_uniform, zero_order_hold, ChannelScaling, Goldbeter, GoldbeterParams,
    LinearHold, Lorenz, OdeSystem, SnapshotMatrix, Trajectory,
};
use crate::error::{Error, Result};
use crate::numerics::{clustered_max_distance, default_rtol, eigvals, matched_max_distance, numerical_rank, Matrix, Vector};
use crate::reservoir::{
    closed_loop_forecast, drive_sampled, exact_linear_snapshots, init_reservoir, jacobian_trained,
    linear_closed_loop_matrix, memory_factor, Activation, ReservoirConfig, ReservoirParams,
};
use crate::spectral::{
    eigenpair_residual, exact_dmd, full_spectrum, modal_trajectory_check, predicted_shifted_eigs_general,
    predicted_shifted_eigs_square, split_spectrum, theory_from_closed_form, weighted_dmd, wout_win_closed_form,
    TheoryReport, DEFAULT_SPLIT_TOL, SQUARE_CLUSTER_RADIUS,
};
use crate::training::{forecast_error, prefix_readouts, train_readout_with, window_mean, TrainOptions, TrainingRecord};

pub const CONFIG_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Distance from `γ(ω−1)` beyond which a root-locus branch counts as departed.
pub const DEPARTED_TOL: f64 = 1e-6;
/// Relative SVD cut used for `rank(W_in W_out)` in reports.
pub const COUPLING_RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz,
    Goldbeter,
    CustomSignal,
}

impl SystemKind {
    fn natural_dim(&self, params: &SystemParams) -> usize {
        match self {
            SystemKind::Lorenz => 3,
            SystemKind::Goldbeter => 5,
            SystemKind::CustomSignal => params.signal.as_ref().map_or(0, |s| s.frequencies.len()),
        }
    }
}

/// `u_k(t) = amplitude_k sin(frequency_k t + phase_k) + offset_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub frequencies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets: Option<Vec<f64>>,
}

impl SignalSpec {
    fn channel(v: &Option<Vec<f64>>, k: usize, default: f64) -> f64 {
        v.as_ref().map_or(default, |v| v[k])
    }

    pub fn value(&self, t: f64) -> Vector {
        Vector::from_fn(self.frequencies.len(), |k, _| {
            Self::channel(&self.amplitudes, k, 1.0) * (self.frequencies[k] * t + Self::channel(&self.phases, k, 0.0)).sin()
                + Self::channel(&self.offsets, k, 0.0)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    /// Integration step of the source system; defaults to `h / 10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goldbeter: Option<GoldbeterParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationChoice {
    Linear,
    Tanh,
    /// Linear and tanh reservoirs sharing the same `W_in`.
    Both,
}

impl ActivationChoice {
    fn list(&self) -> Vec<Activation> {
        match self {
            ActivationChoice::Linear => vec![Activation::Linear],
            ActivationChoice::Tanh => vec![Activation::Tanh],
            ActivationChoice::Both => vec![Activation::Linear, Activation::Tanh],
        }
    }

    fn has_linear(&self) -> bool {
        !matches!(self, ActivationChoice::Tanh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirSection {
    pub n: usize,
    pub d: usize,
    pub gamma: f64,
    pub omega: f64,
    pub sigma_b: f64,
    pub activation: ActivationChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputHold {
    Zoh,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotMode {
    /// Closed-form response of the linear reservoir; tanh always integrates.
    Exact,
    Rk4,
}

fn default_stride() -> usize {
    crate::training::DEFAULT_STRIDE
}
fn default_substeps() -> usize {
    50
}
fn default_true() -> bool {
    true
}
fn default_hold() -> InputHold {
    InputHold::Zoh
}
fn default_snapshots() -> SnapshotMode {
    SnapshotMode::Exact
}
fn is_zero(x: &f64) -> bool {
    *x == 0.0
}
fn is_zero_usize(x: &usize) -> bool {
    *x == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// Training horizon; must equal `m h` when given.
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub h: f64,
    pub m: usize,
    /// Source-system time discarded before the training window.
    #[serde(default)]
    pub transient_discard: f64,
    /// Samples fed to the reservoir before the training window and left out
    /// of `U` and `R`.
    #[serde(default, skip_serializing_if = "is_zero_usize")]
    pub washout: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_hold")]
    pub input_hold: InputHold,
    #[serde(default = "default_snapshots")]
    pub snapshots: SnapshotMode,
    /// RK4 steps per sample when integrating the reservoir.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Tikhonov weight for tanh readouts.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub ridge: f64,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinv_rtol: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisFlags {
    pub spectrum: bool,
    pub rootlocus: bool,
    pub dmd: bool,
    pub dominance: bool,
    pub forecast: bool,
    pub theory_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSection {
    pub horizon: f64,
    /// Averaging window for the scalar error comparison.
    pub window: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

fn default_gain_samples() -> usize {
    200
}
fn default_max_states() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominanceSection {
    #[serde(default = "default_gain_samples")]
    pub extra_gain_samples: usize,
    #[serde(default = "default_max_states")]
    pub max_states: usize,
}

impl Default for DominanceSection {
    fn default() -> Self {
        DominanceSection {
            extra_gain_samples: default_gain_samples(),
            max_states: default_max_states(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub system: SystemKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Channels appended as exact copies after normalization.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub duplicate_channels: Vec<usize>,
    #[serde(default)]
    pub system_params: SystemParams,
    pub reservoir: ReservoirSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub analysis: AnalysisFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<ForecastSection>,
    #[serde(default)]
    pub dominance: DominanceSection,
    #[serde(default)]
    pub expect: Expectations,
}

/// Experiment-specific claims, checked on top of the structural ones every
/// block asserts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    /// Lower bound (exclusive) on the max real part of the linear closed loop.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_max_re_above: Option<f64>,
    /// Upper bound (inclusive) on the max real part of the linear closed loop.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_max_re_at_most: Option<f64>,
    /// Exact value of `rank(W_in W_out)` for the fully trained linear readout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_rank: Option<usize>,
    /// Some trajectory-sampled tanh Jacobian has an eigenvalue with `Re > 0`.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub tanh_positive_jacobian_eig: bool,
    /// Window-averaged tanh forecast error strictly below the linear one.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub tanh_beats_linear: bool,
}

fn check(cond: bool, field: &str, message: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(field, message()))
    }
}

impl ExperimentConfig {
    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::config("<json>", e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::config("<toml>", e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes to JSON")
    }

    /// Input channels produced by the source system before duplication.
    pub fn system_dim(&self) -> usize {
        self.system.natural_dim(&self.system_params)
    }

    pub fn reservoir_params(&self, activation: Activation) -> ReservoirParams {
        let r = &self.reservoir;
        ReservoirParams {
            n: r.n,
            d: r.d,
            gamma: r.gamma,
            omega: r.omega,
            sigma_b: r.sigma_b,
            activation,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(self.version == CONFIG_VERSION, "version", || {
            format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)
        })?;
        check(!self.name.is_empty(), "name", || "must not be empty".into())?;

        let dim = self.system_dim();
        let sp = &self.system_params;
        match self.system {
            SystemKind::CustomSignal => {
                let sig = sp
                    .signal
                    .as_ref()
                    .ok_or_else(|| Error::config("system_params.signal", "required for custom-signal"))?;
                check(!sig.frequencies.is_empty(), "system_params.signal.frequencies", || {
                    "need at least one channel".into()
                })?;
                for (field, v) in [("amplitudes", &sig.amplitudes), ("phases", &sig.phases), ("offsets", &sig.offsets)] {
                    if let Some(v) = v {
                        check(v.len() == dim, &format!("system_params.signal.{field}"), || {
                            format!("has {} entries, expected {dim}", v.len())
                        })?;
                    }
                }
            }
            _ => {
                check(sp.signal.is_none(), "system_params.signal", || "only valid for custom-signal".into())?;
            }
        }
        if sp.goldbeter.is_some() {
            check(self.system == SystemKind::Goldbeter, "system_params.goldbeter", || {
                "only valid for the goldbeter system".into()
            })?;
        }
        if let Some(x0) = &sp.initial_state {
            check(self.system != SystemKind::CustomSignal, "system_params.initial_state", || {
                "not used by custom-signal".into()
            })?;
            check(x0.len() == dim, "system_params.initial_state", || {
                format!("has {} entries, expected {dim}", x0.len())
            })?;
        }
        if let Some(dt) = sp.dt {
            check(dt > 0.0, "system_params.dt", || "must be positive".into())?;
        }

        let mut channels = dim;
        for (k, &c) in self.duplicate_channels.iter().enumerate() {
            check(c < channels, &format!("duplicate_channels[{k}]"), || {
                format!("channel {c} out of range for {channels} channels")
            })?;
            channels += 1;
        }
        let r = &self.reservoir;
        check(r.d == channels, "reservoir.d", || {
            format!("is {}, but the input has {channels} channels", r.d)
        })?;
        check(r.d >= 1 && r.n > r.d, "reservoir.n", || format!("need n > d (n = {}, d = {})", r.n, r.d))?;
        check(r.gamma > 0.0 && r.gamma.is_finite(), "reservoir.gamma", || "must be positive".into())?;
        check(r.omega < 1.0, "reservoir.omega", || "must be < 1".into())?;
        check(r.sigma_b.is_finite(), "reservoir.sigma_b", || "must be finite".into())?;

        let t = &self.training;
        check(t.h > 0.0 && t.h.is_finite(), "training.h", || "must be positive".into())?;
        check(t.m >= r.d, "training.m", || format!("need m >= d = {}", r.d))?;
        if r.sigma_b != 0.0 {
            check(t.m > r.d, "training.m", || format!("need m >= d + 1 = {} when sigma_b != 0", r.d + 1))?;
        }
        if let Some(total) = t.t {
            let expected = t.m as f64 * t.h;
            check((total - expected).abs() <= 1e-9 * expected.max(1.0), "training.T", || {
                format!("is {total}, but m h = {expected}")
            })?;
        }
        check(t.transient_discard >= 0.0, "training.transient_discard", || "must be >= 0".into())?;
        check(t.stride >= 1, "training.stride", || "must be >= 1".into())?;
        check(t.substeps >= 1, "training.substeps", || "must be >= 1".into())?;
        check(t.ridge >= 0.0, "training.ridge", || "must be >= 0".into())?;
        if let Some(rtol) = t.pinv_rtol {
            check(rtol > 0.0 && rtol < 1.0, "training.pinv_rtol", || "must lie in (0, 1)".into())?;
        }
        if t.snapshots == SnapshotMode::Exact && r.activation.has_linear() {
            check(t.input_hold == InputHold::Zoh, "training.snapshots", || {
                "exact snapshots need input_hold = \"zoh\"".into()
            })?;
        }

        let a = &self.analysis;
        for (flag, on) in [("rootlocus", a.rootlocus), ("dmd", a.dmd), ("theory_check", a.theory_check)] {
            check(!on || r.activation.has_linear(), &format!("analysis.{flag}"), || {
                "needs a linear reservoir".into()
            })?;
        }
        for (flag, on) in [("dmd", a.dmd), ("theory_check", a.theory_check)] {
            check(!on || t.input_hold == InputHold::Zoh, &format!("analysis.{flag}"), || {
                "the closed forms assume input_hold = \"zoh\"".into()
            })?;
        }
        if a.rootlocus {
            check(t.m >= (r.d + 1).max(t.stride), "training.stride", || {
                "first prefix is longer than the training window".into()
            })?;
        }
        if a.forecast {
            let f = self
                .forecast
                .as_ref()
                .ok_or_else(|| Error::config("forecast", "required when analysis.forecast is on"))?;
            check(f.horizon > 0.0, "forecast.horizon", || "must be positive".into())?;
            check(f.window > 0.0 && f.window <= f.horizon, "forecast.window", || {
                "must lie in (0, horizon]".into()
            })?;
            if let Some(s) = f.substeps {
                check(s >= 1, "forecast.substeps", || "must be >= 1".into())?;
            }
        }
        // W_in must be drawable for these parameters
        init_reservoir(&self.reservoir_params(Activation::Linear)).map_err(|e| Error::config("reservoir", e.to_string()))?;
        Ok(())
    }
}

/// Copy of `config` whose input carries one more channel duplicating `channel`.
pub fn duplicate_channel(config: &ExperimentConfig, channel: usize) -> Result<ExperimentConfig> {
    let d = config.reservoir.d;
    if channel >= d {
        return Err(Error::BadChannel { channel, d });
    }
    let mut out = config.clone();
    out.duplicate_channels.push(channel);
    out.reservoir.d += 1;
    out.name = format!("{}_dup{channel}", config.name);
    out.validate()?;
    Ok(out)
}

/// Experiments compiled into the binary.
pub struct ShippedExperiment {
    pub name: &'static str,
    pub toml: &'static str,
}

pub const SHIPPED: &[ShippedExperiment] = &[
    ShippedExperiment {
        name: "goldbeter_rootlocus",
        toml: include_str!("../configs/goldbeter_rootlocus.toml"),
    },
    ShippedExperiment {
        name: "lorenz_forecast_compare",
        toml: include_str!("../configs/lorenz_forecast_compare.toml"),
    },
    ShippedExperiment {
        name: "sine_theory_check",
        toml: include_str!("../configs/sine_theory_check.toml"),
    },
    ShippedExperiment {
        name: "square_dmd",
        toml: include_str!("../configs/square_dmd.toml"),
    },
];

pub fn shipped(name: &str) -> Option<ExperimentConfig> {
    SHIPPED
        .iter()
        .find(|e| e.name == name)
        .map(|e| ExperimentConfig::parse(e.toml).expect("shipped configs are valid"))
}

/// A config file path, or the name of a shipped experiment.
pub fn resolve(spec: &str) -> Result<ExperimentConfig> {
    let path = Path::new(spec);
    if path.exists() {
        return ExperimentConfig::load(path);
    }
    shipped(spec).ok_or_else(|| Error::config("config", format!("no file or shipped experiment named `{spec}`")))
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="`, `"<"`, `">="`, `">"`, `"in"`.
    pub relation: String,
    pub tolerance: Value,
    pub passed: bool,
}

fn f64_json(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format!("{x}"))
    }
}

impl Check {
    fn le(name: &str, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, relation: "<=".into(), tolerance: f64_json(tol), passed: value <= tol }
    }
    fn lt(name: &str, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, relation: "<".into(), tolerance: f64_json(tol), passed: value < tol }
    }
    fn ge(name: &str, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, relation: ">=".into(), tolerance: f64_json(tol), passed: value >= tol }
    }
    fn gt(name: &str, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, relation: ">".into(), tolerance: f64_json(tol), passed: value > tol }
    }
    fn eq(name: &str, value: f64, expected: f64) -> Self {
        Check { name: name.into(), value, relation: "==".into(), tolerance: f64_json(expected), passed: value == expected }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockStatus {
    Ok,
    Failed,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub status: BlockStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub checks: Vec<Check>,
    pub data: Value,
    pub artifacts: Vec<String>,
}

impl BlockReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub input_scaling: ChannelScaling,
    pub blocks: BTreeMap<String, BlockReport>,
    pub timings_ms: BTreeMap<String, f64>,
    pub output_dir: PathBuf,
}

impl ExperimentReport {
    /// Blocks that errored or had a failing check.
    pub fn failures(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|(_, b)| b.status != BlockStatus::Ok)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.get(name)
    }
}

/// Source data in the units fed to the reservoir.
struct SourceData {
    /// Washout and training samples, normalized, with duplicates appended.
    u_full: SnapshotMatrix,
    /// Training columns of `u_full`.
    u: SnapshotMatrix,
    scaling: ChannelScaling,
    /// Raw truth on `t = k h`, `k = 0..`, starting at the end of training.
    future: Option<Trajectory>,
}

fn simulate_source(cfg: &ExperimentConfig) -> Result<SourceData> {
    let t = &cfg.training;
    let h = t.h;
    let horizon = cfg.forecast.as_ref().filter(|_| cfg.analysis.forecast).map_or(0.0, |f| f.horizon);
    let future_steps = (horizon / h).ceil() as usize;
    let total_samples = t.washout + t.m;
    let t_train_end = t.transient_discard + total_samples as f64 * h;

    let (raw, future) = match cfg.system {
        SystemKind::CustomSignal => {
            let sig = cfg.system_params.signal.as_ref().expect("validated");
            let raw = Matrix::from_columns(
                &(0..total_samples)
                    .map(|j| sig.value(t.transient_discard + (j + 1) as f64 * h))
                    .collect::<Vec<_>>(),
            );
            let future = (0..=future_steps)
                .map(|k| sig.value(t_train_end + k as f64 * h))
                .collect::<Vec<_>>();
            (raw, future)
        }
        SystemKind::Lorenz | SystemKind::Goldbeter => {
            let system: Box<dyn OdeSystem> = match cfg.system {
                SystemKind::Lorenz => Box::new(Lorenz::default()),
                _ => Box::new(Goldbeter {
                    params: cfg.system_params.goldbeter.clone().unwrap_or_default(),
                }),
            };
            let x0 = match &cfg.system_params.initial_state {
                Some(x) => Vector::from_vec(x.clone()),
                None => default_initial_state(cfg.system),
            };
            let dt = cfg.system_params.dt.unwrap_or(h / 10.0);
            let total = t_train_end + future_steps as f64 * h;
            let steps = (total / dt).ceil() as usize;
            let traj = rk4_integrate(system.as_ref(), &x0, dt, steps)?;
            let raw = sample_uniform(&traj, h, total_samples, t.transient_discard)?.data;
            let future = (0..=future_steps)
                .map(|k| traj.interpolate(t_train_end + k as f64 * h))
                .collect::<Result<Vec<_>>>()?;
            (raw, future)
        }
    };

    let scaling = if t.normalize {
        ChannelScaling::fit(&raw)
    } else {
        ChannelScaling::identity(raw.nrows())
    };
    let mut rows: Vec<Vec<f64>> = scaling.apply(&raw).row_iter().map(|r| r.iter().copied().collect()).collect();
    for &c in &cfg.duplicate_channels {
        rows.push(rows[c].clone());
    }
    let u = Matrix::from_fn(rows.len(), total_samples, |i, j| rows[i][j]);
    let future = (horizon > 0.0).then(|| {
        Trajectory::new((0..=future_steps).map(|k| k as f64 * h).collect(), future).expect("uniform grid")
    });
    let u_full = SnapshotMatrix::new(u, h, 0.0)?;
    Ok(SourceData {
        u: training_columns(&u_full, t.washout),
        u_full,
        scaling,
        future,
    })
}

/// Columns `washout..` of `a`, keeping absolute sample times.
fn training_columns(a: &SnapshotMatrix, washout: usize) -> SnapshotMatrix {
    SnapshotMatrix {
        data: a.data.columns(washout, a.m() - washout).into_owned(),
        h: a.h,
        t_start: a.t_start + washout as f64 * a.h,
    }
}

pub fn default_initial_state(system: SystemKind) -> Vector {
    match system {
        SystemKind::Lorenz => Vector::from_vec(vec![1.0, 1.0, 1.0]),
        SystemKind::Goldbeter => Vector::from_vec(vec![0.6, 0.5, 0.4, 0.3, 0.4]),
        SystemKind::CustomSignal => Vector::zeros(0),
    }
}

/// A driven and trained reservoir.
pub struct ModelRun {
    pub activation: Activation,
    pub cfg: ReservoirConfig,
    pub record: TrainingRecord,
    pub final_state: Vector,
}

fn drive_and_train(exp: &ExperimentConfig, cfg: &ReservoirConfig, source: &SourceData) -> Result<ModelRun> {
    let t = &exp.training;
    let u = &source.u_full;
    let (r, final_state) = if cfg.activation == Activation::Linear && t.snapshots == SnapshotMode::Exact {
        let r = exact_linear_snapshots(cfg, u)?.r;
        let last = r.data.column(r.m() - 1).into_owned();
        (r, last)
    } else {
        let driven = match t.input_hold {
            InputHold::Zoh => drive_sampled(cfg, &zero_order_hold(u), u, t.substeps)?,
            InputHold::Linear => drive_sampled(cfg, &LinearHold::new(u), u, t.substeps)?,
        };
        (driven.r, driven.final_state)
    };
    let r = training_columns(&r, t.washout);
    let opts = TrainOptions {
        ridge: if cfg.activation == Activation::Tanh { t.ridge } else { 0.0 },
        rtol: t.pinv_rtol,
    };
    let record = train_readout_with(&r, &source.u, &opts)?;
    Ok(ModelRun {
        activation: cfg.activation,
        cfg: cfg.clone(),
        record,
        final_state,
    })
}

fn complex_rows(label: &str, eigs: &[Complex64]) -> String {
    eigs.iter()
        .enumerate()
        .map(|(k, l)| format!("{label},{k},{:e},{:e}\n", l.re, l.im))
        .collect()
}

fn max_re(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

fn eig_json(eigs: &[Complex64]) -> Value {
    Value::Array(eigs.iter().map(|l| json!([l.re, l.im])).collect())
}

struct Ctx<'a> {
    exp: &'a ExperimentConfig,
    out: &'a Path,
    source: &'a SourceData,
    models: &'a [ModelRun],
}

impl Ctx<'_> {
    fn model(&self, a: Activation) -> Option<&ModelRun> {
        self.models.iter().find(|m| m.activation == a)
    }

    fn linear(&self) -> Result<&ModelRun> {
        self.model(Activation::Linear)
            .ok_or_else(|| Error::InvalidArgument("no linear reservoir in this experiment".into()))
    }

    fn write(&self, name: &str, contents: &str, artifacts: &mut Vec<String>) -> Result<()> {
        fs::write(self.out.join(name), contents)?;
        artifacts.push(name.to_string());
        Ok(())
    }
}

struct BlockOutput {
    checks: Vec<Check>,
    data: Value,
    artifacts: Vec<String>,
}

fn spectrum_block(ctx: &Ctx) -> Result<BlockOutput> {
    let mut checks = Vec::new();
    let mut data = serde_json::Map::new();
    let mut artifacts = Vec::new();
    let mut csv = String::from("# domlab-csv v1 spectrum\nmodel,index,re,im\n");
    for run in ctx.models {
        let cfg = &run.cfg;
        let w_out = &run.record.w_out;
        let coupling_rank = numerical_rank(&(&cfg.w_in * w_out), COUPLING_RANK_RTOL);
        match run.activation {
            Activation::Linear => {
                let eigs = eigvals(&linear_closed_loop_matrix(cfg, w_out))?;
                csv.push_str(&complex_rows("linear", &eigs));
                let (unperturbed, shifted) = split_spectrum(&eigs, cfg.base_eigenvalue(), DEFAULT_SPLIT_TOL, cfg.d)?;
                checks.push(Check::ge("linear_unperturbed_count", unperturbed.len() as f64, (cfg.n - cfg.d) as f64));
                checks.push(Check::le("linear_shifted_count", shifted.len() as f64, cfg.d as f64));
                let expect = &ctx.exp.expect;
                if let Some(lo) = expect.linear_max_re_above {
                    checks.push(Check::gt("linear_max_re_lower", max_re(&eigs), lo));
                }
                if let Some(hi) = expect.linear_max_re_at_most {
                    checks.push(Check::le("linear_max_re_upper", max_re(&eigs), hi));
                }
                if let Some(rank) = expect.coupling_rank {
                    checks.push(Check::eq("linear_coupling_rank", coupling_rank as f64, rank as f64));
                }
                data.insert(
                    "linear".into(),
                    json!({
                        "max_re": max_re(&eigs),
                        "shifted": eig_json(&shifted),
                        "base": cfg.base_eigenvalue(),
                        "split_tol": DEFAULT_SPLIT_TOL,
                        "coupling_rank": coupling_rank,
                        "rank_rtol": COUPLING_RANK_RTOL,
                        "training_residual": run.record.residual,
                        "snapshot_rank": run.record.rank,
                        "snapshot_rank_deficient": run.record.rank_deficient,
                    }),
                );
            }
            Activation::Tanh => {
                let j_final = jacobian_trained(cfg, w_out, &run.final_state);
                let eigs = eigvals(&j_final)?;
                csv.push_str(&complex_rows("tanh_final_state", &eigs));
                let r = &run.record.r;
                let samples = 20.min(r.m());
                let mut rows = String::from("# domlab-csv v1 jacobian_samples\nsample,time,max_re,positive_count\n");
                let mut most_positive = 0usize;
                let mut worst_re = f64::NEG_INFINITY;
                for s in 0..samples {
                    let j = (s + 1) * r.m() / samples - 1;
                    let state = r.data.column(j).into_owned();
                    let e = eigvals(&jacobian_trained(cfg, w_out, &state))?;
                    let pos = e.iter().filter(|l| l.re > 0.0).count();
                    most_positive = most_positive.max(pos);
                    worst_re = worst_re.max(max_re(&e));
                    rows.push_str(&format!("{s},{:e},{:e},{pos}\n", r.time(j), max_re(&e)));
                }
                ctx.write("jacobian_samples.csv", &rows, &mut artifacts)?;
                if ctx.exp.expect.tanh_positive_jacobian_eig {
                    checks.push(Check::ge("tanh_positive_eigs_at_sampled_state", most_positive as f64, 1.0));
                }
                data.insert(
                    "tanh".into(),
                    json!({
                        "final_state_max_re": max_re(&eigs),
                        "sampled_states": samples,
                        "sampled_max_re": worst_re,
                        "max_positive_count": most_positive,
                        "coupling_rank": coupling_rank,
                        "training_residual": run.record.residual,
                        "snapshot_rank": run.record.rank,
                        "ridge": run.record.options.ridge,
                    }),
                );
            }
        }
    }
    ctx.write("spectrum.csv", &csv, &mut artifacts)?;
    Ok(BlockOutput { checks, data: Value::Object(data), artifacts })
}

fn rootlocus_block(ctx: &Ctx) -> Result<BlockOutput> {
    let run = ctx.linear()?;
    let cfg = &run.cfg;
    let opts = TrainOptions { ridge: 0.0, rtol: ctx.exp.training.pinv_rtol };
    let series = prefix_readouts(&run.record.r, &ctx.source.u, cfg, ctx.exp.training.stride, &opts)?;
    let mut artifacts = Vec::new();
    ctx.write("rootlocus.csv", &series.to_csv(), &mut artifacts)?;

    let input_rank = numerical_rank(&ctx.source.u.data, default_rtol(cfg.d, ctx.source.u.m()));
    let final_eigs = series.spectra.last().cloned().unwrap_or_default();
    let final_w = series.readouts.last().cloned().unwrap_or_else(|| Matrix::zeros(cfg.d, cfg.n));
    let coupling_rank = numerical_rank(&(&cfg.w_in * &final_w), COUPLING_RANK_RTOL);
    let max_departed = series.max_departed(DEPARTED_TOL);
    let branches = series.departed_branches(DEPARTED_TOL).len();
    let full_max_re = max_re(&final_eigs);
    let checks = vec![
        Check::le("max_departed_per_prefix", max_departed as f64, input_rank as f64),
        Check::le("departed_branch_ids", branches as f64, input_rank as f64),
        Check::le("coupling_rank", coupling_rank as f64, input_rank as f64),
        Check::le("failed_prefixes", series.failures.len() as f64, 0.0),
    ];
    let data = json!({
        "prefixes": series.prefix_lengths.len(),
        "stride": ctx.exp.training.stride,
        "departed_tol": DEPARTED_TOL,
        "max_departed": max_departed,
        "departed_branches": branches,
        "input_rank": input_rank,
        "coupling_rank": coupling_rank,
        "rank_rtol": COUPLING_RANK_RTOL,
        "readout_rank_max": series.readout_ranks.iter().max(),
        "full_data_max_re": full_max_re,
        "failures": series.failures,
    });
    Ok(BlockOutput { checks, data, artifacts })
}

fn pipeline_spectrum(run: &ModelRun) -> Result<Vec<Complex64>> {
    eigvals(&linear_closed_loop_matrix(&run.cfg, &run.record.w_out))
}

fn formula_tolerance(exp: &ExperimentConfig) -> f64 {
    match exp.training.snapshots {
        SnapshotMode::Exact => 1e-6,
        SnapshotMode::Rk4 => 1e-4,
    }
}

fn dmd_block(ctx: &Ctx) -> Result<BlockOutput> {
    let run = ctx.linear()?;
    let cfg = &run.cfg;
    let u = &ctx.source.u;
    let alpha = memory_factor(cfg.gamma, cfg.omega, u.h);
    let mut csv = String::from("# domlab-csv v1 dmd\noperator,index,re,im\n");
    let mut checks = Vec::new();
    let mut data = serde_json::Map::new();
    data.insert("alpha".into(), json!(alpha));

    let weighted = weighted_dmd(&u.data, alpha)?.eigenvalues()?;
    csv.push_str(&complex_rows("weighted", &weighted));
    let exact = exact_dmd(&u.data)?.eigenvalues()?;
    csv.push_str(&complex_rows("exact", &exact));

    let spectrum = pipeline_spectrum(run)?;
    let tol = formula_tolerance(ctx.exp);
    if ctx.exp.training.washout > 0 {
        data.insert(
            "note".into(),
            json!("washout > 0: the reservoir does not start from rest at the first training sample, so the weighted-DMD formula does not apply"),
        );
    } else if cfg.sigma_b == 0.0 {
        let predicted = predicted_shifted_eigs_general(&u.data, cfg, u.h, 1e-9)?;
        csv.push_str(&complex_rows("predicted_shifted", &predicted));
        let mismatch = spectrum_distance(&full_spectrum(&predicted, cfg.n, cfg.base_eigenvalue()), &spectrum, u.rows() == u.m());
        checks.push(Check::le("weighted_dmd_prediction_mismatch", mismatch, tol));
        data.insert("weighted_dmd_mismatch".into(), json!(mismatch));
        if u.rows() == u.m() {
            let sq = predicted_shifted_eigs_square(&u.data, cfg, u.h, &spectrum, tol)?;
            csv.push_str(&complex_rows("square_printed", &sq.printed));
            csv.push_str(&complex_rows("square_proof_implied", &sq.proof_implied));
            let one_matches = (sq.printed_distance <= tol) != (sq.proof_implied_distance <= tol);
            checks.push(Check::ge("exactly_one_square_variant_matches", one_matches as u8 as f64, 1.0));
            data.insert("square".into(), serde_json::to_value(&sq).expect("serializes"));
        }
    } else {
        data.insert(
            "note".into(),
            json!("sigma_b != 0: the weighted-DMD formula does not apply; see theory_check for the bias-corrected closed form"),
        );
    }
    let mut artifacts = Vec::new();
    ctx.write("dmd.csv", &csv, &mut artifacts)?;
    Ok(BlockOutput { checks, data: Value::Object(data), artifacts })
}

/// Matched distance between full spectra; cluster means for square data,
/// whose shifted eigenvalues form a defective cluster.
fn spectrum_distance(predicted: &[Complex64], pipeline: &[Complex64], square: bool) -> f64 {
    if square {
        let radius = SQUARE_CLUSTER_RADIUS * pipeline.iter().map(|l| l.norm()).fold(1.0, f64::max);
        clustered_max_distance(predicted, pipeline, radius)
    } else {
        matched_max_distance(predicted, pipeline)
    }
}

fn theory_block(ctx: &Ctx) -> Result<BlockOutput> {
    let run = ctx.linear()?;
    let cfg = &run.cfg;
    let u = &ctx.source.u;
    let washout = ctx.exp.training.washout;
    let ex = exact_linear_snapshots(cfg, &ctx.source.u_full)?;
    let b1 = ex.b1.columns(washout, u.m()).into_owned();
    let b2 = ex.b2.columns(washout, u.m()).into_owned();
    let closed = wout_win_closed_form(&u.data, &b1, &b2, cfg.sigma_b)?;
    let piped = &run.record.w_out * &cfg.w_in;
    let lemma_residual = (&closed - &piped).norm() / piped.norm().max(f64::MIN_POSITIVE);

    let spectrum = pipeline_spectrum(run)?;
    let (unperturbed, shifted) = split_spectrum(&spectrum, cfg.base_eigenvalue(), DEFAULT_SPLIT_TOL, cfg.d)?;
    let tol = formula_tolerance(ctx.exp);
    let pred = theory_from_closed_form(cfg, closed, u.h, 1e-9)?;
    let predicted_full = full_spectrum(&pred.predicted_shifted_eigs, cfg.n, cfg.base_eigenvalue());
    let mismatch = spectrum_distance(&predicted_full, &spectrum, u.rows() == u.m());
    let matched_variant = if u.rows() == u.m() && cfg.sigma_b == 0.0 {
        predicted_shifted_eigs_square(&u.data, cfg, u.h, &spectrum, tol).ok().map(|sq| sq.matched)
    } else {
        None
    };
    let j = linear_closed_loop_matrix(cfg, &run.record.w_out);
    let pair_residual = eigenpair_residual(&j, &pred.predicted_shifted_eigs, &pred.predicted_eigvecs);
    let modal = modal_trajectory_check(cfg, &run.record.w_out, &run.final_state, 1.0, u.h / ctx.exp.training.substeps as f64);

    let lemma_tol = match ctx.exp.training.snapshots {
        SnapshotMode::Exact => 1e-7,
        SnapshotMode::Rk4 => 1e-4,
    };
    let mut checks = vec![
        Check::le("lemma_relative_residual", lemma_residual, lemma_tol),
        Check::ge("unperturbed_count", unperturbed.len() as f64, (cfg.n - cfg.d) as f64),
        Check::le("shifted_count", shifted.len() as f64, cfg.d as f64),
        Check::le("closed_form_eig_mismatch", mismatch, tol),
        Check::le("lifted_eigenpair_residual", pair_residual, 1e-6),
    ];
    let modal_json;
    match modal {
        Ok(m) => {
            if let Some(dev) = m.max_deviation {
                checks.push(Check::le("modal_trajectory_deviation", dev, 1e-5));
            }
            modal_json = serde_json::to_value(&m).expect("serializes");
        }
        Err(e) => {
            modal_json = json!({"error": e.to_string()});
        }
    }

    let report = TheoryReport {
        experiment_id: ctx.exp.name.clone(),
        max_eig_mismatch: mismatch,
        lemma_residual,
        matched_variant,
        alpha: pred.alpha,
        params: cfg.params(),
    };
    let mut artifacts = Vec::new();
    ctx.write("theory.json", &report.to_json(), &mut artifacts)?;
    let data = json!({
        "lemma_residual": lemma_residual,
        "max_eig_mismatch": mismatch,
        "eigenpair_residual": pair_residual,
        "alpha": pred.alpha,
        "modal": modal_json,
        "split_tol": DEFAULT_SPLIT_TOL,
    });
    Ok(BlockOutput { checks, data, artifacts })
}

fn cert_json(cert: &DominanceCertificate) -> Value {
    serde_json::from_str(&cert.to_json()).expect("certificate json")
}

/// Closed-loop states of `run` from its final training state, subsampled.
fn closed_loop_states(ctx: &Ctx, run: &ModelRun, horizon: f64) -> Result<Vec<Vector>> {
    let dt = ctx.exp.training.h / ctx.exp.training.substeps as f64;
    let traj = closed_loop_forecast(&run.cfg, &run.record.w_out, &run.final_state, horizon, dt)?;
    let max = ctx.exp.dominance.max_states.max(1);
    let stride = traj.reservoir.len().div_ceil(max);
    Ok(traj.reservoir.states.iter().step_by(stride.max(1)).cloned().collect())
}

fn dominance_block(ctx: &Ctx) -> Result<BlockOutput> {
    let mut checks = Vec::new();
    let mut data = serde_json::Map::new();
    for run in ctx.models {
        let cfg = &run.cfg;
        match run.activation {
            Activation::Linear => {
                let j0 = linear_closed_loop_matrix(cfg, &Matrix::zeros(cfg.d, cfg.n));
                let untrained = certify_linear(&j0, 0, cfg.gamma * (1.0 - cfg.omega) / 2.0)?;
                checks.push(Check::lt("untrained_worst_residual", untrained.worst_residual, 0.0));

                let jt = linear_closed_loop_matrix(cfg, &run.record.w_out);
                let mus = eigvals(&(&run.record.w_out * &cfg.w_in))?;
                let set = dominant_set(&mus, &eigvals(&jt)?, cfg.gamma, cfg.omega, 1e-9);
                let trained = certify_linear(&jt, set.cardinality, set.rate_midpoint)?;
                checks.push(Check::lt("trained_worst_residual", trained.worst_residual, 0.0));
                checks.push(Check::le("dominant_set_size", set.cardinality as f64, cfg.d as f64));
                checks.push(Check::le(
                    "certified_p_minus_dominant_set",
                    (trained.p as f64 - set.cardinality as f64).abs(),
                    0.0,
                ));
                data.insert(
                    "linear".into(),
                    json!({
                        "untrained": cert_json(&untrained),
                        "trained": cert_json(&trained),
                        "dominant_set": serde_json::to_value(&set).expect("serializes"),
                        "dominant_eigenvalues": eig_json(&set.eigenvalues),
                    }),
                );
            }
            Activation::Tanh => {
                let horizon = ctx
                    .exp
                    .forecast
                    .as_ref()
                    .map_or(10.0 / (cfg.gamma * (1.0 - cfg.omega)), |f| f.horizon);
                let states = closed_loop_states(ctx, run, horizon)?;
                let choice = linearization_storage(cfg, &run.record.w_out, &states)?;
                let cert = differential_check(
                    cfg,
                    &run.record.w_out,
                    &choice.storage,
                    choice.rate,
                    &states,
                    ctx.exp.dominance.extra_gain_samples,
                    ctx.exp.seed,
                )?;
                // sampled check of an unproven claim: reported, not asserted
                data.insert(
                    "tanh".into(),
                    json!({
                        "certificate": cert_json(&cert),
                        "storage_from": "closed-loop jacobian at the temporal mean state",
                        "linearization_p": choice.p,
                        "trajectory_states": states.len(),
                        "synthetic_samples": ctx.exp.dominance.extra_gain_samples,
                    }),
                );
            }
        }
    }
    let data = Value::Object(data);
    let mut artifacts = Vec::new();
    ctx.write("dominance.json", &serde_json::to_string_pretty(&data).expect("json"), &mut artifacts)?;
    Ok(BlockOutput { checks, data, artifacts })
}

fn forecast_block(ctx: &Ctx) -> Result<BlockOutput> {
    let spec = ctx.exp.forecast.as_ref().expect("validated");
    let truth = ctx.source.future.as_ref().expect("simulated with horizon");
    let sys_dim = ctx.exp.system_dim();
    let substeps = spec.substeps.unwrap_or(ctx.exp.training.substeps);
    let dt = ctx.exp.training.h / substeps as f64;

    let mut artifacts = Vec::new();
    let mut data = serde_json::Map::new();
    let mut errors: Vec<(Activation, Trajectory)> = Vec::new();
    let mut means: BTreeMap<String, f64> = BTreeMap::new();
    for run in ctx.models {
        let label = run.activation.to_string();
        let outcome = closed_loop_forecast(&run.cfg, &run.record.w_out, &run.final_state, spec.horizon, dt).and_then(|fc| {
            let y = Trajectory::new(
                fc.output.times.clone(),
                fc.output.states.iter().map(|y| ctx.source.scaling.invert_vec(&y.rows(0, sys_dim).into_owned())).collect(),
            )?;
            let err = forecast_error(&y, truth)?;
            Ok((y, err))
        });
        match outcome {
            Ok((y, err)) => {
                let mean = window_mean(&err, spec.window)?;
                let sampled = sample_on(&y, &truth.times)?;
                let labels: Vec<String> = (0..sys_dim).map(|k| format!("y{k}")).collect();
                let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                ctx.write(
                    &format!("forecast_{label}.csv"),
                    &sampled.to_csv(&format!("forecast_{label}"), &label_refs),
                    &mut artifacts,
                )?;
                means.insert(label.clone(), mean);
                data.insert(label.clone(), json!({"window_mean_error": mean}));
                errors.push((run.activation, err));
            }
            Err(e) => {
                means.insert(label.clone(), f64::INFINITY);
                data.insert(label.clone(), json!({"error": e.to_string(), "window_mean_error": "inf"}));
            }
        }
    }
    let truth_labels: Vec<String> = (0..sys_dim).map(|k| format!("u{k}")).collect();
    let truth_refs: Vec<&str> = truth_labels.iter().map(String::as_str).collect();
    ctx.write("forecast_truth.csv", &truth.to_csv("forecast_truth", &truth_refs), &mut artifacts)?;

    let mut csv = String::from("# domlab-csv v1 forecast_error\ntime");
    for (a, _) in &errors {
        csv.push_str(&format!(",{a}"));
    }
    csv.push('\n');
    if let Some((_, first)) = errors.first() {
        for (k, t) in first.times.iter().enumerate() {
            csv.push_str(&format!("{t:e}"));
            for (_, e) in &errors {
                match e.states.get(k) {
                    Some(x) => csv.push_str(&format!(",{:e}", x[0])),
                    None => csv.push(','),
                }
            }
            csv.push('\n');
        }
    }
    ctx.write("forecast_error.csv", &csv, &mut artifacts)?;

    let mut checks = Vec::new();
    if let (Some(lin), Some(tanh)) = (means.get("linear"), means.get("tanh")) {
        if ctx.exp.expect.tanh_beats_linear {
            checks.push(Check::lt("tanh_minus_linear_window_error", tanh - lin, 0.0));
        }
    }
    data.insert("window".into(), json!(spec.window));
    data.insert("horizon".into(), json!(spec.horizon));
    Ok(BlockOutput { checks, data: Value::Object(data), artifacts })
}

fn sample_on(y: &Trajectory, times: &[f64]) -> Result<Trajectory> {
    let ts: Vec<f64> = times.iter().copied().filter(|t| *t <= y.end() + 1e-9).collect();
    let states = ts.iter().map(|t| y.interpolate(t.min(y.end()))).collect::<Result<Vec<_>>>()?;
    Trajectory::new(ts, states)
}

fn record_block(blocks: &mut BTreeMap<String, BlockReport>, name: &str, outcome: Result<BlockOutput>) {
    let report = match outcome {
        Ok(out) => BlockReport {
            status: if out.checks.iter().all(|c| c.passed) { BlockStatus::Ok } else { BlockStatus::Failed },
            error: None,
            checks: out.checks,
            data: out.data,
            artifacts: out.artifacts,
        },
        Err(e) => BlockReport {
            status: BlockStatus::Error,
            error: Some(e.to_string()),
            checks: Vec::new(),
            data: Value::Null,
            artifacts: Vec::new(),
        },
    };
    blocks.insert(name.to_string(), report);
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Simulate, drive, train and run every enabled analysis, writing artifacts
/// and `report.json` into `out_dir`. Errors only on setup failures (source
/// simulation, reservoir initialization, training, I/O).
pub fn run(exp: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    exp.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut timings = BTreeMap::new();

    let clock = Instant::now();
    let source = simulate_source(exp)?;
    timings.insert("simulate".to_string(), ms(clock));

    let clock = Instant::now();
    let base = init_reservoir(&exp.reservoir_params(Activation::Linear))?;
    let mut models = Vec::new();
    for a in exp.reservoir.activation.list() {
        models.push(drive_and_train(exp, &base.with_activation(a), &source)?);
    }
    timings.insert("drive_and_train".to_string(), ms(clock));

    let mut setup_artifacts = Vec::new();
    fs::write(out_dir.join("config.toml"), exp.to_toml())?;
    setup_artifacts.push("config.toml".to_string());
    fs::write(
        out_dir.join("input.csv"),
        source.u.to_csv(
            "training_input",
            &(0..exp.reservoir.d).map(|k| format!("u{k}")).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>(),
        ),
    )?;
    setup_artifacts.push("input.csv".to_string());
    for m in &models {
        let name = format!("reservoir_{}.json", m.activation);
        fs::write(out_dir.join(&name), serde_json::to_string(&m.cfg).expect("config json"))?;
        setup_artifacts.push(name);
    }

    let ctx = Ctx {
        exp,
        out: out_dir,
        source: &source,
        models: &models,
    };
    let mut blocks = BTreeMap::new();
    blocks.insert(
        "setup".to_string(),
        BlockReport {
            status: BlockStatus::Ok,
            error: None,
            checks: Vec::new(),
            data: json!({
                "input_rank": numerical_rank(&source.u.data, default_rtol(source.u.rows(), source.u.m())),
                "training_horizon": source.u.end_time(),
            }),
            artifacts: setup_artifacts,
        },
    );
    let a = &exp.analysis;
    let plan: [(&str, bool, fn(&Ctx) -> Result<BlockOutput>); 6] = [
        ("spectrum", a.spectrum, spectrum_block),
        ("rootlocus", a.rootlocus, rootlocus_block),
        ("dmd", a.dmd, dmd_block),
        ("theory_check", a.theory_check, theory_block),
        ("dominance", a.dominance, dominance_block),
        ("forecast", a.forecast, forecast_block),
    ];
    for (name, enabled, block) in plan {
        if enabled {
            let clock = Instant::now();
            record_block(&mut blocks, name, block(&ctx));
            timings.insert(name.to_string(), ms(clock));
        }
    }

    let report = ExperimentReport {
        tool_version: TOOL_VERSION.to_string(),
        config: exp.clone(),
        input_scaling: source.scaling.clone(),
        blocks,
        timings_ms: timings,
        output_dir: out_dir.to_path_buf(),
    };
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report json"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::parse(
            r#"
version = 1
name = "tiny"
system = "custom-signal"
seed = 3
output_dir = "out/tiny"

[system_params.signal]
frequencies = [1.0, 2.3]
phases = [0.0, 0.5]

[reservoir]
n = 12
d = 2
gamma = 1.0
omega = 0.8
sigma_b = 0.0
activation = "both"

[training]
h = 0.1
m = 60
stride = 10
substeps = 20

[analysis]
spectrum = true
rootlocus = true
dmd = true
theory_check = true
dominance = true
forecast = true

[forecast]
horizon = 2.0
window = 1.0
"#,
        )
        .unwrap()
    }

    #[test]
    fn shipped_configs_parse_and_round_trip() {
        for e in SHIPPED {
            let cfg = shipped(e.name).unwrap();
            assert_eq!(cfg.name, e.name);
            assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
            assert_eq!(ExperimentConfig::parse(&cfg.to_json()).unwrap(), cfg);
        }
        assert!(shipped("nope").is_none());
    }

    #[test]
    fn validation_reports_fields() {
        let mut cfg = tiny();
        cfg.reservoir.d = 3;
        assert!(matches!(cfg.validate().unwrap_err(), Error::Config { field, .. } if field == "reservoir.d"));
        let mut cfg = tiny();
        cfg.training.t = Some(5.0);
        assert!(matches!(cfg.validate().unwrap_err(), Error::Config { field, .. } if field == "training.T"));
        let mut cfg = tiny();
        cfg.forecast = None;
        assert!(matches!(cfg.validate().unwrap_err(), Error::Config { field, .. } if field == "forecast"));
        let mut cfg = tiny();
        cfg.reservoir.omega = 1.0;
        assert!(cfg.validate().is_err());
        let err = ExperimentConfig::parse("version = 1\nname = \"x\"\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn duplicate_channel_examples() {
        let cfg = tiny();
        let dup = duplicate_channel(&cfg, 1).unwrap();
        assert_eq!(dup.reservoir.d, cfg.reservoir.d + 1);
        assert_eq!(dup.duplicate_channels, vec![1]);
        assert_eq!(duplicate_channel(&cfg, 2).unwrap_err(), Error::BadChannel { channel: 2, d: 2 });
        let twice = duplicate_channel(&dup, 2).unwrap();
        assert_eq!(twice.reservoir.d, 4);
    }

    #[test]
    fn tiny_run_is_complete_and_deterministic() {
        let cfg = tiny();
        let base = std::env::temp_dir().join(format!("domlab-exp-test-{}", std::process::id()));
        let (a, b) = (base.join("a"), base.join("b"));
        let ra = run(&cfg, &a).unwrap();
        run(&cfg, &b).unwrap();
        for name in ["spectrum", "rootlocus", "dmd", "theory_check", "dominance", "forecast"] {
            let block = ra.block(name).unwrap();
            assert_ne!(block.status, BlockStatus::Error, "{name}: {:?}", block.error);
        }
        for block in ["theory_check", "dmd", "rootlocus"] {
            assert_eq!(ra.block(block).unwrap().status, BlockStatus::Ok, "{block}: {:?}", ra.block(block).unwrap().checks);
        }
        for entry in fs::read_dir(&a).unwrap() {
            let name = entry.unwrap().file_name();
            if name == "report.json" {
                continue;
            }
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
        }
        let csv = fs::read_to_string(a.join("rootlocus.csv")).unwrap();
        assert!(csv.starts_with("# domlab-csv v1 rootlocus\n"));
        fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn duplicate_of_zero_channel_keeps_rank() {
        let mut cfg = tiny();
        cfg.system_params.signal.as_mut().unwrap().amplitudes = Some(vec![1.0, 0.0]);
        cfg.training.normalize = false;
        cfg.analysis = AnalysisFlags { rootlocus: true, ..Default::default() };
        cfg.forecast = None;
        cfg.reservoir.activation = ActivationChoice::Linear;
        let dup = duplicate_channel(&cfg, 1).unwrap();
        let base = std::env::temp_dir().join(format!("domlab-dup-test-{}", std::process::id()));
        let r1 = run(&cfg, &base.join("a")).unwrap();
        let r2 = run(&dup, &base.join("b")).unwrap();
        let rank = |r: &ExperimentReport| r.block("rootlocus").unwrap().data["coupling_rank"].as_u64().unwrap();
        assert_eq!(rank(&r1), 1);
        assert_eq!(rank(&r2), 1);
        fs::remove_dir_all(&base).ok();
    }
}
