//! Experiment configuration: one JSON document per run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ensembles::{InitKind, Sampler};
use crate::error::{Error, Result};
use crate::limits::{DEFAULT_RESOLUTION, MAX_DEGREE};
use crate::models::{build_model, ModelKind, ModelParams, ModelSpec};
use crate::sde::StepControl;
use crate::stats::DEFAULT_LEVEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Moments,
    Clt,
    Compare,
    Stationarity,
    Identity,
    OracleMatch,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Moments => "moments",
            Experiment::Clt => "clt",
            Experiment::Compare => "compare",
            Experiment::Stationarity => "stationarity",
            Experiment::Identity => "identity",
            Experiment::OracleMatch => "oracle_match",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub n_particles: usize,
    #[serde(default)]
    pub params: ModelParams,
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelSpec> {
        build_model(self.kind, self.n_particles, self.params.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    /// Every particle at the origin. Runs start from the exact law at
    /// `numerics.entrance_time`.
    #[default]
    Zero,
    Ensemble,
    Dominated { a: f64, b: f64 },
    Explicit { positions: Vec<f64> },
}

impl InitSection {
    pub fn to_kind(&self) -> InitKind {
        match self {
            InitSection::Zero => InitKind::Zero,
            InitSection::Ensemble => InitKind::Ensemble,
            InitSection::Dominated { a, b } => InitKind::DominatedEnsemble { a: *a, b: *b },
            InitSection::Explicit { positions } => InitKind::Explicit(positions.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub horizon: f64,
    pub dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<f64>,
    pub max_substeps: usize,
    pub drift_ratio: f64,
    pub degrees: Vec<usize>,
    /// Start time for zero initial conditions.
    pub entrance_time: f64,
    /// Output times; `None` means only the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<f64>>,
    pub sampler: Sampler,
    /// Step of the moment-hierarchy integrator.
    pub resolution: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        let step = StepControl::default();
        Self {
            horizon: 1.0,
            dt: step.dt,
            min_gap: None,
            max_substeps: step.max_substeps,
            drift_ratio: step.drift_ratio,
            degrees: vec![1, 2],
            entrance_time: 0.1,
            checkpoints: None,
            sampler: Sampler::default(),
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl Numerics {
    pub fn step_control(&self) -> StepControl {
        StepControl {
            dt: self.dt,
            min_gap: self.min_gap,
            max_substeps: self.max_substeps,
            drift_ratio: self.drift_ratio,
            ..StepControl::default()
        }
    }

    pub fn max_degree(&self) -> usize {
        self.degrees.iter().copied().max().unwrap_or(0)
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoints.clone().unwrap_or_else(|| vec![self.horizon])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltOptions {
    /// Draws of the Gaussian family pushed through the limit recursion.
    pub synth_draws: usize,
    /// Number of intervals of the synthesis grid on `[0, horizon]`.
    pub synth_intervals: usize,
    /// Also record noise and export `Q` and `M`.
    pub centered: bool,
}

impl Default for CltOptions {
    fn default() -> Self {
        Self { synth_draws: 10_000, synth_intervals: 100, centered: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareOptions {
    /// Upper system; kind defaults to the lower one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high_kind: Option<ModelKind>,
    pub high_params: ModelParams,
    /// Step used to rerun seeds that showed a violation.
    pub refine_dt: f64,
    /// Fraction of seeds that must be clean at the base step.
    pub clean_fraction: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { high_kind: None, high_params: ModelParams::default(), refine_dt: 2.5e-4, clean_fraction: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationarityOptions {
    /// Offset `a` of the time change `(t + a)^alpha`.
    pub offset: f64,
    pub times: Vec<f64>,
    pub max_degree: usize,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        Self { offset: 1.0, times: vec![0.5, 1.0], max_degree: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityOptions {
    pub self_similarity: bool,
    /// The earlier time compared with the horizon.
    pub early_time: f64,
    pub time_change: bool,
    /// OU time `t`, compared with Dyson at `e^t - 1`.
    pub ou_time: f64,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        Self { self_similarity: true, early_time: 0.5, time_change: true, ou_time: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    pub max_degree: usize,
    /// Number of equally spaced checkpoints on `(0, horizon]` when
    /// `numerics.checkpoints` is absent.
    pub checkpoints: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { max_degree: 4, checkpoints: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    pub model: ModelSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub clt: CltOptions,
    #[serde(default)]
    pub compare: CompareOptions,
    #[serde(default)]
    pub stationarity: StationarityOptions,
    #[serde(default)]
    pub identity: IdentityOptions,
    #[serde(default)]
    pub oracle: OracleOptions,
}

fn one() -> usize {
    1
}

fn default_level() -> f64 {
    DEFAULT_LEVEL
}

const REQUIRED: [&str; 3] = ["experiment", "seed", "model"];

/// Parses and validates a config. `fallback` fills a missing `experiment`
/// (the CLI subcommand); a present one must agree with it.
pub fn parse_config_for(text: &str, fallback: Option<Experiment>) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::config("", e.to_string()))?;
    let obj = value.as_object_mut().ok_or_else(|| Error::config("", "expected a JSON object"))?;
    if let Some(exp) = fallback {
        match obj.get("experiment") {
            None => {
                obj.insert("experiment".into(), serde_json::to_value(exp).expect("enum serializes"));
            }
            Some(v) if v != &serde_json::to_value(exp).expect("enum serializes") => {
                return Err(Error::config("experiment", format!("config is for {v}, command is {}", exp.name())));
            }
            Some(_) => {}
        }
    }
    for key in REQUIRED {
        if !obj.contains_key(key) {
            return Err(Error::config(key, "missing"));
        }
    }
    if let Some(model) = obj.get("model").and_then(|m| m.as_object()) {
        for key in ["kind", "n_particles"] {
            if !model.contains_key(key) {
                return Err(Error::config(format!("model.{key}"), "missing"));
            }
        }
    }
    let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { String::new() } else { path }, e.inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_for(text, None)
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.n_particles == 0 {
            return Err(Error::config("model.n_particles", "must be >= 1"));
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas", "must be >= 1"));
        }
        self.model.build().map_err(|e| Error::config("model.params", e.to_string()))?;
        let n = &self.numerics;
        positive("numerics.horizon", n.horizon)?;
        positive("numerics.dt", n.dt)?;
        positive("numerics.resolution", n.resolution)?;
        if let Some(g) = n.min_gap {
            positive("numerics.min_gap", g)?;
        }
        if n.max_substeps == 0 {
            return Err(Error::config("numerics.max_substeps", "must be >= 1"));
        }
        if !(n.drift_ratio >= 0.0 && n.drift_ratio.is_finite()) {
            return Err(Error::config("numerics.drift_ratio", "must be finite and >= 0"));
        }
        if n.degrees.iter().any(|&k| k > MAX_DEGREE) {
            return Err(Error::config("numerics.degrees", format!("degrees must be <= {MAX_DEGREE}")));
        }
        if self.init == InitSection::Zero && !(n.entrance_time > 0.0 && n.entrance_time < n.horizon) {
            return Err(Error::config("numerics.entrance_time", "must lie in (0, horizon)"));
        }
        if let Some(cp) = &n.checkpoints {
            if cp.iter().any(|&t| !(t >= 0.0 && t <= n.horizon)) {
                return Err(Error::config("numerics.checkpoints", "must lie in [0, horizon]"));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config("level", "must lie in (0, 1)"));
        }
        match self.experiment {
            Experiment::Clt => {
                // The kernel of degree k needs moments up to 2k.
                if 2 * n.max_degree() > MAX_DEGREE {
                    return Err(Error::config("numerics.degrees", format!("CLT degrees must be <= {}", MAX_DEGREE / 2)));
                }
                if n.degrees.is_empty() || n.degrees.contains(&0) {
                    return Err(Error::config("numerics.degrees", "CLT degrees must be >= 1"));
                }
                if self.clt.synth_intervals == 0 {
                    return Err(Error::config("clt.synth_intervals", "must be >= 1"));
                }
            }
            Experiment::Compare => {
                positive("compare.refine_dt", self.compare.refine_dt)?;
                if !(0.0..=1.0).contains(&self.compare.clean_fraction) {
                    return Err(Error::config("compare.clean_fraction", "must lie in [0, 1]"));
                }
                let kind = self.compare.high_kind.unwrap_or(self.model.kind);
                build_model(kind, self.model.n_particles, self.compare.high_params.clone())
                    .map_err(|e| Error::config("compare.high_params", e.to_string()))?;
            }
            Experiment::Stationarity => {
                positive("stationarity.offset", self.stationarity.offset)?;
                if self.stationarity.max_degree > MAX_DEGREE {
                    return Err(Error::config("stationarity.max_degree", format!("must be <= {MAX_DEGREE}")));
                }
                if self.stationarity.times.iter().any(|&t| !(t > 0.0 && t <= n.horizon)) {
                    return Err(Error::config("stationarity.times", "must lie in (0, horizon]"));
                }
            }
            Experiment::Identity => {
                let o = &self.identity;
                if !(o.early_time > 0.0 && o.early_time < n.horizon) {
                    return Err(Error::config("identity.early_time", "must lie in (0, horizon)"));
                }
                positive("identity.ou_time", o.ou_time)?;
            }
            Experiment::OracleMatch => {
                if !matches!(self.model.kind, ModelKind::Dyson | ModelKind::Wishart | ModelKind::OrnsteinUhlenbeck) {
                    return Err(Error::config("model.kind", "oracle match needs Dyson, Wishart or OrnsteinUhlenbeck"));
                }
                if self.oracle.max_degree > MAX_DEGREE {
                    return Err(Error::config("oracle.max_degree", format!("must be <= {MAX_DEGREE}")));
                }
                if self.oracle.checkpoints == 0 {
                    return Err(Error::config("oracle.checkpoints", "must be >= 1"));
                }
            }
            Experiment::Simulate | Experiment::Moments => {}
        }
        Ok(())
    }

    /// Output directory, falling back to `out/<experiment>`.
    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out").join(self.experiment.name()))
    }
}
