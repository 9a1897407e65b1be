use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::calculus::Stencil;
use crate::estimate::{Bandwidth, KernelConfig, DEFAULT_DENSITY_FLOOR};
use crate::flow::{Scheme, REFERENCE_STEPS};
use crate::process::{ProcessConfig, ProcessSpec};
use crate::verify::VerifyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub process: ProcessConfig,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Seeds visited by `sweep`; empty means `[seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_time")]
    pub time: f64,
    /// Number of time nodes (including both ends) for path ensembles.
    #[serde(default = "default_time_nodes")]
    pub time_nodes: usize,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub bandwidth: BandwidthSetting,
    #[serde(default = "default_floor")]
    pub density_floor: f64,
    /// Time step for field time derivatives; defaults to 1e-5 for the
    /// oracle and 1e-3 for estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_t: Option<f64>,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub theorem: Theorem,
    #[serde(default)]
    pub verify: VerifySettings,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_n() -> usize {
    10_000
}
fn default_time() -> f64 {
    0.5
}
fn default_time_nodes() -> usize {
    11
}
fn default_floor() -> f64 {
    DEFAULT_DENSITY_FLOOR
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nodes: usize,
    /// Explicit `[lo, hi]` per axis; otherwise mean ± 3 sd (oracle) or the
    /// `quantile` box of the samples (estimate).
    #[serde(rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    pub stencil: Stencil,
    pub quantile: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nodes: 60,
            bounds: None,
            stencil: Stencil::default(),
            quantile: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Silverman,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Rule(BandwidthRule),
    Fixed(f64),
}

impl Default for BandwidthSetting {
    fn default() -> Self {
        BandwidthSetting::Rule(BandwidthRule::Silverman)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    Oracle,
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    #[default]
    Affine,
    Geometric,
    Determinism,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub continuity: f64,
    pub momentum: f64,
    pub balance: f64,
    pub material: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            continuity: 1e-3,
            momentum: 1e-3,
            balance: 1e-3,
            material: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    pub queries: usize,
    pub control_ratio: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        let v = VerifyConfig::default();
        VerifySettings {
            queries: v.queries,
            control_ratio: v.control_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub scheme: Scheme,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    /// Number of start points when none are given.
    pub n_points: usize,
    /// Place start points on a regular grid over mean ± 2 sd of the source
    /// instead of sampling them.
    pub grid_points: bool,
    pub reference_steps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            scheme: Scheme::Rk4,
            steps: 100,
            points: None,
            n_points: 100,
            grid_points: false,
            reference_steps: REFERENCE_STEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    /// RMSE of the kernel velocity against the oracle on nine points.
    VRmse,
    /// Leave-one-out `E[tr Π]` at the configured time.
    TracePi,
}

impl SweepMetric {
    pub fn name(self) -> &'static str {
        match self {
            SweepMetric::VRmse => "v_rmse",
            SweepMetric::TracePi => "trace_pi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub param: String,
    pub values: Vec<f64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<SweepMetric>,
}

fn default_metrics() -> Vec<SweepMetric> {
    vec![SweepMetric::VRmse, SweepMetric::TracePi]
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn validate(&self) -> Result<ProcessSpec, CliError> {
        if self.n == 0 {
            return Err(CliError::Config("n must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.time) {
            return Err(CliError::Config(format!("time must lie in [0, 1], got {}", self.time)));
        }
        if self.time_nodes < 2 {
            return Err(CliError::Config("time_nodes must be at least 2".into()));
        }
        if self.grid.nodes < 5 {
            return Err(CliError::Config("grid.nodes must be at least 5".into()));
        }
        if !(0.0..0.5).contains(&self.grid.quantile) {
            return Err(CliError::Config("grid.quantile must lie in [0, 0.5)".into()));
        }
        if let Some(b) = &self.grid.bounds {
            if b.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && hi > lo)) {
                return Err(CliError::Config("grid.box entries need lo < hi".into()));
            }
        }
        if let BandwidthSetting::Fixed(h) = self.bandwidth {
            positive("bandwidth", h)?;
        }
        if !(self.density_floor.is_finite() && self.density_floor >= 0.0) {
            return Err(CliError::Config("density_floor must be non-negative".into()));
        }
        if let Some(h) = self.h_t {
            positive("h_t", h)?;
        }
        let t = &self.tolerances;
        positive("tolerances.continuity", t.continuity)?;
        positive("tolerances.momentum", t.momentum)?;
        positive("tolerances.balance", t.balance)?;
        positive("tolerances.material", t.material)?;
        if self.verify.queries == 0 {
            return Err(CliError::Config("verify.queries must be positive".into()));
        }
        positive("verify.control_ratio", self.verify.control_ratio)?;
        if self.flow.steps == 0 || self.flow.reference_steps == 0 || self.flow.n_points == 0 {
            return Err(CliError::Config(
                "flow.steps, flow.reference_steps and flow.n_points must be positive".into(),
            ));
        }
        let spec = self
            .process
            .build()
            .map_err(|e| CliError::Config(format!("process: {e}")))?;
        let d = spec.dim();
        if self.grid.bounds.as_ref().is_some_and(|b| b.len() != d) {
            return Err(CliError::Config(format!("grid.box needs {d} axes")));
        }
        if let Some(p) = &self.flow.points {
            if p.is_empty() || p.iter().any(|x| x.len() != d) {
                return Err(CliError::Config(format!("flow.points must be nonempty rows of length {d}")));
            }
        }
        Ok(spec)
    }

    pub fn kernel(&self) -> KernelConfig {
        KernelConfig {
            bandwidth: match self.bandwidth {
                BandwidthSetting::Rule(BandwidthRule::Silverman) => Bandwidth::Silverman,
                BandwidthSetting::Fixed(h) => Bandwidth::Fixed(h),
            },
            density_floor: self.density_floor,
            ..KernelConfig::default()
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            kernel: self.kernel(),
            queries: self.verify.queries,
            control_ratio: self.verify.control_ratio,
            grid_nodes: self.grid.nodes,
            ..VerifyConfig::default()
        }
    }

    pub fn h_t(&self) -> f64 {
        self.h_t.unwrap_or(match self.source {
            Source::Oracle => 1e-5,
            Source::Estimate => 1e-3,
        })
    }

    pub fn canonical_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        bytes.push(b'\n');
        bytes
    }
}
