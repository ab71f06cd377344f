//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use orlicz::approx::{ApproxSample, Calibration, PhiBarSample};
use orlicz::conditions::{ContinuitySample, FitOptions, Modulus};
use orlicz::growth::GrowthOptions;
use orlicz::solver::{Boundary, ComparisonOptions, SolveOptions};
use orlicz::structures::{registry, ModelSpec};
use orlicz::Point;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// One step of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Stage {
    Certificate,
    Conditions,
    ApproxVerify,
    Solve,
    Probes,
    Comparison,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Certificate,
        Stage::Conditions,
        Stage::ApproxVerify,
        Stage::Solve,
        Stage::Probes,
        Stage::Comparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Certificate => "certificate",
            Stage::Conditions => "conditions",
            Stage::ApproxVerify => "approx_verify",
            Stage::Solve => "solve",
            Stage::Probes => "probes",
            Stage::Comparison => "comparison",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Conditions,
    Certificate,
    ApproxVerify,
    /// Solve followed by the probes on the solution.
    Solve,
    Comparison,
    #[default]
    Full,
}

impl Pipeline {
    pub fn stages(self) -> Vec<Stage> {
        match self {
            Pipeline::Conditions => vec![Stage::Conditions],
            Pipeline::Certificate => vec![Stage::Certificate],
            Pipeline::ApproxVerify => vec![Stage::ApproxVerify],
            Pipeline::Solve => vec![Stage::Solve, Stage::Probes],
            Pipeline::Comparison => vec![Stage::Comparison],
            Pipeline::Full => Stage::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub pipeline: Pipeline,
    /// Seed of every direction sample; replaces the seeds of the sections below.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub certificate: GrowthOptions,
    #[serde(default)]
    pub conditions: ConditionsConfig,
    #[serde(default)]
    pub approx: ApproxConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub probes: ProbesConfig,
    #[serde(default)]
    pub comparison: ComparisonConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionsConfig {
    /// Constant `K` of the admissible range.
    pub k: f64,
    pub epsilon: f64,
    pub sample: ContinuitySample,
    pub fit: FitOptions,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            epsilon: 0.5,
            sample: ContinuitySample::default(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    pub x0: Point,
    pub t1: f64,
    pub t2: f64,
    pub sample: ApproxSample,
    pub calibration: Calibration,
    pub phibar: PhiBarSample,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            x0: [0.5, 0.5],
            t1: 0.5,
            t2: 2.0,
            sample: ApproxSample::default(),
            calibration: Calibration::default(),
            phibar: PhiBarSample::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    #[default]
    Minimize,
    Equation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub cells: usize,
    pub boundary: Boundary,
    pub method: SolveMethod,
    /// Freeze the coefficients at this point.
    pub frozen_at: Option<Point>,
    pub options: SolveOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            cells: 128,
            boundary: Boundary::saddle(),
            method: SolveMethod::Minimize,
            frozen_at: None,
            options: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbesConfig {
    pub center: Point,
    /// Radii of the oscillation fits.
    pub radii: Vec<f64>,
    /// Radius `r` of the higher-integrability ball `B_r`.
    pub r: f64,
    pub sigma_grid: Vec<f64>,
    pub cap: f64,
}

impl Default for ProbesConfig {
    fn default() -> Self {
        Self {
            center: [0.5, 0.5],
            radii: vec![0.04, 0.08, 0.16, 0.24, 0.4],
            r: 0.1,
            sigma_grid: (0..=20).map(|k| 0.05 * k as f64).collect(),
            cap: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ball {
    pub center: Point,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    #[default]
    Energy,
    Field,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    /// Modulus `ω` of the coefficients.
    pub omega: Modulus,
    pub operator: OperatorKind,
    pub balls: Vec<Ball>,
    pub options: ComparisonOptions,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            omega: Modulus::power(0.3),
            operator: OperatorKind::Energy,
            balls: [0.2, 0.1, 0.05]
                .iter()
                .map(|&r| Ball { center: [0.5, 0.5], r })
                .collect(),
            options: ComparisonOptions::default(),
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let mut message = e.inner().to_string();
            if path.starts_with("model") && message.contains("unknown variant") {
                let names: Vec<&str> = registry().iter().map(|f| f.name).collect();
                message = format!("{message}; registered families: {}", names.join(", "));
            }
            invalid(&path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// Copies `seed` into every sample of the config.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.certificate.sample.seed = seed;
        self.conditions.sample.seed = seed;
        self.approx.sample.seed = seed;
        self.approx.calibration.sample.seed = seed;
        self.comparison.options.calibration.sample.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let core = |path: &str, r: orlicz::Result<()>| r.map_err(|e| invalid(path, e.to_string()));
        core("model", self.model.validate())?;
        core("certificate.knots", self.certificate.knots.validate())?;
        core("certificate.sample.radii", self.certificate.sample.radii.validate())?;
        core("conditions.sample", self.conditions.sample.validate())?;
        core("solve.options", self.solve.options.validate())?;
        core("comparison.options.solve", self.comparison.options.solve.validate())?;
        if !(self.conditions.k > 0.0) {
            return Err(invalid("conditions.k", "must be positive"));
        }
        if !(self.conditions.epsilon > 0.0 && self.conditions.epsilon <= 1.0) {
            return Err(invalid("conditions.epsilon", "must lie in (0, 1]"));
        }
        let a = &self.approx;
        if !(a.t1 > 0.0 && a.t1 <= 0.5) {
            return Err(invalid("approx.t1", format!("need 0 < t1 <= 1/2, got {}", a.t1)));
        }
        if !(a.t2 >= 2.0 && a.t2.is_finite()) {
            return Err(invalid("approx.t2", format!("need 2 <= t2 < inf, got {}", a.t2)));
        }
        if self.solve.cells < 2 {
            return Err(invalid("solve.cells", "need at least 2 cells per side"));
        }
        if self.probes.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(invalid("probes.radii", "radii must be positive"));
        }
        if !(self.probes.r > 0.0) {
            return Err(invalid("probes.r", "must be positive"));
        }
        for (i, b) in self.comparison.balls.iter().enumerate() {
            if !(b.r > 0.0 && b.r.is_finite()) {
                return Err(invalid(&format!("comparison.balls[{i}].r"), "must be positive"));
            }
        }
        if self.comparison.options.cells % 4 != 0 || self.comparison.options.cells == 0 {
            return Err(invalid("comparison.options.cells", "must be a positive multiple of 4"));
        }
        Ok(())
    }
}
