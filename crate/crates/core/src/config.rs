//! Run specifications: a benchmark plus the complete solver option matrix,
//! read from TOML.
//!
//! ```toml
//! version = 1
//! benchmark = "pendulum"
//! seed = 0
//!
//! [integrator]
//! scheme = "irk-gl2"
//! steps = 2
//!
//! [condensing]
//! mode = "full"
//!
//! [qp]
//! path = "dense"
//!
//! [sqp]
//! mode = "rti"
//!
//! [cmon]
//! enabled = true
//! eta_pri = 0.05
//! ```
//!
//! Every section and key is optional; missing values take the documented
//! defaults. Unknown keys are rejected.

use crate::benchmarks::{BenchmarkKind, ProblemConfig};
use crate::integrator::{IntegratorConfig, Scheme};
use crate::qp::QpSolverConfig;
use crate::shooting::CmonConfig;
use crate::sim::SimConfig;
use crate::sqp::{CondensingMode, QpPath, SolverOptions, SqpConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read spec: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse spec: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialise spec: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported spec version {0} (expected {SPEC_VERSION})")]
    Version(u32),
    #[error("invalid spec: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CondensingSection {
    pub mode: CondensingMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QpSection {
    pub path: QpPath,
    pub tol: f64,
    pub max_iters: usize,
    pub reg_eps: f64,
}

impl Default for QpSection {
    fn default() -> Self {
        let d = QpSolverConfig::default();
        QpSection {
            path: QpPath::Dense,
            tol: d.tol,
            max_iters: d.max_iters,
            reg_eps: d.reg_eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// defaults to the benchmark's own duration
    pub t_end: Option<f64>,
    pub plant_substeps: usize,
    pub plant_scheme: Scheme,
    pub noise_std: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection {
            t_end: None,
            plant_substeps: d.plant_substeps,
            plant_scheme: d.plant_scheme,
            noise_std: d.noise_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub version: u32,
    pub benchmark: BenchmarkKind,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// evaluate shooting intervals in parallel
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub condensing: CondensingSection,
    #[serde(default)]
    pub qp: QpSection,
    #[serde(default)]
    pub sqp: SqpConfig,
    #[serde(default)]
    pub cmon: CmonConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub problem: ProblemConfig,
}

impl RunSpec {
    /// Defaults for a benchmark.
    pub fn new(benchmark: BenchmarkKind) -> Self {
        RunSpec {
            version: SPEC_VERSION,
            benchmark,
            output_dir: None,
            seed: 0,
            parallel: false,
            integrator: IntegratorConfig::default(),
            condensing: CondensingSection::default(),
            qp: QpSection::default(),
            sqp: SqpConfig::default(),
            cmon: CmonConfig::default(),
            sim: SimSection::default(),
            problem: ProblemConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SpecError> {
        let spec: RunSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, SpecError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.version != SPEC_VERSION {
            return Err(SpecError::Version(self.version));
        }
        self.solver_options().validate().map_err(SpecError::Invalid)?;
        self.sim_config(1.0).validate().map_err(SpecError::Invalid)?;
        if let Some(t) = self.sim.t_end {
            if !(t > 0.0) {
                return Err(SpecError::Invalid("sim.t_end must be > 0".into()));
            }
        }
        if let Some(n) = self.problem.horizon {
            if n == 0 {
                return Err(SpecError::Invalid("problem.horizon must be >= 1".into()));
            }
        }
        if let Some(ts) = self.problem.ts {
            if !(ts > 0.0) {
                return Err(SpecError::Invalid("problem.ts must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            integrator: self.integrator,
            condensing: self.condensing.mode,
            qp_path: self.qp.path,
            qp: QpSolverConfig {
                tol: self.qp.tol,
                max_iters: self.qp.max_iters,
                reg_eps: self.qp.reg_eps,
            },
            sqp: self.sqp,
            cmon: self.cmon,
            parallel: self.parallel,
        }
    }

    pub fn sim_config(&self, default_t_end: f64) -> SimConfig {
        SimConfig {
            t_end: self.sim.t_end.unwrap_or(default_t_end),
            plant_substeps: self.sim.plant_substeps,
            plant_scheme: self.sim.plant_scheme,
            noise_std: self.sim.noise_std,
            seed: self.seed,
        }
    }

    /// Sets a dotted key such as `integrator.scheme` or `sqp.max_iters` from
    /// its text form; the result is re-validated as a whole.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SpecError> {
        self.set_all(&[(key, value)])
    }

    /// Applies several overrides at once and validates only the end result,
    /// so that coupled keys (`qp.path`, `condensing.mode`) can change together.
    pub fn set_all(&mut self, pairs: &[(&str, &str)]) -> Result<(), SpecError> {
        let mut root = toml::Table::try_from(&*self)?;
        for (key, value) in pairs {
            let parts: Vec<&str> = key.split('.').collect();
            let (last, path) = parts
                .split_last()
                .filter(|(l, _)| !l.is_empty())
                .ok_or_else(|| SpecError::Invalid("empty key".into()))?;
            let mut table = &mut root;
            for p in path {
                table = table
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| SpecError::Invalid(format!("{key}: {p} is not a section")))?;
            }
            table.insert(last.to_string(), parse_value(value));
        }
        let spec: RunSpec = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| SpecError::Invalid(e.message().to_string()))?;
        spec.validate()?;
        *self = spec;
        Ok(())
    }
}

/// Interprets a command-line value as a TOML scalar, falling back to a
/// plain string.
fn parse_value(s: &str) -> toml::Value {
    if let Ok(v) = s.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = s.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    toml::Value::String(s.to_string())
}
