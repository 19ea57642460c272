//! Run configuration, read from a sectioned `key = value` (TOML) file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::check::CheckConfig;
use crate::driver::AdmmConfig;
use crate::error::{Error, Result};
use crate::linsolve::LinearSolverConfig;
use crate::problems::ProblemSpec;
use crate::psolver::DenoiserSpec;
use crate::qsolver::{BoxBounds, NewtonConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmSection {
    pub beta: f64,
    pub outer_iters: usize,
    pub primal_tol: Option<f64>,
}

impl Default for AdmmSection {
    fn default() -> Self {
        let d = AdmmConfig::default();
        Self {
            beta: d.beta,
            outer_iters: d.outer_iters,
            primal_tol: d.primal_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write the generated observation and its nodal companion.
    pub write_observation: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("coeffid-out"),
            write_observation: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ns: Vec<usize>,
    pub deltas: Vec<f64>,
    pub file: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ns: vec![64, 128],
            deltas: vec![0.01, 0.05],
            file: "sweep.csv".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: ProblemSpec,
    #[serde(default)]
    pub admm: AdmmSection,
    #[serde(default)]
    pub bounds: BoxBounds,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default = "default_lin_state")]
    pub lin_state: LinearSolverConfig,
    #[serde(default)]
    pub denoiser: DenoiserSpec,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_lin_state() -> LinearSolverConfig {
    AdmmConfig::default().lin_state
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            admm: AdmmSection::default(),
            bounds: BoxBounds::default(),
            newton: NewtonConfig::default(),
            lin_state: default_lin_state(),
            denoiser: DenoiserSpec::default(),
            output: OutputConfig::default(),
            check: CheckConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => Error::Config(format!("{}: {other}", path.display())),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        if let Some(q) = &cfg.problem.q_file {
            if q.is_relative() {
                cfg.problem.q_file = Some(base.join(q));
            }
        }
        Ok(cfg)
    }

    pub fn admm_config(&self) -> AdmmConfig {
        AdmmConfig {
            beta: self.admm.beta,
            outer_iters: self.admm.outer_iters,
            primal_tol: self.admm.primal_tol,
            bounds: self.bounds,
            denoiser: self.denoiser.clone(),
            newton: self.newton.clone(),
            lin_state: self.lin_state.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::InvalidArgument(msg) => Error::Config(msg),
            other => other,
        };
        self.problem.validate().map_err(wrap)?;
        self.admm_config().validate().map_err(wrap)?;
        if self.check.n < 2 {
            return Err(Error::Config("check.n must be at least 2".into()));
        }
        if self.sweep.ns.iter().any(|&n| n < 2) || self.sweep.deltas.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Config(
                "sweep.ns must be ≥ 2 and sweep.deltas ≥ 0".into(),
            ));
        }
        Ok(())
    }
}
