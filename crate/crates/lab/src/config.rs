//! Experiment configuration: a JSON file, command-line flags, or both (flags
//! win).
//!
//! ```json
//! { "schema": "bdflow.experiment/1", "triple": "triples/b05.json",
//!   "eps": [0.2, 0.1, 0.05, 0.025], "nu": 0.25, "checks": ["all"],
//!   "grid": { "half_length": null, "m": null }, "out": "out", "seed": 1 }
//! ```

use std::path::{Path, PathBuf};

use bdflow_core::{Grid, ProblemTriple};
use serde::{Deserialize, Serialize};

use crate::checks::Check;
use crate::triple_file::{TripleFileError, TripleSpec};

pub const EXPERIMENT_SCHEMA: &str = "bdflow.experiment/1";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {0:?}, expected {EXPERIMENT_SCHEMA:?}")]
    Schema(String),
    #[error("no triple given")]
    NoTriple,
    #[error("triple: {0}")]
    Triple(#[from] TripleFileError),
    #[error("ε list is empty")]
    NoEps,
    #[error("ε = {0} must lie in (0, 1)")]
    BadEps(f64),
    #[error("ν = {0} must lie in (0, 1/2)")]
    BadNu(f64),
    #[error("grid: T = {half_length:?}, m = {m:?} (need T > 0 and odd m ≥ 3)")]
    BadGrid { half_length: Option<f64>, m: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TripleRef {
    Path(PathBuf),
    Inline(TripleSpec),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GridOverride {
    pub half_length: Option<f64>,
    pub m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: String,
    pub triple: Option<TripleRef>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub grid: GridOverride,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Points per Conley face.
    #[serde(default = "default_face_samples")]
    pub face_samples: usize,
}

fn default_nu() -> f64 {
    0.25
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    1
}

fn default_face_samples() -> usize {
    1000
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: EXPERIMENT_SCHEMA.to_string(),
            triple: None,
            eps: vec![0.2, 0.1, 0.05, 0.025],
            grid: GridOverride::default(),
            nu: default_nu(),
            checks: Vec::new(),
            out: default_out(),
            seed: default_seed(),
            face_samples: default_face_samples(),
        }
    }
}

/// A validated configuration with the triple loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub spec: TripleSpec,
    pub triple: ProblemTriple,
    pub checks: Vec<Check>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if cfg.schema != EXPERIMENT_SCHEMA {
            return Err(ConfigError::Schema(cfg.schema));
        }
        Ok(cfg)
    }

    pub fn resolve(self) -> Result<Resolved, ConfigError> {
        if self.eps.is_empty() {
            return Err(ConfigError::NoEps);
        }
        if let Some(&e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(ConfigError::BadEps(e));
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(ConfigError::BadNu(self.nu));
        }
        let g = self.grid;
        if g.half_length.is_some_and(|t| !(t > 0.0)) || g.m.is_some_and(|m| m < 3 || m % 2 == 0) {
            return Err(ConfigError::BadGrid { half_length: g.half_length, m: g.m });
        }
        let spec = match &self.triple {
            None => return Err(ConfigError::NoTriple),
            Some(TripleRef::Path(p)) => TripleSpec::load(p)?,
            Some(TripleRef::Inline(s)) => s.clone(),
        };
        let triple = spec.build()?;
        let checks = Check::parse_list(&self.checks);
        Ok(Resolved { config: self, spec, triple, checks })
    }
}

impl Resolved {
    /// The default resolved grid with any T or m override applied.
    pub fn grid(&self, eps: f64) -> Grid {
        let base = Grid::resolved(&self.triple, eps);
        let half = self.config.grid.half_length.unwrap_or(base.t_end());
        match self.config.grid.m {
            Some(m) => Grid::symmetric(half, m).expect("validated"),
            None if self.config.grid.half_length.is_some() => Grid::with_spacing(half, base.dt()).expect("validated"),
            None => base,
        }
    }
}
