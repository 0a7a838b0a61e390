use std::path::{Path, PathBuf};

use fogstore_core::netsim::FaultScript;
use fogstore_core::store::OpKind;
use fogstore_core::topology::Topology;
use fogstore_core::workload::WorkloadSpec;
use fogstore_core::{ConsistencyLevel, RegionSpecs};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error("{}: field `{field}`: {message}", path.display())]
    Field {
        path: PathBuf,
        field: &'static str,
        message: String,
    },
}

impl ConfigError {
    fn invalid(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Invalid {
            path: path.to_owned(),
            message: err.to_string(),
        }
    }
}

/// One latency setting of a sweep: the base topology scaled by
/// `multiplier`, or a separate topology file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSetting {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_path: Option<PathBuf>,
}

fn all_levels() -> Vec<ConsistencyLevel> {
    ConsistencyLevel::ALL_LEVELS.to_vec()
}

fn both_directions() -> Vec<OpKind> {
    vec![OpKind::Read, OpKind::Write]
}

fn default_rf() -> usize {
    3
}

fn default_timeout() -> f64 {
    10_000.0
}

fn default_budget() -> f64 {
    1e9
}

/// An experiment file. Relative paths are resolved against the directory
/// containing the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology_path: PathBuf,
    /// Without regions every cell runs at fixed levels taken from `levels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions_path: Option<PathBuf>,
    pub workload_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_path: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Vec<SweepSetting>,
    #[serde(default = "all_levels")]
    pub levels: Vec<ConsistencyLevel>,
    #[serde(default = "both_directions")]
    pub directions: Vec<OpKind>,
    pub output_path: PathBuf,
    /// Overrides the workload's seed; also seeds network jitter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_rf")]
    pub replication_factor: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    /// Simulated-time budget per cell.
    #[serde(default = "default_budget")]
    pub max_sim_ms: f64,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = read(path)?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| ConfigError::invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.check(path)?;
        Ok(cfg)
    }

    /// Makes every relative path relative to `base` instead.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.topology_path);
        fix(&mut self.workload_path);
        fix(&mut self.output_path);
        self.regions_path.as_mut().map(fix);
        self.fault_path.as_mut().map(fix);
        for s in &mut self.sweep {
            s.topology_path.as_mut().map(fix);
        }
    }

    fn check(&self, path: &Path) -> Result<(), ConfigError> {
        let field = |field, message: &str| ConfigError::Field {
            path: path.to_owned(),
            field,
            message: message.to_owned(),
        };
        if self.levels.is_empty() {
            return Err(field("levels", "must not be empty"));
        }
        if self.directions.is_empty() {
            return Err(field("directions", "must not be empty"));
        }
        if self.replication_factor == 0 {
            return Err(field("replication_factor", "must be at least 1"));
        }
        if !(self.timeout_ms > 0.0 && self.max_sim_ms > 0.0) {
            return Err(field("timeout_ms", "timeouts and budgets must be positive"));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(field("jitter_ms", "must be a non-negative number"));
        }
        for s in &self.sweep {
            match (s.multiplier, &s.topology_path) {
                (Some(_), Some(_)) => {
                    return Err(field("sweep", "a setting takes a multiplier or a topology, not both"))
                }
                (Some(m), None) if !(m > 0.0 && m.is_finite()) => {
                    return Err(field("sweep", "multipliers must be positive"))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_topology(path: &Path) -> Result<Topology, ConfigError> {
    Topology::from_json(&read(path)?).map_err(|e| ConfigError::invalid(path, e))
}

pub fn load_workload(path: &Path) -> Result<WorkloadSpec, ConfigError> {
    WorkloadSpec::from_json(&read(path)?).map_err(|e| ConfigError::invalid(path, e))
}

pub fn load_regions(path: &Path) -> Result<RegionSpecs, ConfigError> {
    RegionSpecs::from_json(&read(path)?).map_err(|e| ConfigError::invalid(path, e))
}

pub fn load_faults(path: &Path, topology: &Topology) -> Result<FaultScript, ConfigError> {
    FaultScript::from_json(&read(path)?, topology).map_err(|e| ConfigError::invalid(path, e))
}
