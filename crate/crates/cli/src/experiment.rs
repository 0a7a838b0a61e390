use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fogstore_core::netsim::{FaultScript, NetworkConfig, SimError};
use fogstore_core::store::{Completion, OpKind};
use fogstore_core::topology::Topology;
use fogstore_core::workload::{closed_loop_ops, LatencyStats, WorkloadSpec, CSV_HEADER};
use fogstore_core::{ConsistencyLevel, FogStore, RegionSpecs, StoreConfig};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{self, ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setting `{setting}`: {message}")]
    Setting { setting: String, message: String },
    #[error("cell {cell} ran out of simulated time")]
    Budget { cell: String, source: SimError },
    #[error("cannot write {}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

/// Everything an experiment needs, loaded and validated.
#[derive(Clone)]
pub struct Experiment {
    pub settings: Vec<(String, Arc<Topology>)>,
    pub regions: Option<RegionSpecs>,
    pub workload: WorkloadSpec,
    pub faults: Option<FaultScript>,
    pub levels: Vec<ConsistencyLevel>,
    pub directions: Vec<OpKind>,
    pub store: StoreConfig,
    pub network: NetworkConfig,
    pub max_sim_ms: f64,
}

/// What one cell measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellMode {
    /// `direction` runs at `level`, the other direction at ONE.
    Fixed { level: ConsistencyLevel, direction: OpKind },
    /// Levels come from the consistency regions.
    Mapped,
}

#[derive(Debug, Clone)]
pub struct CellReport {
    pub setting: String,
    pub mode: CellMode,
    /// CSV rows without header.
    pub rows: Vec<String>,
    /// Queries that completed with an error.
    pub failed: usize,
    pub trace: Option<Vec<String>>,
}

impl CellReport {
    pub fn name(&self) -> String {
        match self.mode {
            CellMode::Fixed { level, direction } => format!("{}-{level}-{direction}", self.setting),
            CellMode::Mapped => format!("{}-mapped", self.setting),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ops: Option<usize>,
}

impl Experiment {
    /// Loads every file `cfg` refers to. With `sweep_settings` false the
    /// base topology is the only setting, named after its file.
    pub fn load(cfg: &ExperimentConfig, sweep_settings: bool, overrides: Overrides) -> Result<Self, ExperimentError> {
        let base = config::load_topology(&cfg.topology_path)?;
        let mut settings = Vec::new();
        if sweep_settings && !cfg.sweep.is_empty() {
            for s in &cfg.sweep {
                let topo = match (&s.topology_path, s.multiplier) {
                    (Some(path), _) => config::load_topology(path)?,
                    (None, Some(m)) => base.scaled(m).map_err(|e| ExperimentError::Setting {
                        setting: s.name.clone(),
                        message: e.to_string(),
                    })?,
                    (None, None) => base.clone(),
                };
                settings.push((s.name.clone(), Arc::new(topo)));
            }
        } else {
            let name = cfg
                .topology_path
                .file_stem()
                .map_or_else(|| "base".to_owned(), |s| s.to_string_lossy().into_owned());
            settings.push((name, Arc::new(base)));
        }

        let regions = cfg.regions_path.as_deref().map(config::load_regions).transpose()?;
        let mut workload = config::load_workload(&cfg.workload_path)?;
        if let Some(seed) = overrides.seed.or(cfg.seed) {
            workload.seed = seed;
        }
        if let Some(ops) = overrides.ops {
            workload.op_count = ops;
        }
        let faults = match &cfg.fault_path {
            Some(path) => Some(config::load_faults(path, &settings[0].1)?),
            None => None,
        };
        for (name, topo) in &settings {
            for c in &workload.client_positions {
                if let Some(attach) = &c.attach {
                    topo.ix(attach).map_err(|e| ExperimentError::Setting {
                        setting: name.clone(),
                        message: format!("client `{}`: {e}", c.client_id),
                    })?;
                }
            }
        }
        Ok(Self {
            settings,
            regions,
            workload,
            faults,
            levels: cfg.levels.clone(),
            directions: cfg.directions.clone(),
            store: StoreConfig {
                replication_factor: cfg.replication_factor,
                timeout_ms: cfg.timeout_ms,
                client_timeout_ms: None,
            },
            network: NetworkConfig {
                jitter_ms: cfg.jitter_ms,
                seed: overrides.seed.or(cfg.seed).unwrap_or(0),
            },
            max_sim_ms: cfg.max_sim_ms,
        })
    }

    /// Cells in report order: setting, then level, then direction.
    pub fn cells(&self) -> Vec<(usize, CellMode)> {
        let mut cells = Vec::new();
        for s in 0..self.settings.len() {
            if self.regions.is_some() {
                cells.push((s, CellMode::Mapped));
                continue;
            }
            for &level in &self.levels {
                for &direction in &self.directions {
                    cells.push((s, CellMode::Fixed { level, direction }));
                }
            }
        }
        cells
    }

    pub fn run_cell(&self, setting: usize, mode: CellMode, trace: bool) -> Result<CellReport, ExperimentError> {
        let (name, topo) = &self.settings[setting];
        let mut workload = self.workload.clone();
        let regions = match mode {
            CellMode::Fixed { level, direction } => {
                let (read, write) = match direction {
                    OpKind::Read => (level, ConsistencyLevel::One),
                    OpKind::Write => (ConsistencyLevel::One, level),
                };
                workload.fixed_read_level = Some(read);
                workload.fixed_write_level = Some(write);
                RegionSpecs::fixed(read, write)
            }
            CellMode::Mapped => self.regions.clone().expect("mapped cells have regions"),
        };
        let mut store = FogStore::with_network(Arc::clone(topo), regions, self.store, self.network);
        for c in &workload.client_positions {
            if let Some(attach) = &c.attach {
                store
                    .register_client(&c.client_id, attach)
                    .expect("attach points checked at load");
            }
        }
        if let Some(script) = &self.faults {
            store.load_faults(script);
        }
        if trace {
            store.enable_trace();
        }
        let ops = closed_loop_ops(&workload).expect("workload validated at load");
        let mut report = CellReport {
            setting: name.clone(),
            mode,
            rows: Vec::new(),
            failed: 0,
            trace: None,
        };
        let completions = store
            .run_closed_loop(ops, self.max_sim_ms)
            .map_err(|source| ExperimentError::Budget {
                cell: report.name(),
                source,
            })?;
        report.failed = completions.iter().filter(|c| c.outcome.is_err()).count();
        report.rows = rows(name, mode, &completions);
        report.trace = trace.then(|| store.take_trace());
        Ok(report)
    }

    /// Runs every cell, in parallel, returning reports in cell order.
    pub fn run(&self, trace: bool) -> Result<Vec<CellReport>, ExperimentError> {
        self.cells()
            .into_par_iter()
            .map(|(s, mode)| self.run_cell(s, mode, trace))
            .collect()
    }
}

/// Stats rows for a cell. Fixed cells report only the measured direction;
/// mapped cells report every (level used, direction) pair that occurred.
fn rows(setting: &str, mode: CellMode, completions: &[Completion]) -> Vec<String> {
    let mut groups: BTreeMap<(ConsistencyLevel, OpKind), LatencyStats> = BTreeMap::new();
    for c in completions {
        let (Ok(result), Some(op)) = (&c.outcome, c.kind.op_kind()) else {
            continue;
        };
        groups
            .entry((result.level_used, op))
            .or_default()
            .record(op, result.latency_ms);
    }
    groups
        .iter()
        .filter(|((level, op), _)| match mode {
            CellMode::Fixed { level: l, direction } => *level == l && *op == direction,
            CellMode::Mapped => true,
        })
        .map(|(&(level, op), stats)| {
            stats
                .summary(op)
                .expect("groups hold at least one sample")
                .csv_row(setting, level, op)
        })
        .collect()
}

/// Header plus every row, newline terminated.
pub fn render_csv(reports: &[CellReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in reports.iter().flat_map(|r| &r.rows) {
        out.push_str(row);
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Write {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

/// Writes each report's trace to `<dir>/<cell>.trace.csv`.
pub fn write_traces(dir: &Path, reports: &[CellReport]) -> Result<(), ExperimentError> {
    for r in reports {
        if let Some(lines) = &r.trace {
            let mut text = String::from("t_ms,seq,kind,from,to,summary\n");
            for l in lines {
                text.push_str(l);
                text.push('\n');
            }
            write_file(&dir.join(format!("{}.trace.csv", r.name())), &text)?;
        }
    }
    Ok(())
}
