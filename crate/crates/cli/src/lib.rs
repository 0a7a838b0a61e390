//! Experiment runner for the fogstore simulator: configuration files,
//! latency sweeps and the bundled star-topology setups.

pub mod config;
pub mod experiment;
pub mod presets;

pub use config::{ConfigError, ExperimentConfig, SweepSetting};
pub use experiment::{render_csv, CellMode, CellReport, Experiment, ExperimentError, Overrides};
