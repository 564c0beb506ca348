//! Experiment configuration, run records, the experiment runners behind the
//! command-line tool, and sweeps.

pub mod config;
pub mod experiments;
pub mod record;
pub mod sweep;

pub use config::{ExperimentConfig, RunKind};
pub use experiments::{calibrate, run_point, CalibrationReport};
pub use record::RunRecord;
