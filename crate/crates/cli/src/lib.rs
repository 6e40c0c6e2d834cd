//! Scenario front end: JSON configs in, CSV series and JSON reports out.

pub mod config;
pub mod plots;
pub mod run;

pub use config::{parse_config, parse_config_str, ConfigError, ScenarioConfig, Violation};
pub use plots::{emit_plots, PlotError, PlotOutcome};
pub use run::{config_hash, run, run_dir, Fit, RunError, RunReport, Verdict};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// A verdict failed, or an IO problem outside config parsing.
    pub const FAILED: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Io { .. } => exit::FAILED,
            RunError::Numerical(_) => exit::NUMERICAL,
        }
    }
}
