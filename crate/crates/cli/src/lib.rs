//! Experiment harness around `raps-core` and `raps-sim`.
//!
//! * [`run::run_comparison`] drives KF, TD and the selectors over one shared
//!   scenario and produces per-epoch records plus a summary.
//! * [`bench::run_bench`] times Full- against Diag-RAPS for several
//!   measurement counts.
//! * [`oracle::run_oracle_check`] compares both selectors with exhaustive
//!   search on random small instances.
//!
//! Every file written carries the build version, the hash of the effective
//! configuration and the seed.

pub mod bench;
pub mod config;
pub mod oracle;
pub mod output;
pub mod run;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Sim(#[from] raps_sim::SimError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<raps_core::Error> for CliError {
    fn from(e: raps_core::Error) -> Self {
        CliError::Solver(e.to_string())
    }
}
