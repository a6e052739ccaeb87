//! Command-line driver: config ingestion, stage dispatch and report output.

pub mod cli;
pub mod config;
pub mod output;
pub mod run;
pub mod stages;

pub use cli::{cli_main, THREADS_ENV};
pub use config::{Command, ConfigError, Numerics, Resolved, RunConfig};
pub use run::{run, Check, ErrorReport, RunError, RunOutcome, Status, Summary};

macro_rules! schema {
    () => {
        "1.0"
    };
}

/// Version of the report layout, embedded in every JSON artifact.
pub const SCHEMA_VERSION: &str = schema!();

/// `--version` text.
pub const VERSION_LINE: &str = concat!(env!("CARGO_PKG_VERSION"), " (report schema ", schema!(), ")");
