//! Command-line pipeline: synthetic cohort, triage MDP, tree policy,
//! bootstrap simulation and reports, each step writing its artifacts into
//! an output directory.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{parse_config, parse_config_str, Overrides, RunConfig};
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, Command, Outcome};
