//! Library side of the `ran` command-line tool: run configs, checkpoints and
//! the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod run_config;

pub use checkpoint::Checkpoint;
pub use run_config::RunConfig;
