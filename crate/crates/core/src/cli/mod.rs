//! Experiment runner behind the `mbu-lab` binary.

mod commands;
mod config;
mod run;

use thiserror::Error;

pub use commands::{
    cmd_appendix_a, cmd_learn, cmd_run, cmd_selfmod, cmd_sweep, learn_report, main_with_args, selfmod_report, Cli, Command,
    LearnReport, RankedModel,
};
pub use config::{AgentKind, ExperimentConfig, Maturity, OnContradiction, OutputFormat, RawConfig};
pub use run::{run_experiment, Phase, RunOutput, RunSummary, StepRecord};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or violated precondition. Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// The agent could not continue, for instance no binding for its utility
    /// at maturity. Exit code 1.
    #[error("experiment failed: {0}")]
    Failed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}
