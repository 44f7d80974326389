//! Scenario runner for the helper selection simulator: TOML scenarios in,
//! per-figure CSV traces and a structured summary out.

use thiserror::Error;

pub mod output;
pub mod runner;
pub mod scenario;

/// Runner errors, each mapped to a process exit code category.
#[derive(Debug, Error)]
pub enum CliError {
    /// Scenario file violates the schema.
    #[error("scenario schema: {0}")]
    Schema(String),
    /// Scenario is well-formed but semantically invalid.
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    /// Instance exceeds an enumeration budget.
    #[error("budget: {0}")]
    Budget(String),
    /// A contract violation surfaced while running.
    #[error("simulation: {0}")]
    Simulation(String),
}

impl CliError {
    /// Exit code category: 2 schema/config, 3 io, 4 budget, 5 simulation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Budget(_) => 4,
            CliError::Simulation(_) => 5,
        }
    }
}
