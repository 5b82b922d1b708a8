//! Experiment runner for the `mhaar-core` kernels: TOML configuration,
//! dataset generation and ingestion, seeded multi-run execution and
//! artifact output. The `mhaar` binary is a thin wrapper around [`cli`].

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod data;
pub mod run;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] mhaar_core::Error),
    #[error("{0} invariant check(s) failed")]
    Verify(usize),
}

impl CliError {
    /// Process exit status: 2 for numerical-contract violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Verify(_) => 2,
            _ => 1,
        }
    }
}
