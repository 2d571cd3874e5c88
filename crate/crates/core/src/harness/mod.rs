//! Experiment drivers, configuration and CSV output behind the CLI.

pub mod calc;
pub mod config;
pub mod csv;
pub mod experiment;
pub mod lemmas;
pub mod twin;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{BoundModeChoice, DataSource, KvConfig, OptimizerChoice, RunConfig};
pub use experiment::{prepare_data, run_experiment, train, RunOutput, StepRecord, STEP_HEADER};
pub use twin::{run_twin_chain, TwinConfig, TwinReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::nn::NnError),
    #[error(transparent)]
    Bound(#[from] crate::bounds::BoundError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error("parameters became non-finite at step {step}")]
    Diverged {
        step: usize,
        records: Box<Vec<StepRecord>>,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl HarnessError {
    /// Process exit code: 1 usage, 2 runtime, 3 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Verification(_) => 3,
            _ => 2,
        }
    }
}
