//! Experiment presets, scene construction, and the artifact-writing
//! drivers behind the command-line front end.

mod config;
mod run;
mod scene;

pub use config::{
    Algorithm, ExperimentConfig, FixedHypers, MaternPriorReading, MeshSpec, MethodChoice, PresetId,
    Scale,
};
pub use run::{
    illustrate, run_experiment, sbc_model, sweep_tau, write_cdf_csv, FitSummary, Illustration,
    Manifest, SweepResult, SOFTWARE_VERSION,
};
pub use scene::{
    uniform_sites, Scene, BLOCKS_PER_SIDE, BLOCK_EXPECTED, COVARIATE_RANGE, COVARIATE_SIGMA,
    QUAD_PER_SIDE,
};

use thiserror::Error;

use crate::mesh::MeshError;
use crate::sbc::SbcError;
use crate::spde::SpdeError;
use crate::twostage::TwoStageError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(
        "replicate failure budget exceeded: {failed} of {total} failed; first cause: {first_cause}"
    )]
    BudgetExceeded {
        failed: usize,
        total: usize,
        first_cause: String,
    },
    #[error(transparent)]
    Sbc(SbcError),
    #[error(transparent)]
    TwoStage(#[from] TwoStageError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Spde(#[from] SpdeError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<SbcError> for ExperimentError {
    fn from(e: SbcError) -> Self {
        match e {
            SbcError::FailureBudgetExceeded {
                failed,
                total,
                first_cause,
            } => ExperimentError::BudgetExceeded {
                failed,
                total,
                first_cause,
            },
            SbcError::Invalid(m) => ExperimentError::Config(m),
            other => ExperimentError::Sbc(other),
        }
    }
}
