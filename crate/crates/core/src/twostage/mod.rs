//! Two-stage inference: a first-stage spatial regression whose latent
//! surface enters a second-stage model, with plug-in, resampling, full-Q
//! and low-rank-Q propagation of first-stage uncertainty.

mod first_stage;
mod fit;
mod grid;
mod methods;
mod model;
mod simulate;

pub use first_stage::{
    FirstStageFit, FirstStageModel, FirstStagePriors, LatentLayout, FIXED_EFFECTS,
};
pub use fit::{
    GammaLaw, MarginalCdf, MixtureComponent, SecondStageFit, CDF_POINTS, GAMMA0, GAMMA1,
};
pub use grid::{gamma1_grid_fit, Gamma1Grid, GridFit};
pub use methods::{
    coarse_gls_mean, coarse_precision, fit_full_q, fit_lowrank_q, fit_method, fit_plugin,
    fit_resampling, fit_resampling_with_draws, CoarseBasis, PropagationMethod,
};
pub use model::{ExtraCovariates, Family, GammaPriors, SecondStageModel};
pub use simulate::{simulate_two_stage, SimulatedData, Truth};

use thiserror::Error;

use crate::lgm::LgmError;
use crate::mesh::MeshError;
use crate::sparse::SparseError;
use crate::spde::SpdeError;

#[derive(Debug, Error)]
pub enum TwoStageError {
    #[error(transparent)]
    Lgm(#[from] LgmError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Spde(#[from] SpdeError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}
