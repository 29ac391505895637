//! Simulation-based calibration: replicated data generation and fitting,
//! rank statistics, and uniformity diagnostics.

mod conjugate;
mod harness;
mod stats;
mod two_stage;

pub use conjugate::{ConditioningMode, ConjugateNormalModel};
pub use harness::{
    replicate_rng, run_sbc, QuantityDiagnostics, QuantityDraws, RankRecord, ReplicateFailure,
    ReplicateModel, SbcReport, SbcSettings,
};
pub use stats::{
    band_grid, batch_node_tests, chi_square_uniformity, ecdf_difference_band,
    ecdf_difference_band_for_ranks, kolmogorov_sf, ks_uniformity_test, rank_statistic,
    rank_to_unit, BandEnvelope, BatchResult, ChiSquareResult, EcdfBand, KsResult, BAND_DATASETS,
    BAND_MIN_SAMPLES, KS_MIN_SAMPLES,
};
pub use two_stage::{Conditioning, Quantity, TwoStageSbc};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SbcError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("too few samples: {got} given, {needed} needed")]
    TooFewSamples { needed: usize, got: usize },
    #[error("{failed} of {total} replicates failed; first cause: {first_cause}")]
    FailureBudgetExceeded {
        failed: usize,
        total: usize,
        first_cause: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}
