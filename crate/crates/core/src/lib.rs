//! Two-stage Bayesian inference for spatially misaligned data: sparse
//! precision algebra, SPDE Matérn fields on triangulated meshes, a Laplace
//! approximation engine for latent Gaussian models, uncertainty propagation
//! between stages, and a simulation-based calibration harness.

pub mod experiment;
pub mod lgm;
pub mod mesh;
pub mod par;
pub mod sbc;
pub mod sparse;
pub mod spde;
pub mod twostage;
pub mod util;
