//! Sparse symmetric matrices, Cholesky factorization and Gaussian sampling.

mod cholesky;
mod matrix;
mod ordering;

pub use cholesky::{factorize, factorize_with, CholeskyFactor};
pub use matrix::{CsrMatrix, SymSparseMatrix};
pub use ordering::Ordering;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index ({row}, {col}) out of bounds for dimension {dim}")]
    IndexOutOfBounds { row: usize, col: usize, dim: usize },
    #[error("matrix must have at least one row")]
    EmptyMatrix,
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
