//! Sparse matrices, a reusable symmetric (Cholesky) factorization for the
//! constant system matrix, and a pivoting sparse LU used for nonsymmetric
//! adjoint systems.

mod cholesky;
mod lu;
mod ordering;
mod sparse;

pub use cholesky::{factorize_spd, SymmetricFactorization};
pub use lu::{solve_general, LuFactorization};
pub use ordering::{block_minimum_degree, minimum_degree};
pub use sparse::{SparseBuilder, SparseMatrix};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (nonpositive pivot at column {column})")]
    NotPositiveDefinite { column: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is singular (no acceptable pivot in column {column})")]
    SingularMatrix { column: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}
