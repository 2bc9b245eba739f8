//! Sparse matrices and the direct solver behind the time stepper.

mod csr;
mod lu;

pub use csr::{dot, norm2, CsrMatrix};
pub use lu::{reverse_cuthill_mckee, LuFactorization};

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LinalgError {
    #[error("entry ({row}, {col}) is outside a {n}x{n} matrix")]
    IndexOutOfRange { row: usize, col: usize, n: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is singular (zero pivot at step {pivot})")]
    Singular { pivot: usize },

    #[error("entry ({row}, {col}) is not part of the sparsity pattern")]
    NotInPattern { row: usize, col: usize },
}
