//! Dense, banded, and low-rank linear algebra with exact parameter
//! accounting. All operations accumulate in a fixed order so that results
//! are bit-reproducible given the same inputs.

mod banded;
mod eigen;
mod matrix;

pub use banded::{banded_param_count, BandedMatrix};
pub use eigen::{cholesky, generalized_eigen, pinv_psd, symmetric_eigen, SymmetricEigen};
pub use matrix::{glorot_init, LowRankMatrix, Matrix};
