//! Sparse and dense kernels plus the gradient tape used for training.

pub mod dense;
pub mod gradcheck;
pub mod sparse;
pub mod tape;

pub use dense::DenseMatrix;
pub use gradcheck::grad_check;
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var};
