//! Hierarchical low-rank tensors with singular value soft thresholding and
//! soft-thresholded Richardson solvers for elliptic operator equations.
//!
//! The entry points are [`HTensor`] for the tensor format,
//! [`shrinkage::soft_threshold`] for the hierarchical shrinkage operator and
//! [`solver::st_solve`] / [`solver::ie_solve`] for the two iterative solvers.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dim_tree;
pub mod error;
pub mod htensor;
mod linalg;
pub mod operators;
pub mod reference;
pub mod shrinkage;
pub mod solver;
pub mod validate;

#[cfg(test)]
pub(crate) mod testing;

pub use dim_tree::{DimensionTree, EdgeId, SiteId};
pub use error::{Error, Result};
pub use htensor::{EdgeSpectrum, Gauge, HTensor, Truncation};
pub use linalg::singular_values;
pub use operators::{KronSumOperator, SpectrumBounds};
pub use solver::{IterationTrace, SolverConfig};
