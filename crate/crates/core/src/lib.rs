//! Neural networks over symmetric positive definite matrices with Riemannian
//! batch normalization.
//!
//! - [`symlin`]: eigendecomposition, spectral matrix functions and their gradients
//! - [`manifold`]: affine-invariant geometry (distance, exp/log maps, barycenters, transport)
//! - [`net`]: BiMap, ReEig, LogEig, Riemannian batch norm and the classification head
//! - [`optim`]: Stiefel, SPD and Euclidean parameter updates
//! - [`data`]: synthetic covariance datasets and their on-disk format
//! - [`cli`]: training, evaluation, baseline and sweep commands

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod manifold;
pub mod net;
pub mod optim;
pub mod symlin;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use symlin::{EigDecomposition, ScalarFun, SpdMatrix, SymMatrix};
