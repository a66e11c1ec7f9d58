//! Neural estimation of mutual information with variational lower bounds.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: a reverse-mode tape over dense `f64` matrices.
//! * [`critics`]: statistics networks producing `N × N` score matrices, and
//!   their optimizers.
//! * [`estimators`]: the MINE, SMILE, InfoNCE, NWJ, TUBA and JS bounds, their
//!   regularized counterparts, and batch-averaging / variance diagnostics.
//! * [`datasets`]: synthetic tasks whose true mutual information is known.
//! * [`trainer`]: the optimisation loop with term decomposition, drift and
//!   divergence tracking.
//!
//! All quantities are in nats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod matrix;

pub use matrix::Matrix;
pub mod critics;
pub mod datasets;
pub mod error;
pub mod estimators;
pub mod trainer;

pub use error::{Error, Result};
