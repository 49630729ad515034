//! Horizon-aware weighted local SGD for convex finite-sum federated problems.
//!
//! The crate is organised bottom-up:
//!
//! * [`scalar`] holds the scalar envelope kernels that every rate reduces to.
//! * [`models`] provides the objective families and their gradient oracles.
//! * [`certificate`] evaluates the one-step certificate and all coefficient systems.
//! * [`solver`] minimises the control objectives (KKT weights, amplitudes, simplex QPs).
//! * [`algorithms`] runs federated rounds for the weighted methods and the baselines.
//! * [`data`] loads, standardises and partitions datasets.

// `!(x > 0.0)` is the NaN-rejecting form used throughout for argument checks;
// index loops over several parallel arrays read better than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algorithms;
pub mod certificate;
pub mod data;
pub mod error;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use error::{HewError, Result};
