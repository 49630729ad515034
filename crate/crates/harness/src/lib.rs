//! Experiment orchestration for `hew-core`: configuration, data preparation,
//! parallel runs with JSONL metrics, tuning sweeps, property suites, plots and
//! dataset fetching.

// Same conventions as `hew-core`: NaN-rejecting negated comparisons and index loops.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod fetch;
pub mod plot;
pub mod prepare;
pub mod protocol;
pub mod runner;
pub mod sweep;
pub mod verify;
