//! Hierarchical vehicle-to-grid coordination.
//!
//! An aggregator agent picks the fleet's power each hour, a stake-weighted
//! allocation splits it over the plugged-in EVs, and a battery model tracks
//! state of health and peak power.

// `!(x > y)` comparisons are used on purpose so NaN inputs take the
// rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod baselines;
pub mod battery;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod fleet;
pub mod metrics;
pub mod ppo;
pub mod schedule;

pub use error::{Error, Result};
