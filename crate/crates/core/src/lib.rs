//! Deterministic simulator of blockchain-backed federated learning under a
//! zero-trust access model.
//!
//! Devices train a multinomial logistic regression locally; updates are
//! verified and logged on a hash-chained ledger, screened and trust-weighted
//! before aggregation. Trust comes from fixed-width clustering of device
//! context observations. Every random draw derives from one master seed.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod attacks;
pub mod cli;
pub mod clustering;
pub mod data;
mod error;
pub mod ledger;
pub mod model;
pub mod params;
pub mod seed;
pub mod sim;
pub mod trust;

pub use error::{Error, Result};
pub use params::ParamVector;
pub use sim::{run_scenario, ScenarioConfig, Topology};
