//! Forward-looking network cost allocation with Shapley values.
//!
//! A probabilistic Turvey characteristic function prices each coalition of
//! customers by the chance that its grown peak exceeds the line limit.
//! Shapley values are computed exactly, by stratified sampling, or over
//! load-profile clusters, and compared against energy- and peak-based
//! allocations.

pub mod analysis;
pub mod approx;
pub mod error;
pub mod game;
pub mod loads;
pub mod peaks;
pub mod tariffs;
pub mod turvey;

pub use error::{Error, Result};
