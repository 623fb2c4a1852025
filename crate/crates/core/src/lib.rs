//! Large-scale multivariate two-sample testing with block Hotelling T²
//! statistics.
//!
//! A dataset is `m` feature blocks observed in two groups. Each block gets a
//! two-sample Hotelling T²; the global null "no block differs" is tested
//! through the maximum over blocks, calibrated by a Monte-Carlo table of the
//! single-block null law ([`nullcal`]) rather than the extreme-value limit.
//! Extreme-value, higher-criticism and max-t baselines live in
//! [`globaltest`], and [`simharness`] regenerates size and power studies.

pub mod error;
pub mod globaltest;
pub mod hotelling;
pub mod linalg;
pub mod nullcal;
pub mod randdist;
pub mod simharness;

pub use error::{Error, Result};
