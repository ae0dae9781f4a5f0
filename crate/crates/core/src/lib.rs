//! Dirty paper coding over fading MIMO channels with imperfect transmitter
//! channel knowledge.
//!
//! The channel is `Y = H (X + S) + Z` with the interference `S` known to the
//! transmitter and the fading `H` known perfectly only at the receiver. The
//! crate evaluates DPC-achievable rates by Monte Carlo over a fixed sample
//! bank, solves for the inflation factor, and jointly optimizes the input
//! covariance.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod covopt;
pub mod error;
pub mod inflation;
pub mod lab;
pub mod linalg;
pub mod model;
pub mod rate;

pub use error::{FdpcError, Result};
pub use model::{ChannelSpec, ChannelTemplate, CsitModel, Dimensions, FadingModel, Field, SampleBank};
pub use rate::{InflationFactor, RateEstimate};
