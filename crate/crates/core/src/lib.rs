//! Masked auto-encoder pretraining for multivariate time series with missing
//! values, built on dynamic-kernel bidirectional dilated convolutions.

pub mod data;
pub mod dbt;
pub mod dpe;
pub mod cli;
pub mod error;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{DmaeError, Result};
