//! Dynamic spillover-graph realized-volatility forecasting.

pub mod error;
pub mod linalg;
pub mod panel;
pub mod spillover;
pub mod har;
pub mod dcrnn;
pub mod training;
pub mod synth;
pub mod evaluation;
pub mod cli;

pub use error::{Error, Result};
