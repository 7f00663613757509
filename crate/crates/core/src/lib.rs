pub mod backtest;
pub mod calibration;
pub mod cli;
pub mod data;
pub mod error;
pub mod forecaster;
pub mod gsom;
pub mod market;
pub mod report;
pub mod strategies;
pub mod synthetic;

pub use error::{Error, Result};
