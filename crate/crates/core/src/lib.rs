//! One-step-ahead VaR and ES forecasting, forecast combination and backtesting.

// NaN must fail range guards, so `!(x > 0.0)` is written on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod cli;
pub mod combination;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod optim;
pub mod quantile_models;
pub mod series;
pub mod volatility;

pub use error::{Error, Result};
