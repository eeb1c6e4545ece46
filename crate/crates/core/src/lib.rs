//! Bayesian time-varying parameter VECM with stochastic volatility, horseshoe
//! shrinkage and ex-post sparsification.

pub mod cointegration;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod linalg;
pub mod sampler;
pub mod shrinkage;
pub mod sparsify;
pub mod states;
pub mod synth;
pub mod volatility;

pub use error::{Error, Result};
