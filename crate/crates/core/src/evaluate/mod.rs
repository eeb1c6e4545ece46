//! Predictive simulation, forecast scoring, model confidence sets and the
//! volatility principal component.

mod backtest;
mod forecast;
mod mcs;
mod pca;
mod scores;

pub use backtest::{
    backtest, derive_seed, BacktestConfig, BacktestResult, ForecastRun, ModelFailure, ModelScores, ModelSpec,
    PointForecast,
};
pub use forecast::{predict_one_step, Forecast, ForecastOptions};
pub use mcs::{mcs, LossMatrix, McsEntry, McsOptions, McsResult};
pub use pca::{vol_pca, Pca};
pub use scores::{crps_sample, median, rmse, Rmse};
