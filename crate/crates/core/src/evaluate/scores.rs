use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Root mean squared errors per series and over all cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Rmse {
    pub per_series: Vec<f64>,
    pub total: f64,
}

/// RMSE of point forecasts against actuals, both `H × M`.
pub fn rmse(point: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<Rmse> {
    if point.shape() != actual.shape() {
        return Err(Error::Contract(format!(
            "forecasts {:?} and actuals {:?} differ in shape",
            point.shape(),
            actual.shape()
        )));
    }
    if point.is_empty() {
        return Err(Error::Contract("no forecasts to score".into()));
    }
    let err = point - actual;
    let per_series = err
        .column_iter()
        .map(|c| (c.norm_squared() / c.len() as f64).sqrt())
        .collect();
    let total = (err.norm_squared() / err.len() as f64).sqrt();
    Ok(Rmse { per_series, total })
}

/// Sample CRPS `(1/S) sum |x_s - y| - (1/(2 S^2)) sum_s sum_r |x_s - x_r|`,
/// evaluated in `O(S log S)` through the order statistics.
pub fn crps_sample(ensemble: &[f64], y: f64) -> Result<f64> {
    let s = ensemble.len();
    if s < 2 {
        return Err(Error::Contract(format!("CRPS needs at least two draws, got {s}")));
    }
    // Centering on y keeps a degenerate ensemble at y exactly at zero.
    let mut x: Vec<f64> = ensemble.iter().map(|v| v - y).collect();
    x.sort_by(f64::total_cmp);
    let n = s as f64;
    let mut abs = 0.0;
    let mut spread = 0.0;
    for (i, v) in x.iter().enumerate() {
        abs += v.abs();
        spread += (2.0 * (i + 1) as f64 - n - 1.0) * v;
    }
    Ok((abs / n - spread / (n * n)).max(0.0))
}

/// Median of a sample (average of the two central order statistics for even sizes).
pub fn median(v: &[f64]) -> f64 {
    let mut x = v.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}
