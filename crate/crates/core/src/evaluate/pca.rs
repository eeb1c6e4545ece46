use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_sorted;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// First principal component score per period.
    pub scores: Vec<f64>,
    pub loadings: Vec<f64>,
    /// Share of total variance explained by the first component.
    pub explained: f64,
}

/// First principal component of `T × M` log-volatility paths, signed to correlate
/// positively with the cross-sectional mean.
pub fn vol_pca(paths: &DMatrix<f64>) -> Result<Pca> {
    let (t, m) = paths.shape();
    if m < 2 || t < 2 {
        return Err(Error::Contract("principal components need at least two series and periods".into()));
    }
    let means = paths.row_mean();
    let mut centered = paths.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.tr_mul(&centered) / (t as f64 - 1.0);
    let (vals, vecs) = sym_eigen_sorted(&cov);
    let total: f64 = vals.iter().sum();
    let mut load = vecs.column(m - 1).into_owned();
    let mut scores = &centered * &load;
    let cross: Vec<f64> = centered.row_iter().map(|r| r.sum() / m as f64).collect();
    let dot: f64 = scores.iter().zip(&cross).map(|(a, b)| a * b).sum();
    if dot < 0.0 {
        load.neg_mut();
        scores.neg_mut();
    }
    Ok(Pca {
        scores: scores.iter().copied().collect(),
        loadings: load.iter().copied().collect(),
        explained: if total > 0.0 { vals[m - 1] / total } else { 0.0 },
    })
}
