//! Synthetic cointegrated panels with known long-run structure and stochastic volatility.
//!
//! The first `rank` series error-correct towards a loading-weighted combination of the
//! remaining common trends: `Δy_i,t = -a_t (y_i,t-1 - c_i' y_trend,t-1) + e_i,t`. The
//! trends are random walks whose differences follow an AR(1). Errors are
//! `e_t = L eta_t` with `eta_i,t ~ N(0, h_i,t)` (optionally Student-t) and AR(1)
//! log-volatilities.

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Panel;
use crate::error::{Error, Result};
use crate::linalg::inv_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum SynthErrors {
    Gaussian,
    StudentT { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvTruth {
    pub mu: f64,
    pub phi: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub m: usize,
    pub t: usize,
    pub rank: usize,
    /// Relative amplitude of the sinusoidal variation of the adjustment speed.
    pub tvp_amplitude: f64,
    /// Adjustment speed `a` of the error-correcting series.
    pub adjustment: f64,
    /// Scale of the trend loadings `c_i`.
    pub loading: f64,
    /// AR(1) coefficient of the trend differences.
    pub trend_ar: f64,
    pub sv: SvTruth,
    pub errors: SynthErrors,
    /// Entry `L[1, 0]` of the unit lower-triangular error loading.
    pub cholesky: f64,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            m: 4,
            t: 600,
            rank: 2,
            tvp_amplitude: 0.0,
            adjustment: 0.9,
            loading: 1.0,
            trend_ar: 0.35,
            sv: SvTruth {
                mu: -1.0,
                phi: 0.95,
                sigma: 0.2,
            },
            errors: SynthErrors::Gaussian,
            cholesky: 0.5,
            burn_in: 100,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.m == 0 {
            v.push("m: must be positive".to_string());
        }
        if self.rank >= self.m.max(1) {
            v.push(format!("rank: {} must be below m = {}", self.rank, self.m));
        }
        if self.t < 10 {
            v.push("t: at least 10 observations are needed".to_string());
        }
        if !(self.sv.phi.abs() < 1.0) {
            v.push("sv.phi: must lie in (-1, 1)".to_string());
        }
        if !(self.sv.sigma >= 0.0) {
            v.push("sv.sigma: must be non-negative".to_string());
        }
        if let SynthErrors::StudentT { nu } = self.errors {
            if !(nu > 2.0) {
                v.push("errors.nu: must exceed 2".to_string());
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Ground truth of a synthetic panel, indexed by panel row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    /// `Pi_t` in row-major order for every panel row (row 0 is unused and zero).
    pub pi: Vec<Vec<f64>>,
    pub rank: Vec<usize>,
    /// Lag-one coefficients of the differences, `M × M` row-major.
    pub gamma1: Vec<f64>,
    /// Trend loadings `c_i` of the error-correcting series.
    pub loadings: Vec<Vec<f64>>,
    pub logh: Vec<Vec<f64>>,
}

impl SynthTruth {
    pub fn pi_matrix(&self, t: usize) -> DMatrix<f64> {
        let m = self.spec.m;
        DMatrix::from_row_slice(m, m, &self.pi[t])
    }

    pub fn gamma1_matrix(&self) -> DMatrix<f64> {
        let m = self.spec.m;
        DMatrix::from_row_slice(m, m, &self.gamma1)
    }
}

/// Loadings `c_i` (length `m - rank`) with alternating sign patterns.
fn loadings(rank: usize, n_trend: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rank)
        .map(|i| {
            (0..n_trend)
                .map(|k| {
                    let sign = if i > 0 && (k + i) % 2 == 1 { -1.0 } else { 1.0 };
                    sign * scale
                })
                .collect()
        })
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<(Panel, SynthTruth)> {
    spec.validate()?;
    let m = spec.m;
    let r = spec.rank;
    let n_tr = m - r;
    let total = spec.t + spec.burn_in;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = loadings(r, n_tr, spec.loading);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut noise = DMatrix::zeros(total, m);
    let mut logh = DMatrix::zeros(total, m);
    let sv = spec.sv;
    let sd0 = sv.sigma / (1.0 - sv.phi * sv.phi).sqrt();
    let mut taus = vec![1.0; total * m];
    if let SynthErrors::StudentT { nu } = spec.errors {
        let mut trng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_7a00);
        for t in taus.iter_mut() {
            *t = inv_gamma(&mut trng, nu / 2.0, nu / 2.0);
        }
    }
    for i in 0..m {
        let mut lh = sv.mu + sd0 * normal();
        for t in 0..total {
            lh = sv.mu + sv.phi * (lh - sv.mu) + sv.sigma * normal();
            logh[(t, i)] = lh;
            noise[(t, i)] = (lh.exp() * taus[t * m + i]).sqrt() * normal();
        }
    }
    if m >= 2 {
        for t in 0..total {
            noise[(t, 1)] += spec.cholesky * noise[(t, 0)];
        }
    }

    let mut pi_all = vec![vec![0.0; m * m]; total];
    let mut y = DMatrix::zeros(total, m);
    let mut gamma = DMatrix::zeros(m, m);
    for k in r..m {
        gamma[(k, k)] = spec.trend_ar;
    }
    for t in 1..total {
        let phase = 2.0 * std::f64::consts::PI * (t as f64) / (total as f64);
        let a = spec.adjustment * (1.0 + spec.tvp_amplitude * phase.sin());
        let mut pi = DMatrix::zeros(m, m);
        for i in 0..r {
            pi[(i, i)] = -a;
            for k in 0..n_tr {
                pi[(i, r + k)] = a * c[i][k];
            }
        }
        let prev = y.row(t - 1).transpose();
        let dprev = if t >= 2 {
            &prev - y.row(t - 2).transpose()
        } else {
            DVector::zeros(m)
        };
        let dy = &pi * &prev + &gamma * dprev + noise.row(t).transpose();
        y.set_row(t, &(prev + dy).transpose());
        pi_all[t] = pi.transpose().as_slice().to_vec();
    }

    let keep = spec.burn_in..total;
    let levels = y.rows(spec.burn_in, spec.t).into_owned();
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time");
    let timestamps = (0..spec.t).map(|k| start + Duration::days(k as i64)).collect();
    let names = (1..=m).map(|i| format!("y{i}")).collect();
    let panel = Panel::new(timestamps, levels, DMatrix::zeros(spec.t, 0), names)?;
    let mut pi: Vec<Vec<f64>> = pi_all[keep.clone()].to_vec();
    pi[0] = vec![0.0; m * m];
    let rank = (0..spec.t).map(|k| if k == 0 { 0 } else { r }).collect();
    let truth = SynthTruth {
        spec: spec.clone(),
        pi,
        rank,
        gamma1: gamma.transpose().as_slice().to_vec(),
        loadings: c,
        logh: keep.map(|t| logh.row(t).iter().copied().collect()).collect(),
    };
    Ok((panel, truth))
}
