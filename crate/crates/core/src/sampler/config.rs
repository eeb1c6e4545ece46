use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Deterministics;
use crate::error::{Error, Result};
use crate::sparsify::GlassoOptions;
use crate::volatility::SvPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelClass {
    Vecm,
    /// VECM with a `q × r` long-run matrix; the rank is given by [`ModelConfig::rank`].
    VecmFixedRank,
    VarLevels,
    VarDifferences,
    ArLevels,
    ArDifferences,
}

impl ModelClass {
    pub fn has_long_run(self) -> bool {
        matches!(self, ModelClass::Vecm | ModelClass::VecmFixedRank)
    }

    pub fn is_univariate(self) -> bool {
        matches!(self, ModelClass::ArLevels | ModelClass::ArDifferences)
    }

    pub fn in_levels(self) -> bool {
        matches!(self, ModelClass::VarLevels | ModelClass::ArLevels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorDist {
    #[default]
    Gaussian,
    StudentT,
}

/// How the noise level separating signal from noise singular values is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum RankThreshold {
    /// Largest singular value of the residual matrix of each draw.
    #[default]
    PerDraw,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_class: ModelClass,
    /// Cointegration rank for [`ModelClass::VecmFixedRank`].
    pub rank: Option<usize>,
    pub tvp: bool,
    pub error_dist: ErrorDist,
    pub lags: usize,
    /// Total number of sweeps, burn-in included.
    pub draws: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Prior variance of the entries of the long-run matrix.
    pub s0: f64,
    pub sv_prior: SvPrior,
    pub deterministics: Deterministics,
    pub sparsify: bool,
    pub rank_threshold: RankThreshold,
    pub glasso: GlassoOptions,
    /// Initial random-walk step for `log(nu - 2)`.
    pub nu_step: f64,
    /// Evaluate the likelihood; switching it off samples from the prior.
    pub likelihood: bool,
    /// Keep full coefficient paths of every retained draw.
    pub keep_paths: bool,
    /// Record the stage sequence of every sweep.
    pub record_stages: bool,
    /// Recompute residuals from stored quantities after every sweep and compare.
    pub check_residuals: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_class: ModelClass::Vecm,
            rank: None,
            tvp: true,
            error_dist: ErrorDist::Gaussian,
            lags: 1,
            draws: 6000,
            burnin: 2000,
            thin: 3,
            seed: 42,
            s0: 0.1,
            sv_prior: SvPrior::default(),
            deterministics: Deterministics::default(),
            sparsify: true,
            rank_threshold: RankThreshold::PerDraw,
            glasso: GlassoOptions::default(),
            nu_step: 0.3,
            likelihood: true,
            keep_paths: false,
            record_stages: false,
            check_residuals: false,
        }
    }
}

impl ModelConfig {
    /// Number of draws kept after burn-in and thinning.
    pub fn retained(&self) -> usize {
        if self.thin == 0 || self.draws <= self.burnin {
            0
        } else {
            (self.draws - self.burnin) / self.thin
        }
    }

    /// Whether sweep `s` (0-based) is kept.
    pub fn is_retained(&self, s: usize) -> bool {
        s >= self.burnin && (s - self.burnin + 1) % self.thin == 0
    }

    /// Check the configuration, reporting every violation at once.
    ///
    /// `n_endog` enables the checks that depend on the number of series.
    pub fn validate(&self, n_endog: Option<usize>) -> Result<()> {
        let mut v = Vec::new();
        if self.lags == 0 {
            v.push("lags: must be at least 1".to_string());
        }
        if self.draws == 0 {
            v.push("draws: must be positive".to_string());
        }
        if self.thin == 0 {
            v.push("thin: must be at least 1".to_string());
        }
        if self.draws > 0 && self.thin > 0 && self.retained() == 0 {
            v.push(format!(
                "burnin: {} burn-in sweeps and thinning {} leave no draws out of {}",
                self.burnin, self.thin, self.draws
            ));
        }
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            v.push("s0: must be positive and finite".to_string());
        }
        let p = &self.sv_prior;
        if !(p.mu_var > 0.0) {
            v.push("sv_prior.mu_var: must be positive".to_string());
        }
        if !(p.phi_a > 0.0 && p.phi_b > 0.0) {
            v.push("sv_prior.phi_a/phi_b: must be positive".to_string());
        }
        if !(p.sigma_scale > 0.0) {
            v.push("sv_prior.sigma_scale: must be positive".to_string());
        }
        if !(p.nu_max > 2.0) {
            v.push("sv_prior.nu_max: must exceed 2".to_string());
        }
        if !(self.nu_step >= 0.0) {
            v.push("nu_step: must be non-negative".to_string());
        }
        if let RankThreshold::Fixed(x) = self.rank_threshold {
            if !(x >= 0.0) {
                v.push("rank_threshold: fixed value must be non-negative".to_string());
            }
        }
        match (self.model_class, self.rank) {
            (ModelClass::VecmFixedRank, None) => {
                v.push("rank: required for the fixed-rank VECM".to_string());
            }
            (ModelClass::VecmFixedRank, Some(r)) => {
                if r == 0 {
                    v.push("rank: must be at least 1".to_string());
                }
                if let Some(m) = n_endog {
                    if r >= m {
                        v.push(format!("rank: {r} must be below the number of series {m}"));
                    }
                }
            }
            (_, Some(_)) => v.push("rank: only valid for the fixed-rank VECM".to_string()),
            _ => {}
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
