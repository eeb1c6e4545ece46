//! Stochastic volatility for one equation, with optional Student-t errors.
//!
//! `log h_t = mu + phi (log h_{t-1} - mu) + sigma xi_t`. The log-volatility path is
//! drawn through the 10-component normal mixture approximation of `log chi^2_1`
//! (Omori, Chib, Shephard and Nakajima, 2007) followed by a scalar FFBS pass;
//! `mu` is drawn from its Gaussian conditional, `phi` by Metropolis-Hastings under
//! the Beta prior and `sigma^2` by an independence sampler whose proposal is the
//! likelihood-conjugate inverse gamma.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};


use crate::error::{Error, Result};
use crate::linalg::inv_gamma;

/// Mixture weights, means and variances approximating the `log chi^2_1` density.
pub const MIX_PROB: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
pub const MIX_MEAN: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384,
    -14.65000,
];
pub const MIX_VAR: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

/// Priors on the volatility state equation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SvPrior {
    pub mu_mean: f64,
    pub mu_var: f64,
    /// `(phi + 1)/2 ~ Beta(a, b)`.
    pub phi_a: f64,
    pub phi_b: f64,
    /// `sigma ~ N(0, sigma_scale)`, i.e. `sigma^2 ~ Gamma(1/2, 1/(2 sigma_scale))`.
    pub sigma_scale: f64,
    /// Upper bound of the uniform prior on the degrees of freedom (lower bound is 2).
    pub nu_max: f64,
}

impl Default for SvPrior {
    fn default() -> Self {
        SvPrior {
            mu_mean: 0.0,
            mu_var: 100.0,
            phi_a: 5.0,
            phi_b: 1.5,
            sigma_scale: 1.0,
            nu_max: 30.0,
        }
    }
}

/// Random-walk Metropolis state for `log(nu - 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuSampler {
    pub step: f64,
    pub accepted: u64,
    pub proposed: u64,
    window_accepted: u64,
    window_proposed: u64,
}

impl NuSampler {
    pub fn new(step: f64) -> Self {
        NuSampler {
            step,
            accepted: 0,
            proposed: 0,
            window_accepted: 0,
            window_proposed: 0,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Scale the step towards 25-40% acceptance using the last 50 proposals.
    pub fn adapt(&mut self) {
        if self.window_proposed < 50 {
            return;
        }
        let rate = self.window_accepted as f64 / self.window_proposed as f64;
        if rate > 0.40 {
            self.step *= 1.25;
        } else if rate < 0.25 {
            self.step *= 0.8;
        }
        self.window_accepted = 0;
        self.window_proposed = 0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolState {
    /// `log h_1 .. log h_T`.
    pub logh: Vec<f64>,
    /// Initial state `log h_0`.
    pub logh0: f64,
    pub mu: f64,
    pub phi: f64,
    pub sigma: f64,
    pub tau: Option<Vec<f64>>,
    pub nu: Option<f64>,
    pub nu_sampler: NuSampler,
    /// Proposals for `phi` outside `(-1, 1)`.
    pub phi_rejections: u64,
}

impl VolState {
    pub fn new(t: usize, mu: f64, student_t: bool) -> Self {
        VolState {
            logh: vec![mu; t],
            logh0: mu,
            mu,
            phi: 0.9,
            sigma: 0.3,
            tau: student_t.then(|| vec![1.0; t]),
            nu: student_t.then_some(10.0),
            nu_sampler: NuSampler::new(0.3),
            phi_rejections: 0,
        }
    }

    pub fn h(&self, t: usize) -> f64 {
        self.logh[t].exp()
    }

    /// One-step propagation of the log-volatility.
    pub fn propagate(&self, logh_last: f64, shock: f64) -> f64 {
        self.mu + self.phi * (logh_last - self.mu) + self.sigma * shock
    }
}

/// Draw mixture indicators given `y* = log(eta^2)` and the current path.
fn draw_indicators<R: Rng + ?Sized>(ystar: &[f64], logh: &[f64], rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(ystar.len());
    let mut lp = [0.0f64; 10];
    let consts: [f64; 10] = std::array::from_fn(|k| MIX_PROB[k].ln() - 0.5 * MIX_VAR[k].ln());
    for (ys, lh) in ystar.iter().zip(logh) {
        let d = ys - lh;
        let mut max = f64::NEG_INFINITY;
        for k in 0..10 {
            let e = d - MIX_MEAN[k];
            lp[k] = consts[k] - 0.5 * e * e / MIX_VAR[k];
            max = max.max(lp[k]);
        }
        let mut total = 0.0;
        for v in lp.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = 9;
        for (k, v) in lp.iter().enumerate() {
            acc += v;
            if u < acc {
                pick = k;
                break;
            }
        }
        out.push(pick);
    }
    out
}

/// FFBS for the AR(1) log-volatility with Gaussian observations `obs_t = logh_t + N(0, var_t)`.
/// Missing observations are signalled by an infinite variance. Returns `(logh_0, logh_1..T)`.
pub fn sample_ar1_path<R: Rng + ?Sized>(
    obs: &[f64],
    obs_var: &[f64],
    mu: f64,
    phi: f64,
    sigma: f64,
    rng: &mut R,
) -> (f64, Vec<f64>) {
    let t_obs = obs.len();
    let s2 = sigma * sigma;
    let m0 = mu;
    let c0 = s2 / (1.0 - phi * phi);
    let mut m = vec![0.0; t_obs];
    let mut c = vec![0.0; t_obs];
    let mut a = vec![0.0; t_obs];
    let mut r = vec![0.0; t_obs];
    let (mut mp, mut cp) = (m0, c0);
    for t in 0..t_obs {
        a[t] = mu + phi * (mp - mu);
        r[t] = phi * phi * cp + s2;
        if obs_var[t].is_finite() {
            let q = r[t] + obs_var[t];
            let gain = r[t] / q;
            m[t] = a[t] + gain * (obs[t] - a[t]);
            c[t] = r[t] * (1.0 - gain);
        } else {
            m[t] = a[t];
            c[t] = r[t];
        }
        mp = m[t];
        cp = c[t];
    }
    let mut path = vec![0.0; t_obs];
    let n = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    if t_obs == 0 {
        return (m0 + c0.sqrt() * n(rng), path);
    }
    path[t_obs - 1] = m[t_obs - 1] + c[t_obs - 1].max(0.0).sqrt() * n(rng);
    for t in (0..t_obs - 1).rev() {
        let g = c[t] * phi / r[t + 1];
        let mean = m[t] + g * (path[t + 1] - a[t + 1]);
        let var = (c[t] - g * phi * c[t]).max(0.0);
        path[t] = mean + var.sqrt() * n(rng);
    }
    let g = c0 * phi / r[0];
    let mean = m0 + g * (path[0] - a[0]);
    let var = (c0 - g * phi * c0).max(0.0);
    (mean + var.sqrt() * n(rng), path)
}

/// Draw the log-volatility path for fixed `(mu, phi, sigma)`.
pub fn draw_logh<R: Rng + ?Sized>(residuals: &[f64], vol: &mut VolState, rng: &mut R) {
    let ystar = log_squares(residuals);
    let s = draw_indicators(&ystar, &vol.logh, rng);
    let obs: Vec<f64> = ystar.iter().zip(&s).map(|(y, &k)| y - MIX_MEAN[k]).collect();
    let var: Vec<f64> = s.iter().map(|&k| MIX_VAR[k]).collect();
    let (h0, path) = sample_ar1_path(&obs, &var, vol.mu, vol.phi, vol.sigma, rng);
    vol.logh0 = h0;
    vol.logh = path;
}

fn log_squares(residuals: &[f64]) -> Vec<f64> {
    let n = residuals.len().max(1) as f64;
    let ms = residuals.iter().map(|e| e * e).sum::<f64>() / n;
    let offset = 1e-10 * ms + f64::MIN_POSITIVE;
    residuals.iter().map(|e| (e * e + offset).ln()).collect()
}

/// Draw `(mu, phi, sigma)` given the complete path `logh_0..T`.
pub fn draw_parameters<R: Rng + ?Sized>(vol: &mut VolState, prior: &SvPrior, rng: &mut R) {
    let t_obs = vol.logh.len();
    let prev = |t: usize| if t == 0 { vol.logh0 } else { vol.logh[t - 1] };

    // phi | mu, sigma, h: Gaussian proposal from the AR regression, accepted on
    // the Beta prior and the stationary density of h_0.
    {
        let mu = vol.mu;
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for t in 0..t_obs {
            let x = prev(t) - mu;
            sxx += x * x;
            sxy += x * (vol.logh[t] - mu);
        }
        if sxx > 0.0 {
            let prop_mean = sxy / sxx;
            let prop_sd = vol.sigma / sxx.sqrt();
            let cand = prop_mean + prop_sd * { let z: f64 = StandardNormal.sample(rng); z };
            if cand.abs() < 1.0 {
                let log_target = |phi: f64| -> f64 {
                    let u = (phi + 1.0) / 2.0;
                    let s2 = vol.sigma * vol.sigma / (1.0 - phi * phi);
                    (prior.phi_a - 1.0) * u.ln() + (prior.phi_b - 1.0) * (1.0 - u).ln()
                        - 0.5 * s2.ln()
                        - 0.5 * (vol.logh0 - mu).powi(2) / s2
                };
                let log_ratio = log_target(cand) - log_target(vol.phi);
                if rng.random::<f64>().ln() < log_ratio {
                    vol.phi = cand;
                }
            } else {
                vol.phi_rejections += 1;
            }
        }
    }

    // sigma^2: independence proposal IG(T/2, S/2) absorbs the likelihood and
    // the x^{-1/2} part of the Gamma(1/2, 1/(2 B)) prior; accept on exp(-x/(2B)).
    {
        let (mu, phi) = (vol.mu, vol.phi);
        let mut ss = (1.0 - phi * phi) * (vol.logh0 - mu).powi(2);
        for t in 0..t_obs {
            let e = vol.logh[t] - mu - phi * (prev(t) - mu);
            ss += e * e;
        }
        let shape = t_obs as f64 / 2.0;
        let cand = inv_gamma(rng, shape, (0.5 * ss).max(1e-300));
        let cur = vol.sigma * vol.sigma;
        let log_ratio = -(cand - cur) / (2.0 * prior.sigma_scale);
        if cand.is_finite() && cand > 0.0 && rng.random::<f64>().ln() < log_ratio {
            vol.sigma = cand.sqrt();
        }
    }

    // mu | phi, sigma, h: conjugate Gaussian.
    {
        let (phi, s2) = (vol.phi, vol.sigma * vol.sigma);
        let one_m = 1.0 - phi;
        let mut prec = 1.0 / prior.mu_var + (1.0 - phi * phi) / s2;
        let mut num = prior.mu_mean / prior.mu_var + (1.0 - phi * phi) * vol.logh0 / s2;
        for t in 0..t_obs {
            prec += one_m * one_m / s2;
            num += one_m * (vol.logh[t] - phi * prev(t)) / s2;
        }
        vol.mu = num / prec + { let z: f64 = StandardNormal.sample(rng); z } / prec.sqrt();
    }
}

/// update the log-volatility path and its state-equation parameters.
///
/// `residuals` must already be divided by `sqrt(tau_t)` when Student-t errors are active.
/// With `likelihood == false` the path is drawn from its prior (used for prior-sampling checks).
pub fn draw_volatility<R: Rng + ?Sized>(
    residuals: &[f64],
    vol: &mut VolState,
    prior: &SvPrior,
    likelihood: bool,
    rng: &mut R,
) -> Result<()> {
    if residuals.is_empty() {
        return Err(Error::Contract("volatility update needs at least one residual".into()));
    }
    if residuals.len() != vol.logh.len() {
        return Err(Error::Dimension(format!(
            "{} residuals for a volatility path of length {}",
            residuals.len(),
            vol.logh.len()
        )));
    }
    if likelihood {
        draw_logh(residuals, vol, rng);
    } else {
        let t = residuals.len();
        let (h0, path) = sample_ar1_path(
            &vec![0.0; t],
            &vec![f64::INFINITY; t],
            vol.mu,
            vol.phi,
            vol.sigma,
            rng,
        );
        vol.logh0 = h0;
        vol.logh = path;
    }
    draw_parameters(vol, prior, rng);
    if vol.logh.iter().any(|v| !v.is_finite()) || !vol.mu.is_finite() || !vol.sigma.is_finite() {
        return Err(Error::numerical("stochastic volatility", "non-finite draw"));
    }
    Ok(())
}

/// `tau_t ~ IG((nu + 1)/2, (nu + eta_t^2 / h_t)/2)`.
pub fn draw_tau<R: Rng + ?Sized>(residuals: &[f64], logh: &[f64], nu: f64, rng: &mut R) -> Vec<f64> {
    residuals
        .iter()
        .zip(logh)
        .map(|(e, lh)| {
            let rate = 0.5 * (nu + e * e / lh.exp());
            inv_gamma(rng, 0.5 * (nu + 1.0), rate).clamp(1e-12, 1e12)
        })
        .collect()
}

/// `log p(tau | nu)` for `tau_t ~ IG(nu/2, nu/2)`, up to a constant.
pub fn nu_log_likelihood(tau: &[f64], nu: f64) -> f64 {
    let half = 0.5 * nu;
    let n = tau.len() as f64;
    let (mut slog, mut sinv) = (0.0, 0.0);
    for t in tau {
        slog += t.ln();
        sinv += 1.0 / t;
    }
    n * (half * half.ln() - libm::lgamma(half)) - (half + 1.0) * slog - half * sinv
}

/// Random-walk Metropolis on `log(nu - 2)` under `nu ~ U(2, nu_max)`.
pub fn draw_nu<R: Rng + ?Sized>(
    tau: &[f64],
    nu: f64,
    nu_max: f64,
    sampler: &mut NuSampler,
    rng: &mut R,
) -> f64 {
    let u = (nu - 2.0).ln();
    let z: f64 = StandardNormal.sample(rng);
    let cand_u = u + sampler.step * z;
    let cand = 2.0 + cand_u.exp();
    sampler.proposed += 1;
    sampler.window_proposed += 1;
    if !(cand > 2.0 && cand < nu_max) {
        return nu;
    }
    // Jacobian of nu = 2 + e^u.
    let log_ratio = nu_log_likelihood(tau, cand) + cand_u - nu_log_likelihood(tau, nu) - u;
    if rng.random::<f64>().ln() < log_ratio {
        sampler.accepted += 1;
        sampler.window_accepted += 1;
        cand
    } else {
        nu
    }
}
