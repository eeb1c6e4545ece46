//! Non-centered state-space draws for one equation.
//!
//! Observation: `y_t = b0'Z_t + (sqrt(theta) ⊙ b~_t)'Z_t + eta_t`, `eta_t ~ N(0, h_t tau_t)`.
//! States: `b~_t = b~_{t-1} + N(0, I)` with `b~_0 = 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, sample_from_precision, standard_normal_vec, symmetrize};
use crate::shrinkage::HorseshoeState;

/// Response, regressors and error variances for equation `i`.
#[derive(Debug, Clone)]
pub struct EquationData {
    pub y: DVector<f64>,
    /// `T × K_i` regressors, columns ordered (cointegration, lags/deterministics, Cholesky).
    pub z: DMatrix<f64>,
    pub h: DVector<f64>,
    pub tau: Option<DVector<f64>>,
}

impl EquationData {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    /// Effective error variance `h_t tau_t`.
    pub fn variance(&self, t: usize) -> f64 {
        match &self.tau {
            Some(tau) => self.h[t] * tau[t],
            None => self.h[t],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquationState {
    pub b0: DVector<f64>,
    /// Signed roots of the state variances; only their squares are identified.
    pub sqrt_theta: DVector<f64>,
    /// `T × K_i` normalized states for `t = 1..T`.
    pub btilde: DMatrix<f64>,
    pub hs: HorseshoeState,
}

impl EquationState {
    pub fn new(t: usize, k: usize) -> Self {
        EquationState {
            b0: DVector::zeros(k),
            sqrt_theta: DVector::zeros(k),
            btilde: DMatrix::zeros(t, k),
            hs: HorseshoeState::new(k),
        }
    }

    pub fn k(&self) -> usize {
        self.b0.len()
    }

    /// Stacked `(b0', sqrt(theta)')'`.
    pub fn bhat(&self) -> DVector<f64> {
        let k = self.k();
        DVector::from_iterator(2 * k, self.b0.iter().chain(self.sqrt_theta.iter()).copied())
    }

    pub fn set_bhat(&mut self, bhat: &DVector<f64>) {
        let k = self.k();
        self.b0.copy_from(&bhat.rows(0, k));
        self.sqrt_theta.copy_from(&bhat.rows(k, k));
    }

    /// `b_t = b0 + sqrt(theta) ⊙ b~_t`.
    pub fn coefficient(&self, t: usize) -> DVector<f64> {
        let mut b = self.b0.clone();
        for j in 0..self.k() {
            b[j] += self.sqrt_theta[j] * self.btilde[(t, j)];
        }
        b
    }

    /// `T × K_i` matrix of coefficient paths.
    pub fn coefficient_paths(&self) -> DMatrix<f64> {
        let (t, k) = self.btilde.shape();
        DMatrix::from_fn(t, k, |r, j| self.b0[j] + self.sqrt_theta[j] * self.btilde[(r, j)])
    }
}

/// `Z~_t = (Z_t', (Z_t ⊙ b~_t)')'`, divided by the error standard deviation.
fn augmented_design(eq: &EquationData, btilde: &DMatrix<f64>, tvp: bool) -> (DMatrix<f64>, DVector<f64>) {
    let t_obs = eq.n_obs();
    let k = eq.k();
    let width = if tvp { 2 * k } else { k };
    let mut zhat = DMatrix::zeros(t_obs, width);
    let mut yhat = DVector::zeros(t_obs);
    for t in 0..t_obs {
        let s = 1.0 / eq.variance(t).sqrt();
        for j in 0..k {
            let z = eq.z[(t, j)];
            zhat[(t, j)] = z * s;
            if tvp {
                zhat[(t, k + j)] = z * btilde[(t, j)] * s;
            }
        }
        yhat[t] = eq.y[t] * s;
    }
    (zhat, yhat)
}

fn check_equation(eq: &EquationData, btilde: &DMatrix<f64>) -> Result<()> {
    let (t, k) = (eq.n_obs(), eq.k());
    if eq.z.nrows() != t || eq.h.len() != t || btilde.shape() != (t, k) {
        return Err(Error::Dimension(format!(
            "equation data of {t} rows and {k} regressors does not match states {:?}",
            btilde.shape()
        )));
    }
    if let Some(tau) = &eq.tau {
        if tau.len() != t {
            return Err(Error::Dimension("tau length differs from T".into()));
        }
    }
    Ok(())
}

/// Gaussian posterior precision and right-hand side for `b^ = (b0', sqrt(theta)')'`.
///
/// `prior_var` holds `2K` (or `K` when `tvp` is false) prior variances; infinite
/// entries contribute zero prior precision.
pub fn constant_scales_system(
    eq: &EquationData,
    btilde: &DMatrix<f64>,
    prior_var: &[f64],
    tvp: bool,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_equation(eq, btilde)?;
    let width = if tvp { 2 * eq.k() } else { eq.k() };
    if prior_var.len() < width {
        return Err(Error::Dimension(format!(
            "{} prior variances for {width} coefficients",
            prior_var.len()
        )));
    }
    let (zhat, yhat) = augmented_design(eq, btilde, tvp);
    let mut prec = zhat.tr_mul(&zhat);
    for j in 0..width {
        prec[(j, j)] += 1.0 / prior_var[j];
    }
    let rhs = zhat.tr_mul(&yhat);
    Ok((prec, rhs))
}

/// joint Gaussian draw of `(b0, sqrt(theta))`.
///
/// With `tvp == false` only `b0` is drawn and the returned scale roots are zero.
pub fn draw_constant_scales_with_prior<R: Rng + ?Sized>(
    eq: &EquationData,
    btilde: &DMatrix<f64>,
    prior_var: &[f64],
    tvp: bool,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let k = eq.k();
    let (prec, rhs) = constant_scales_system(eq, btilde, prior_var, tvp)?;
    let chol = cholesky_jitter(&prec, "constant coefficients")?;
    let draw = sample_from_precision(&chol, &rhs, rng);
    let mut out = DVector::zeros(2 * k);
    out.rows_mut(0, draw.len()).copy_from(&draw);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("constant coefficients", "non-finite draw"));
    }
    Ok(out)
}

pub fn draw_constant_scales<R: Rng + ?Sized>(
    eq: &EquationData,
    btilde: &DMatrix<f64>,
    hs: &HorseshoeState,
    tvp: bool,
    rng: &mut R,
) -> Result<DVector<f64>> {
    draw_constant_scales_with_prior(eq, btilde, &hs.prior_variance(), tvp, rng)
}

/// Filtered moments `m_t`, `C_t` for `t = 1..T`.
#[derive(Debug, Clone)]
pub struct FilteredStates {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

/// Kalman filter for the normalized states with scalar observations.
pub fn filter_states(eq: &EquationData, b0: &DVector<f64>, sqrt_theta: &DVector<f64>) -> Result<FilteredStates> {
    let t_obs = eq.n_obs();
    let k = eq.k();
    let mut mean = Vec::with_capacity(t_obs);
    let mut cov = Vec::with_capacity(t_obs);
    let mut m = DVector::zeros(k);
    let mut c = DMatrix::zeros(k, k);
    for t in 0..t_obs {
        // Predict: a = m, R = C + I.
        let mut r = c;
        for j in 0..k {
            r[(j, j)] += 1.0;
        }
        let z = eq.z.row(t).transpose();
        let f = z.component_mul(sqrt_theta);
        let offset = b0.dot(&z);
        let rf = &r * &f;
        let q = f.dot(&rf) + eq.variance(t);
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::numerical(
                "state filter",
                format!("non-positive innovation variance at t = {}", t + 1),
            ));
        }
        let e = eq.y[t] - offset - f.dot(&m);
        m += &rf * (e / q);
        c = r - (&rf * rf.transpose()) / q;
        symmetrize(&mut c);
        mean.push(m.clone());
        cov.push(c.clone());
    }
    Ok(FilteredStates { mean, cov })
}

/// Backward sampling pass given filtered moments.
pub fn backward_sample<R: Rng + ?Sized>(filtered: &FilteredStates, rng: &mut R) -> Result<DMatrix<f64>> {
    let t_obs = filtered.mean.len();
    let k = filtered.mean.first().map_or(0, |m| m.len());
    let mut out = DMatrix::zeros(t_obs, k);
    if t_obs == 0 {
        return Ok(out);
    }
    let last = t_obs - 1;
    let draw = sample_gaussian(&filtered.mean[last], &filtered.cov[last], last)?;
    let mut next = draw(rng);
    out.set_row(last, &next.transpose());
    for t in (0..last).rev() {
        let c = &filtered.cov[t];
        let m = &filtered.mean[t];
        let mut r = c.clone();
        for j in 0..k {
            r[(j, j)] += 1.0;
        }
        let rchol = cholesky_jitter(&r, "state smoother")?;
        // G = R^{-1} C, so C R^{-1} = G'.
        let g = rchol.solve(c);
        let mean = m + g.transpose() * (&next - m);
        let mut cov = c - c * &g;
        symmetrize(&mut cov);
        next = sample_gaussian(&mean, &cov, t)?(rng);
        out.set_row(t, &next.transpose());
    }
    Ok(out)
}

fn sample_gaussian<'a, R: Rng + ?Sized>(
    mean: &'a DVector<f64>,
    cov: &DMatrix<f64>,
    t: usize,
) -> Result<impl FnOnce(&mut R) -> DVector<f64> + 'a> {
    let k = mean.len();
    let chol = cholesky_jitter(cov, "state smoother").map_err(|_| {
        Error::numerical(
            "state smoother",
            format!("state covariance not positive definite at t = {}", t + 1),
        )
    })?;
    let l = chol.l();
    Ok(move |rng: &mut R| mean + l * standard_normal_vec(rng, k))
}

/// forward filtering, backward sampling of `b~_1..b~_T`.
pub fn ffbs_states<R: Rng + ?Sized>(
    eq: &EquationData,
    b0: &DVector<f64>,
    sqrt_theta: &DVector<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if b0.len() != eq.k() || sqrt_theta.len() != eq.k() {
        return Err(Error::Dimension("coefficient length differs from K".into()));
    }
    let filtered = filter_states(eq, b0, sqrt_theta)?;
    let out = backward_sample(&filtered, rng)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("state smoother", "non-finite state draw"));
    }
    Ok(out)
}
