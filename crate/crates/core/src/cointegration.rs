//! Long-run matrix `beta~` and the time-varying `Pi_t = alpha~_t beta~'`.
//!
//! The coefficient vector is `vec(beta~')` (column-major), so that
//! `alpha~_t beta~' w_t = (w_t' ⊗ alpha~_t) vec(beta~')`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, sample_from_precision, sym_eigen_sorted, sym_matrix_function};

/// Smallest eigenvalue of `beta~' beta~` for which normalization is attempted.
pub const NORMALIZE_MIN_EIGEN: f64 = 1e-12;

/// Per-period inputs to the long-run draw.
pub struct BetaInputs<'a> {
    /// `T × M` responses net of the short-run part, `Δy_t - A_t x_t`.
    pub response: &'a DMatrix<f64>,
    /// `T × q` lagged levels and factors.
    pub w: &'a DMatrix<f64>,
    /// `M × r` adjustment matrices `alpha~_t`.
    pub alpha: &'a [DMatrix<f64>],
    /// `M × M` whitening matrices `Sigma_t^{-1/2}`.
    pub whiten: &'a [DMatrix<f64>],
}

/// Posterior precision and right-hand side of `vec(beta~')`, accumulated over `t`.
pub fn beta_system(inputs: &BetaInputs<'_>, s0: f64, likelihood: bool) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let t_obs = inputs.response.nrows();
    let q = inputs.w.ncols();
    let r = inputs.alpha.first().map_or(0, |a| a.ncols());
    if inputs.w.nrows() != t_obs || inputs.alpha.len() != t_obs || inputs.whiten.len() != t_obs {
        return Err(Error::Dimension("long-run inputs disagree on T".into()));
    }
    let n = q * r;
    let mut prec = DMatrix::identity(n, n) / s0;
    let mut rhs = DVector::zeros(n);
    if !likelihood {
        return Ok((prec, rhs));
    }
    for t in 0..t_obs {
        let g = &inputs.whiten[t] * &inputs.alpha[t];
        let gtg = g.tr_mul(&g);
        let ydd = &inputs.whiten[t] * inputs.response.row(t).transpose();
        let gty = g.tr_mul(&ydd);
        let wt = inputs.w.row(t);
        for j in 0..q {
            let wj = wt[j];
            if wj == 0.0 {
                continue;
            }
            for k in 0..r {
                rhs[k + r * j] += wj * gty[k];
            }
            for jj in 0..q {
                let wjj = wj * wt[jj];
                if wjj == 0.0 {
                    continue;
                }
                for k in 0..r {
                    for kk in 0..r {
                        prec[(k + r * j, kk + r * jj)] += wjj * gtg[(k, kk)];
                    }
                }
            }
        }
    }
    Ok((prec, rhs))
}

/// Draw `beta~` (`q × r`) from its Gaussian conditional.
pub fn draw_beta<R: Rng + ?Sized>(
    inputs: &BetaInputs<'_>,
    s0: f64,
    likelihood: bool,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let q = inputs.w.ncols();
    let r = inputs.alpha.first().map_or(0, |a| a.ncols());
    let (prec, rhs) = beta_system(inputs, s0, likelihood)?;
    let chol = cholesky_jitter(&prec, "long-run matrix")?;
    let v = sample_from_precision(&chol, &rhs, rng);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("long-run matrix", "non-finite draw"));
    }
    Ok(unvec_beta(&v, q, r))
}

/// `beta~[j, k] = vec(beta~')[k + r j]`.
pub fn unvec_beta(v: &DVector<f64>, q: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(q, r, |j, k| v[k + r * j])
}

pub fn vec_beta(beta: &DMatrix<f64>) -> DVector<f64> {
    let (q, r) = beta.shape();
    let mut v = DVector::zeros(q * r);
    for j in 0..q {
        for k in 0..r {
            v[k + r * j] = beta[(j, k)];
        }
    }
    v
}

/// Rotate `(beta~, alpha~_t)` so that `beta' beta = I` while every `Pi_t` is preserved.
///
/// Returns `None` when `beta~' beta~` is numerically singular.
pub fn normalize(beta: &DMatrix<f64>, alpha: &[DMatrix<f64>]) -> Option<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let btb = beta.tr_mul(beta);
    let (vals, _) = sym_eigen_sorted(&btb);
    if vals.is_empty() || vals[0] < NORMALIZE_MIN_EIGEN {
        return None;
    }
    let zeta = sym_matrix_function(&btb, |l| 1.0 / l.sqrt());
    let zeta_inv = sym_matrix_function(&btb, |l| l.sqrt());
    let beta_n = beta * &zeta;
    let alpha_n = alpha.iter().map(|a| a * &zeta_inv).collect();
    Some((beta_n, alpha_n))
}

/// `Pi_t = alpha~_t beta~'` for every `t`.
pub fn assemble_pi(alpha: &[DMatrix<f64>], beta: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    alpha.iter().map(|a| a * beta.transpose()).collect()
}
