//! Ex-post sparsification of posterior draws.
//!
//! Signal adaptive variable selection (SAVS) is applied column-wise to `Pi_t` and
//! element-wise to `A_t`; the precision matrix is thresholded with a single pass of
//! the graphical lasso using adaptive penalties `|sigma^{ij}|^{-1/2}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_singular_value, sym_eigen_sorted};

/// Eigenvalue floor applied when the thresholded precision is not positive definite.
pub const PD_FLOOR: f64 = 1e-8;

/// Squared column norms `||W_j||^2` of a full-data matrix.
pub fn column_sq_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm_squared()).collect()
}

/// Soft-threshold one coefficient with penalty `1/a^2` and data norm `norm_sq`.
pub fn savs_scalar(a: f64, norm_sq: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let abs = a.abs();
    let delta = 1.0 / (a * a);
    if delta / abs >= norm_sq {
        0.0
    } else {
        a * (1.0 - delta / (norm_sq * abs))
    }
}

/// Element-wise SAVS for the stacked short-run coefficients.
pub fn savs_lasso_a(a_hat: &[f64], norms_sq: &[f64]) -> Vec<f64> {
    a_hat.iter().zip(norms_sq).map(|(&a, &n)| savs_scalar(a, n)).collect()
}

/// Column-wise group SAVS for `Pi_t` (`M × q`), with `||W_j||^2` in `w_norms_sq`.
pub fn savs_group_pi(pi_hat: &DMatrix<f64>, w_norms_sq: &[f64]) -> DMatrix<f64> {
    let mut out = pi_hat.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if n == 0.0 {
            col.fill(0.0);
            continue;
        }
        let kappa = 1.0 / (n * n);
        let wn = w_norms_sq[j];
        if kappa / (2.0 * n) >= wn {
            col.fill(0.0);
        } else {
            col *= 1.0 - kappa / (2.0 * wn * n);
        }
    }
    out
}

/// Largest singular value of the `T × M` residual matrix.
pub fn noise_threshold(residuals: &DMatrix<f64>) -> f64 {
    max_singular_value(residuals)
}

/// Number of singular values of `W Pi*'` above `phi`, computed from `W'W`.
pub fn estimate_rank(pi_star: &DMatrix<f64>, wtw: &DMatrix<f64>, phi: f64) -> usize {
    if pi_star.iter().all(|v| *v == 0.0) {
        return 0;
    }
    let gram = pi_star * wtw * pi_star.transpose();
    let (vals, _) = sym_eigen_sorted(&gram);
    let top = vals.iter().cloned().fold(0.0f64, f64::max);
    // Eigenvalues below this are rounding noise of a rank-deficient product.
    let noise = top * 1e-12;
    vals.iter().filter(|&&v| v > noise && v > phi * phi).count()
}

/// Controls for [`glasso`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlassoOptions {
    /// Multiplier on the adaptive penalties; `0` gives the unpenalized inverse.
    pub penalty_scale: f64,
    /// Iterate outer cycles and inner sweeps to convergence instead of one pass.
    pub converge: bool,
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        GlassoOptions {
            penalty_scale: 1.0,
            converge: false,
            tol: 1e-10,
            max_cycles: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoOutput {
    pub precision: DMatrix<f64>,
    /// True when the eigenvalue floor had to be applied.
    pub projected: bool,
}

fn soft(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

fn drop_index(n: usize, j: usize) -> Vec<usize> {
    (0..n).filter(|&k| k != j).collect()
}

/// Graphical lasso with adaptive penalties `lambda_ij = |sigma^{ij}|^{-1/2}` on the
/// off-diagonal entries of the precision.
pub fn glasso(sigma: &DMatrix<f64>, opts: &GlassoOptions) -> Result<GlassoOutput> {
    let m = sigma.nrows();
    if sigma.ncols() != m {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Contract("covariance passed to the graphical lasso is not positive definite".into()))?;
    let inv = chol.inverse();
    let lambda = DMatrix::from_fn(m, m, |i, j| {
        if i == j || opts.penalty_scale == 0.0 {
            0.0
        } else {
            opts.penalty_scale / inv[(i, j)].abs().sqrt()
        }
    });

    let mut w = sigma.clone();
    let mut betas: Vec<DVector<f64>> = vec![DVector::zeros(m.saturating_sub(1)); m];
    let cycles = if opts.converge { opts.max_cycles } else { 1 };
    for _ in 0..cycles {
        let mut change = 0.0f64;
        for j in 0..m {
            let idx = drop_index(m, j);
            let w11 = w.select_rows(&idx).select_columns(&idx);
            let s12 = DVector::from_iterator(m - 1, idx.iter().map(|&k| sigma[(k, j)]));
            let lam = DVector::from_iterator(m - 1, idx.iter().map(|&k| lambda[(k, j)]));
            let mut beta = if opts.converge && betas[j].iter().any(|v| *v != 0.0) {
                betas[j].clone()
            } else {
                w11.clone()
                    .cholesky()
                    .map(|c| c.solve(&s12))
                    .unwrap_or_else(|| DVector::zeros(m - 1))
            };
            let sweeps = if opts.converge { opts.max_cycles } else { 1 };
            for _ in 0..sweeps {
                let mut delta = 0.0f64;
                for k in 0..m - 1 {
                    let mut r = s12[k];
                    for l in 0..m - 1 {
                        if l != k {
                            r -= w11[(k, l)] * beta[l];
                        }
                    }
                    let new = soft(r, lam[k]) / w11[(k, k)];
                    delta = delta.max((new - beta[k]).abs());
                    beta[k] = new;
                }
                if delta < opts.tol {
                    break;
                }
            }
            let w12 = &w11 * &beta;
            for (a, &k) in idx.iter().enumerate() {
                change = change.max((w[(k, j)] - w12[a]).abs());
                w[(k, j)] = w12[a];
                w[(j, k)] = w12[a];
            }
            betas[j] = beta;
        }
        if change < opts.tol {
            break;
        }
    }

    let mut theta = DMatrix::zeros(m, m);
    for j in 0..m {
        let idx = drop_index(m, j);
        let beta = &betas[j];
        let w12 = DVector::from_iterator(m - 1, idx.iter().map(|&k| w[(k, j)]));
        let t22 = 1.0 / (w[(j, j)] - w12.dot(beta));
        theta[(j, j)] = t22;
        for (a, &k) in idx.iter().enumerate() {
            theta[(k, j)] = -beta[a] * t22;
        }
    }
    for i in 0..m {
        for j in 0..i {
            let (a, b) = (theta[(i, j)], theta[(j, i)]);
            let v = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }

    let (vals, _) = sym_eigen_sorted(&theta);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let projected = !(min > PD_FLOOR) || theta.diagonal().iter().any(|d| !(*d > 0.0));
    if projected {
        // A diagonal shift lifts the smallest eigenvalue to the floor and keeps the zero pattern.
        let shift = PD_FLOOR - min.min(PD_FLOOR);
        for i in 0..m {
            theta[(i, i)] += shift.max(0.0);
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("graphical lasso", "non-finite precision"));
    }
    Ok(GlassoOutput {
        precision: theta,
        projected,
    })
}

/// Sparsified quantities of one posterior draw at one point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    /// `M × q` with exactly-zero columns.
    pub pi_star: DMatrix<f64>,
    /// Stacked `M J` short-run coefficients.
    pub a_star: DVector<f64>,
    /// `M × M` precision.
    pub prec_star: DMatrix<f64>,
    pub rank: usize,
    pub projected: bool,
}

/// One sparsified posterior draw over all time points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDraw {
    pub points: Vec<SparsePoint>,
}

impl SparseDraw {
    pub fn ranks(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.rank).collect()
    }
}

/// Data-side quantities computed once per dataset.
#[derive(Debug, Clone)]
pub struct SparsifyContext {
    pub w_norms_sq: Vec<f64>,
    pub wtw: DMatrix<f64>,
    /// Column norms of `I_M ⊗ X`, i.e. the norms of `X` repeated per equation.
    pub x_norms_sq: Vec<f64>,
    pub glasso: GlassoOptions,
}

impl SparsifyContext {
    pub fn new(w: &DMatrix<f64>, x: &DMatrix<f64>, n_endog: usize, glasso: GlassoOptions) -> Self {
        let xn = column_sq_norms(x);
        let mut x_norms_sq = Vec::with_capacity(xn.len() * n_endog);
        for _ in 0..n_endog {
            x_norms_sq.extend_from_slice(&xn);
        }
        SparsifyContext {
            w_norms_sq: column_sq_norms(w),
            wtw: w.tr_mul(w),
            x_norms_sq,
            glasso,
        }
    }

    /// Sparsify one time point of a draw.
    pub fn sparsify_point(
        &self,
        pi_hat: Option<&DMatrix<f64>>,
        a_hat: &DVector<f64>,
        sigma: &DMatrix<f64>,
        phi: f64,
    ) -> Result<SparsePoint> {
        let m = sigma.nrows();
        let (pi_star, rank) = match pi_hat {
            Some(p) => {
                let ps = savs_group_pi(p, &self.w_norms_sq);
                let r = estimate_rank(&ps, &self.wtw, phi);
                (ps, r)
            }
            None => (DMatrix::zeros(m, 0), 0),
        };
        let a_star = DVector::from_vec(savs_lasso_a(a_hat.as_slice(), &self.x_norms_sq));
        let g = glasso(sigma, &self.glasso)?;
        Ok(SparsePoint {
            pi_star,
            a_star,
            prec_star: g.precision,
            rank,
            projected: g.projected,
        })
    }
}

/// Streaming inclusion counts over retained draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionCounts {
    pub draws: u64,
    pub t: usize,
    pub m: usize,
    pub q: usize,
    pub n_a: usize,
    /// `[t][k]` non-zero counts of `a*`.
    pub a: Vec<Vec<u64>>,
    /// `[t][j]` non-zero counts of the columns of `Pi*`.
    pub pi_columns: Vec<Vec<u64>>,
    /// `[t][i * M + j]` non-zero counts of precision entries.
    pub precision: Vec<Vec<u64>>,
    /// `[t][r]` counts of rank `r`.
    pub rank: Vec<Vec<u64>>,
    /// Running sum of `Pi*_t` entries, `[t][i * q + j]`.
    pub pi_sum: Vec<Vec<f64>>,
    pub projections: u64,
}

impl InclusionCounts {
    pub fn new(t: usize, m: usize, q: usize, n_a: usize) -> Self {
        InclusionCounts {
            draws: 0,
            t,
            m,
            q,
            n_a,
            a: vec![vec![0; n_a]; t],
            pi_columns: vec![vec![0; q]; t],
            precision: vec![vec![0; m * m]; t],
            rank: vec![vec![0; m.min(q) + 1]; t],
            pi_sum: vec![vec![0.0; m * q]; t],
            projections: 0,
        }
    }

    pub fn add(&mut self, draw: &SparseDraw) -> Result<()> {
        if draw.points.len() != self.t {
            return Err(Error::Dimension(format!(
                "sparsified draw covers {} periods, expected {}",
                draw.points.len(),
                self.t
            )));
        }
        for (t, p) in draw.points.iter().enumerate() {
            if p.a_star.len() != self.n_a || p.prec_star.nrows() != self.m {
                return Err(Error::Dimension("sparsified draw has inconsistent shapes".into()));
            }
            for (k, v) in p.a_star.iter().enumerate() {
                if *v != 0.0 {
                    self.a[t][k] += 1;
                }
            }
            if p.pi_star.ncols() == self.q {
                for (j, col) in p.pi_star.column_iter().enumerate() {
                    if col.iter().any(|v| *v != 0.0) {
                        self.pi_columns[t][j] += 1;
                    }
                }
                for i in 0..self.m {
                    for j in 0..self.q {
                        self.pi_sum[t][i * self.q + j] += p.pi_star[(i, j)];
                    }
                }
            }
            for i in 0..self.m {
                for j in 0..self.m {
                    if p.prec_star[(i, j)] != 0.0 {
                        self.precision[t][i * self.m + j] += 1;
                    }
                }
            }
            let r = p.rank.min(self.rank[t].len() - 1);
            self.rank[t][r] += 1;
            if p.projected {
                self.projections += 1;
            }
        }
        self.draws += 1;
        Ok(())
    }

    pub fn summary(&self) -> Result<PipSummary> {
        if self.draws == 0 {
            return Err(Error::Contract("inclusion probabilities need at least one draw".into()));
        }
        let s = self.draws as f64;
        let scale = |rows: &Vec<Vec<u64>>| -> Vec<Vec<f64>> {
            rows.iter().map(|r| r.iter().map(|&c| c as f64 / s).collect()).collect()
        };
        Ok(PipSummary {
            draws: self.draws,
            a: scale(&self.a),
            pi_columns: scale(&self.pi_columns),
            precision: scale(&self.precision),
            rank: scale(&self.rank),
            pi_mean: self
                .pi_sum
                .iter()
                .map(|r| r.iter().map(|v| v / s).collect())
                .collect(),
        })
    }
}

/// Posterior inclusion and rank probabilities per period.
#[derive(Debug, Clone, PartialEq)]
pub struct PipSummary {
    pub draws: u64,
    pub a: Vec<Vec<f64>>,
    pub pi_columns: Vec<Vec<f64>>,
    pub precision: Vec<Vec<f64>>,
    /// `rank[t][r]`, summing to one over `r`.
    pub rank: Vec<Vec<f64>>,
    pub pi_mean: Vec<Vec<f64>>,
}

impl PipSummary {
    /// Most probable rank in each period.
    pub fn modal_rank(&self) -> Vec<usize> {
        self.rank
            .iter()
            .map(|p| {
                let mut best = 0;
                for (r, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }
}

/// Inclusion probabilities of a set of sparsified draws.
pub fn pip(draws: &[SparseDraw]) -> Result<PipSummary> {
    let first = draws
        .first()
        .ok_or_else(|| Error::Contract("inclusion probabilities need at least one draw".into()))?;
    let t = first.points.len();
    let p0 = first
        .points
        .first()
        .ok_or_else(|| Error::Contract("sparsified draw has no periods".into()))?;
    let m = p0.prec_star.nrows();
    let q = p0.pi_star.ncols();
    let mut acc = InclusionCounts::new(t, m, q, p0.a_star.len());
    for d in draws {
        acc.add(d)?;
    }
    acc.summary()
}
