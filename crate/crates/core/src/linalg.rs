//! Small dense linear-algebra and sampling helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Diagonal jitter ladder tried when a matrix fails to factorize.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-9, 1e-8, 1e-6];

/// Cholesky factorization with escalating diagonal jitter.
///
/// The jitter is scaled by the mean absolute diagonal so that the ladder is
/// meaningful irrespective of the units of the matrix.
pub fn cholesky_jitter(m: &DMatrix<f64>, stage: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let scale = if n == 0 {
        1.0
    } else {
        (m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1e-300)
    };
    for &j in JITTER_LADDER.iter() {
        let mut a = m.clone();
        if j > 0.0 {
            for i in 0..n {
                a[(i, i)] += j * scale;
            }
        }
        if let Some(c) = a.cholesky() {
            if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok(c);
            }
        }
    }
    Err(Error::numerical(
        stage,
        format!("matrix of order {n} not positive definite after jitter escalation"),
    ))
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Draw from `N(P^{-1} rhs, P^{-1})` given the Cholesky factor of the precision `P`.
pub fn sample_from_precision<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    rhs: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let mean = chol.solve(rhs);
    let u = standard_normal_vec(rng, rhs.len());
    // L L' = P, so L'^{-1} u has covariance P^{-1}.
    let noise = chol
        .l_dirty()
        .lower_triangle()
        .transpose()
        .solve_upper_triangular(&u)
        .expect("cholesky factor has positive diagonal");
    mean + noise
}

/// Draw from `N(mean, C C')` for a lower Cholesky factor `C` of the covariance.
pub fn sample_from_cov_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    lower: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    mean + lower * standard_normal_vec(rng, mean.len())
}

/// Inverse-gamma draw with shape `a` and rate `b` (density ∝ x^{-a-1} e^{-b/x}).
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0, "IG({shape}, {rate})");
    let g: f64 = Gamma::new(shape, 1.0)
        .expect("positive gamma shape")
        .sample(rng);
    rate / g
}

/// Symmetric eigendecomposition returning eigenvalues in ascending order with matching vectors.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// `f(M)` for symmetric `M` through its eigendecomposition.
pub fn sym_matrix_function(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_sorted(m);
    let d = DMatrix::from_diagonal(&vals.map(f));
    &vecs * d * vecs.transpose()
}

/// Largest singular value of `a`, via the eigenvalues of the smaller Gram matrix.
pub fn max_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let g = if a.ncols() <= a.nrows() {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    let (vals, _) = sym_eigen_sorted(&g);
    vals[vals.len() - 1].max(0.0).sqrt()
}

/// Inverse of a unit lower-triangular matrix.
pub fn unit_lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s;
        }
    }
    inv
}
