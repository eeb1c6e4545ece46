//! Seeded fixtures shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvpvecm::states::EquationData;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn spd(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = uniform_matrix(m, m, rng);
    a.tr_mul(&a) + DMatrix::identity(m, m) * 0.5
}

/// A regression of `t` observations on `k` regressors with unit variance.
pub fn equation(t: usize, k: usize, rng: &mut ChaCha8Rng) -> EquationData {
    let z = uniform_matrix(t, k, rng);
    let y = DVector::from_fn(t, |_, _| rng.random::<f64>() - 0.5);
    EquationData {
        y,
        z,
        h: DVector::from_element(t, 1.0),
        tau: None,
    }
}
