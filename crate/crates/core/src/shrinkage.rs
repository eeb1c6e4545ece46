//! Horseshoe hierarchy over the stacked vector `(b0', sqrt(theta)')'` of one equation.
//!
//! Auxiliary-variable form: `b_j ~ N(0, psi_j * varrho_k)`, `psi_j ~ IG(1/2, 1/rho_j)`,
//! `rho_j ~ IG(1/2, 1)`, `varrho_k ~ IG(1/2, 1/varpi_k)`, `varpi_k ~ IG(1/2, 1)`, with one
//! global scale per group `k` (constant coefficients vs. state-scale roots).
//! `psi` is the local variance and `rho` its auxiliary.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::inv_gamma;

pub const FLOOR: f64 = 1e-12;
pub const CEILING: f64 = 1e12;

/// Which of the two global scales governs an index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Constant = 0,
    Scale = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeState {
    /// Local variances `psi_j`, length `2K`.
    pub psi: Vec<f64>,
    /// Auxiliary scales of the local variances.
    pub rho: Vec<f64>,
    /// Group-global variances, indexed by [`Group`].
    pub varrho: [f64; 2],
    pub varpi: [f64; 2],
    k: usize,
    /// Number of draws clamped into `[FLOOR, CEILING]`.
    pub clamp_events: u64,
}

impl HorseshoeState {
    /// Unit initial state for `k` coefficients per group.
    pub fn new(k: usize) -> Self {
        HorseshoeState {
            psi: vec![1.0; 2 * k],
            rho: vec![1.0; 2 * k],
            varrho: [1.0; 2],
            varpi: [1.0; 2],
            k,
            clamp_events: 0,
        }
    }

    /// Exact draw from the prior hierarchy.
    pub fn from_prior<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let mut hs = HorseshoeState::new(k);
        for j in 0..2 * k {
            hs.rho[j] = inv_gamma(rng, 0.5, 1.0);
            hs.psi[j] = inv_gamma(rng, 0.5, 1.0 / hs.rho[j]);
        }
        for g in 0..2 {
            hs.varpi[g] = inv_gamma(rng, 0.5, 1.0);
            hs.varrho[g] = inv_gamma(rng, 0.5, 1.0 / hs.varpi[g]);
        }
        hs
    }

    /// Coefficients per group (`K_i`).
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn group(&self, j: usize) -> Group {
        if j < self.k {
            Group::Constant
        } else {
            Group::Scale
        }
    }

    /// `v_j = varrho_{k(j)} * psi_j`.
    pub fn prior_variance(&self) -> Vec<f64> {
        (0..2 * self.k)
            .map(|j| self.varrho[self.group(j) as usize] * self.psi[j])
            .collect()
    }

    /// Local update: `psi_j ~ IG(1, 1/rho_j + b_j^2 / (2 varrho_k))`,
    /// then `rho_j ~ IG(1, 1 + 1/psi_j)`.
    pub fn update_local<R: Rng + ?Sized>(&mut self, bhat: &[f64], rng: &mut R) -> Result<()> {
        check_len(bhat, 2 * self.k)?;
        for (j, &b) in bhat.iter().enumerate() {
            let g = self.group(j) as usize;
            let rate = 1.0 / self.rho[j] + b * b / (2.0 * self.varrho[g]);
            self.psi[j] = self.draw(rng, 1.0, rate)?;
            let rate = 1.0 + 1.0 / self.psi[j];
            self.rho[j] = self.draw(rng, 1.0, rate)?;
        }
        Ok(())
    }

    /// Global update: `varrho_k ~ IG((K+1)/2, 1/varpi_k + sum_j b_j^2/(2 psi_j))`
    /// over the block of group `k`, then `varpi_k ~ IG(1, 1 + 1/varrho_k)`.
    pub fn update_global<R: Rng + ?Sized>(&mut self, bhat: &[f64], rng: &mut R) -> Result<()> {
        check_len(bhat, 2 * self.k)?;
        let shape = (self.k as f64 + 1.0) / 2.0;
        for g in 0..2 {
            let block = g * self.k..(g + 1) * self.k;
            let ss: f64 = block.map(|j| bhat[j] * bhat[j] / self.psi[j]).sum();
            let rate = 1.0 / self.varpi[g] + 0.5 * ss;
            self.varrho[g] = self.draw(rng, shape, rate)?;
            let rate = 1.0 + 1.0 / self.varrho[g];
            self.varpi[g] = self.draw(rng, 1.0, rate)?;
        }
        Ok(())
    }

    /// Same as [`update_global`](Self::update_global) restricted to one group; used when
    /// the state scales are switched off.
    pub fn update_global_group<R: Rng + ?Sized>(
        &mut self,
        bhat: &[f64],
        group: Group,
        rng: &mut R,
    ) -> Result<()> {
        check_len(bhat, 2 * self.k)?;
        let g = group as usize;
        let shape = (self.k as f64 + 1.0) / 2.0;
        let ss: f64 = (g * self.k..(g + 1) * self.k)
            .map(|j| bhat[j] * bhat[j] / self.psi[j])
            .sum();
        let rate = 1.0 / self.varpi[g] + 0.5 * ss;
        self.varrho[g] = self.draw(rng, shape, rate)?;
        let rate = 1.0 + 1.0 / self.varrho[g];
        self.varpi[g] = self.draw(rng, 1.0, rate)?;
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
        let mut rate = rate;
        for _ in 0..3 {
            if !(rate.is_finite() && rate > 0.0) {
                rate = if rate.is_nan() { 1.0 } else { rate.clamp(FLOOR, CEILING) };
                self.clamp_events += 1;
            }
            let v = inv_gamma(rng, shape, rate);
            if v.is_finite() && v > 0.0 {
                if !(FLOOR..=CEILING).contains(&v) {
                    self.clamp_events += 1;
                }
                return Ok(v.clamp(FLOOR, CEILING));
            }
            rate = rate.clamp(FLOOR, CEILING);
            self.clamp_events += 1;
        }
        Err(Error::numerical(
            "horseshoe update",
            format!("non-finite inverse-gamma draw (shape {shape}, rate {rate})"),
        ))
    }
}

fn check_len(bhat: &[f64], n: usize) -> Result<()> {
    if bhat.len() != n {
        return Err(Error::Dimension(format!(
            "expected {n} coefficients, got {}",
            bhat.len()
        )));
    }
    if bhat.iter().any(|b| !b.is_finite()) {
        return Err(Error::Contract("coefficients must be finite".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_prior_variance() {
        let hs = HorseshoeState::new(3);
        assert_eq!(hs.prior_variance(), vec![1.0; 6]);
    }

    #[test]
    fn prior_variance_is_product() {
        let mut hs = HorseshoeState::new(2);
        hs.psi[0] = 2.0;
        hs.varrho[Group::Constant as usize] = 3.0;
        hs.varrho[Group::Scale as usize] = 0.5;
        let v = hs.prior_variance();
        assert_eq!(v[0], 6.0);
        assert_eq!(v[1], 3.0);
        assert_eq!(v[2], 0.5);
        assert!(v.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn local_update_with_zero_coefficient_is_unit_inverse_gamma() {
        // psi ~ IG(1, 1) so 1/psi ~ Exp(1) with mean 1 and sd 1.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut hs = HorseshoeState::new(1);
            hs.varrho = [1.0, 1.0];
            hs.update_local(&[0.0, 0.0], &mut rng).unwrap();
            sum += 1.0 / hs.psi[0];
        }
        let mean = sum / n as f64;
        let se = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn larger_coefficients_raise_local_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 20_000;
        let draw = |b: f64, rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..n)
                .map(|_| {
                    let mut hs = HorseshoeState::new(1);
                    hs.update_local(&[b, 0.0], rng).unwrap();
                    hs.psi[0]
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let small = draw(0.1, &mut rng);
        let large = draw(3.0, &mut rng);
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let i = (q * n as f64) as usize;
            assert!(large[i] > small[i], "quantile {q}");
        }
    }

    #[test]
    fn global_update_shape_and_moments() {
        // All b = 0, varpi = 1: varrho ~ IG((K+1)/2, 1) so E[1/varrho] = (K+1)/2.
        let k = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let shape = (k as f64 + 1.0) / 2.0;
        let mut sum = 0.0;
        for _ in 0..n {
            let mut hs = HorseshoeState::new(k);
            hs.update_global(&vec![0.0; 2 * k], &mut rng).unwrap();
            sum += 1.0 / hs.varrho[0];
        }
        let mean = sum / n as f64;
        let se = shape.sqrt() / (n as f64).sqrt();
        assert!((mean - shape).abs() < 3.0 * se, "mean {mean} vs {shape}");
    }

    #[test]
    fn rejects_non_finite_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hs = HorseshoeState::new(1);
        assert!(hs.update_local(&[f64::NAN, 0.0], &mut rng).is_err());
        assert!(hs.update_global(&[0.0], &mut rng).is_err());
    }

    #[test]
    fn clamps_extreme_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hs = HorseshoeState::new(1);
        hs.varrho = [1e-300, 1e-300];
        hs.update_local(&[1e200, 0.0], &mut rng).unwrap();
        assert!(hs.psi.iter().all(|v| (FLOOR..=CEILING).contains(v)));
        assert!(hs.clamp_events > 0);
    }
}
