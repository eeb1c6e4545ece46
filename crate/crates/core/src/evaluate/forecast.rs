//! One-step-ahead predictive simulation from a draw archive.

use chrono::NaiveDateTime;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Design;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, inv_gamma, standard_normal_vec, unit_lower_inverse};
use crate::sampler::{DrawArchive, ModelClass, RetainedDraw, System};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastOptions {
    pub seed: u64,
    /// Simulate from the sparsified `Pi*`, `A*` and `Sigma*` at the forecast date.
    pub sparsify: bool,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            seed: 11,
            sparsify: true,
        }
    }
}

/// Predictive ensemble for one origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub timestamp: NaiveDateTime,
    /// `S × M` draws of the levels `y_{T+1}`.
    pub levels: DMatrix<f64>,
}

impl Forecast {
    pub fn n_draws(&self) -> usize {
        self.levels.nrows()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.levels.row_mean().transpose()
    }

    pub fn median(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.levels.ncols(),
            self.levels.column_iter().map(|c| super::median(c.as_slice())),
        )
    }
}

/// Number of periods between the archive's last observation and the forecast date.
fn horizon(archive: &DrawArchive, design: &Design) -> Result<usize> {
    let last = archive
        .meta
        .timestamps
        .last()
        .ok_or_else(|| Error::Contract("archive has no timestamps".into()))?;
    let pos = design
        .timestamps
        .iter()
        .rposition(|t| t.to_string() == *last)
        .ok_or_else(|| Error::Contract(format!("archive window ending {last} is not part of the design")))?;
    Ok(design.n_obs() - pos)
}

fn check_shapes(archive: &DrawArchive, sys: &System) -> Result<()> {
    let meta = &archive.meta;
    let k: Vec<usize> = (0..sys.n_endog()).map(|i| sys.k(i)).collect();
    if meta.n_endog != sys.n_endog() || meta.j != sys.j() || meta.coint != sys.coint || meta.k != k {
        return Err(Error::Contract(
            "archive and design disagree on the model dimensions".into(),
        ));
    }
    if archive.draws.is_empty() {
        return Err(Error::Contract("archive holds no retained draws".into()));
    }
    Ok(())
}

/// Simulate `y_{T+1}` for every retained draw.
///
/// The archive may end before the design does (draws reused across several
/// origins); states and log-volatilities are then propagated over the gap.
pub fn predict_one_step(archive: &DrawArchive, design: &Design, opts: &ForecastOptions) -> Result<Forecast> {
    let config = &archive.meta.config;
    let sys = System::new(config.model_class, config.rank, design)?;
    check_shapes(archive, &sys)?;
    let steps = horizon(archive, design)?;
    let sparse_ctx = if opts.sparsify {
        archive.sparsify_context.as_ref()
    } else {
        None
    };
    let fixed_rank = config.model_class == ModelClass::VecmFixedRank;
    let m = sys.n_endog();

    let rows: Vec<DVector<f64>> = archive
        .draws
        .par_iter()
        .enumerate()
        .map(|(s, draw)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let step = simulate(draw, &sys, config.tvp, steps, sparse_ctx, fixed_rank, &mut rng)?;
            Ok(if sys.differenced() {
                step + &sys.last_levels
            } else {
                step
            })
        })
        .collect::<Result<_>>()?;
    let levels = DMatrix::from_fn(rows.len(), m, |s, i| rows[s][i]);
    if levels.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("predictive simulation", "non-finite forecast draw"));
    }
    Ok(Forecast {
        timestamp: design.next.timestamp,
        levels,
    })
}

fn simulate(
    draw: &RetainedDraw,
    sys: &System,
    tvp: bool,
    steps: usize,
    sparse_ctx: Option<&crate::sparsify::SparsifyContext>,
    fixed_rank: bool,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let m = sys.n_endog();
    let c = sys.coint;
    let spread = (steps as f64).sqrt();
    let coefs: Vec<DVector<f64>> = draw
        .b_last
        .iter()
        .zip(&draw.sqrt_theta)
        .map(|(b, st)| {
            if tvp {
                let z = standard_normal_vec(rng, b.len());
                b + st.component_mul(&z) * spread
            } else {
                b.clone()
            }
        })
        .collect();
    let var: Vec<f64> = (0..m)
        .map(|i| {
            let (mu, phi, sigma) = (draw.mu[i], draw.phi[i], draw.sigma[i]);
            let mut lh = draw.logh[(draw.logh.nrows() - 1, i)];
            for _ in 0..steps {
                let xi: f64 = StandardNormal.sample(rng);
                lh = mu + phi * (lh - mu) + sigma * xi;
            }
            let tau = draw.nu.as_ref().map_or(1.0, |nu| inv_gamma(rng, nu[i] / 2.0, nu[i] / 2.0));
            lh.exp() * tau
        })
        .collect();

    let wb = if c > 0 {
        draw.beta_raw.tr_mul(&sys.next_w)
    } else {
        DVector::zeros(0)
    };
    let alpha = DMatrix::from_fn(m, c, |i, j| coefs[i][j]);
    let a = DMatrix::from_fn(m, sys.j(), |i, k| sys.short_run_row(i, coefs[i].as_slice())[k]);
    let mut l_inv = DMatrix::identity(m, m);
    if sys.cholesky {
        for i in 1..m {
            let (_, _, chol) = sys.split(i, coefs[i].as_slice());
            for (j, v) in chol.iter().enumerate() {
                l_inv[(i, j)] = *v;
            }
        }
    }

    match sparse_ctx {
        None => {
            let mean = &alpha * &wb + &a * &sys.next_x;
            let mut u = DVector::zeros(m);
            for i in 0..m {
                let z: f64 = StandardNormal.sample(rng);
                let mut ui = var[i].sqrt() * z;
                for j in 0..i {
                    ui -= l_inv[(i, j)] * u[j];
                }
                u[i] = ui;
            }
            Ok(mean + u)
        }
        Some(ctx) => {
            let l = unit_lower_inverse(&l_inv);
            let sigma = &l * DMatrix::from_diagonal(&DVector::from_vec(var)) * l.transpose();
            let pi = &alpha * draw.beta_raw.transpose();
            let a_vec = DVector::from_iterator(m * sys.j(), a.transpose().iter().copied());
            let pi_hat = (c > 0 && !fixed_rank).then_some(&pi);
            let point = ctx.sparsify_point(pi_hat, &a_vec, &sigma, 0.0)?;
            let pi_star = if pi_hat.is_some() { point.pi_star } else { pi };
            let a_star = DMatrix::from_row_slice(m, sys.j(), point.a_star.as_slice());
            let mut mean = &a_star * &sys.next_x;
            if c > 0 {
                mean += &pi_star * &sys.next_w;
            }
            let prec = point.prec_star;
            let cov = prec
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::numerical("sparsified covariance", "precision is singular"))?;
            let chol = cholesky_jitter(&cov, "sparsified covariance")?;
            Ok(mean + chol.l() * standard_normal_vec(rng, m))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, Deterministics, Panel};
    use crate::sampler::{ArchiveMeta, Counters, ModelConfig};

    fn random_walk(t: usize, m: usize, seed: u64) -> Panel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = DMatrix::zeros(t, m);
        for r in 1..t {
            for i in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                y[(r, i)] = y[(r - 1, i)] + z;
            }
        }
        Panel::from_levels(y, DMatrix::zeros(t, 0)).unwrap()
    }

    /// Archive with hand-set draws for the given system.
    fn injected(
        config: ModelConfig,
        design: &Design,
        draws: usize,
        coef: impl Fn(usize) -> DVector<f64>,
        logh: f64,
    ) -> DrawArchive {
        let sys = System::new(config.model_class, config.rank, design).unwrap();
        let m = sys.n_endog();
        let t = sys.n_obs();
        let draw = RetainedDraw {
            beta_raw: DMatrix::identity(sys.q(), sys.coint),
            beta: DMatrix::identity(sys.q(), sys.coint),
            normalized: true,
            b_last: (0..m).map(&coef).collect(),
            sqrt_theta: (0..m).map(|i| DVector::zeros(sys.k(i))).collect(),
            logh: DMatrix::from_element(t, m, logh),
            mu: DVector::from_element(m, logh),
            phi: DVector::zeros(m),
            sigma: DVector::zeros(m),
            nu: None,
            pi_mean: DMatrix::zeros(m, sys.q()),
            ranks: Vec::new(),
            paths: None,
        };
        let meta = ArchiveMeta {
            library_version: String::new(),
            config_hash: config.hash(),
            config,
            names: Vec::new(),
            x_labels: Vec::new(),
            w_labels: Vec::new(),
            timestamps: design.timestamps.iter().map(|t| t.to_string()).collect(),
            n_obs: t,
            n_endog: m,
            q: sys.q(),
            j: sys.j(),
            coint: sys.coint,
            k: (0..m).map(|i| sys.k(i)).collect(),
            x_cols: sys.x_cols.clone(),
            cholesky: sys.cholesky,
            counters: Counters::default(),
            timings: Default::default(),
            draw_layout: Vec::new(),
        };
        DrawArchive {
            meta,
            draws: vec![draw; draws],
            inclusion: None,
            pi_dense_mean: Vec::new(),
            sparsify_context: None,
            stages: Vec::new(),
        }
    }

    #[test]
    fn zero_coefficients_centre_on_last_level() {
        let panel = random_walk(60, 2, 1);
        let design = build_design(&panel, 1, Deterministics::NONE).unwrap();
        let config = ModelConfig {
            model_class: ModelClass::VarDifferences,
            tvp: false,
            ..Default::default()
        };
        let sys = System::new(config.model_class, None, &design).unwrap();
        let archive = injected(config, &design, 20_000, |i| DVector::zeros(sys.k(i)), 0.0);
        let f = predict_one_step(&archive, &design, &ForecastOptions { seed: 3, sparsify: false }).unwrap();
        let mean = f.mean();
        let se = (1.0 / f.n_draws() as f64).sqrt();
        for i in 0..2 {
            assert!((mean[i] - design.next.last_levels[i]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn ar1_in_differences_matches_conditional_mean() {
        let panel = random_walk(80, 1, 2);
        let design = build_design(&panel, 1, Deterministics::INTERCEPT).unwrap();
        let config = ModelConfig {
            model_class: ModelClass::ArDifferences,
            tvp: false,
            ..Default::default()
        };
        let (rho, c) = (0.6, 0.3);
        let archive = injected(config, &design, 20_000, |_| DVector::from_vec(vec![rho, c]), 0.5f64.ln());
        let f = predict_one_step(&archive, &design, &ForecastOptions { seed: 4, sparsify: false }).unwrap();
        let expect = design.next.last_levels[0] + c + rho * design.next.x[0];
        let se = (0.5 / f.n_draws() as f64).sqrt();
        assert!((f.mean()[0] - expect).abs() < 3.0 * se, "{} vs {expect}", f.mean()[0]);
    }

    #[test]
    fn constant_coefficients_are_not_propagated() {
        let panel = random_walk(40, 1, 3);
        let design = build_design(&panel, 1, Deterministics::NONE).unwrap();
        let config = ModelConfig {
            model_class: ModelClass::ArDifferences,
            tvp: false,
            ..Default::default()
        };
        let mut archive = injected(config, &design, 50, |_| DVector::from_vec(vec![0.4]), -30.0);
        for d in &mut archive.draws {
            d.sqrt_theta[0][0] = 1.0;
        }
        let f = predict_one_step(&archive, &design, &ForecastOptions::default()).unwrap();
        let expect = design.next.last_levels[0] + 0.4 * design.next.x[0];
        assert!(f.levels.iter().all(|v| (v - expect).abs() < 1e-5));
    }

    #[test]
    fn foreign_window_is_rejected() {
        let panel = random_walk(60, 1, 4);
        let early = build_design(&panel.slice(0, 30), 1, Deterministics::NONE).unwrap();
        let late = build_design(&panel.slice(35, 60), 1, Deterministics::NONE).unwrap();
        let config = ModelConfig {
            model_class: ModelClass::ArDifferences,
            ..Default::default()
        };
        let archive = injected(config, &early, 5, |_| DVector::zeros(1), 0.0);
        assert!(matches!(
            predict_one_step(&archive, &late, &ForecastOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn stale_archive_propagates_over_the_gap() {
        let panel = random_walk(60, 1, 5);
        let early = build_design(&panel.slice(0, 50), 1, Deterministics::NONE).unwrap();
        let late = build_design(&panel.slice(3, 53), 1, Deterministics::NONE).unwrap();
        let config = ModelConfig {
            model_class: ModelClass::ArDifferences,
            ..Default::default()
        };
        let archive = injected(config, &early, 5, |_| DVector::zeros(1), 0.0);
        assert_eq!(horizon(&archive, &late).unwrap(), 4);
        assert_eq!(horizon(&archive, &early).unwrap(), 1);
        let f = predict_one_step(&archive, &late, &ForecastOptions::default()).unwrap();
        assert_eq!(f.timestamp, late.next.timestamp);
    }
}
