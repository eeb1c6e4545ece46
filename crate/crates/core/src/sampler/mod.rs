//! Gibbs sampler over all equations, the long-run matrix and the volatilities.

mod archive;
mod config;
mod system;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use archive::{
    read_matrices, write_matrices, write_summaries, ArchiveMeta, Counters, DrawArchive, RetainedDraw, Stage,
    SUMMARY_FILES,
};
pub use config::{ErrorDist, ModelClass, ModelConfig, RankThreshold};
pub use system::System;

use crate::cointegration::{assemble_pi, draw_beta, normalize, BetaInputs};
use crate::data::Design;
use crate::error::{Error, Result};
use crate::linalg::{inv_gamma, unit_lower_inverse};
use crate::shrinkage::Group;
use crate::sparsify::{noise_threshold, InclusionCounts, SparseDraw, SparsifyContext};
use crate::states::{draw_constant_scales, ffbs_states, EquationData, EquationState};
use crate::volatility::{draw_nu, draw_tau, draw_volatility, VolState};

/// Mutable state of the chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub eqs: Vec<EquationState>,
    pub vols: Vec<VolState>,
    /// `q × c` long-run matrix in the expanded parameterization.
    pub beta: DMatrix<f64>,
    /// `T × M` reduced-form residuals.
    pub u: DMatrix<f64>,
    /// `T × M` structural residuals.
    pub eps: DMatrix<f64>,
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len().max(2) as f64;
    let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

fn with_context(err: Error, sweep: usize, stage: &str, eq: Option<usize>) -> Error {
    match err {
        Error::Numerical { stage: inner, detail } => {
            let at = match eq {
                Some(i) => format!("{stage} (sweep {sweep}, equation {}): {inner}", i + 1),
                None => format!("{stage} (sweep {sweep}): {inner}"),
            };
            Error::Numerical { stage: at, detail }
        }
        other => other,
    }
}

impl ChainState {
    pub fn new(sys: &System, student_t: bool) -> Self {
        let t = sys.n_obs();
        let m = sys.n_endog();
        let eqs = (0..m).map(|i| EquationState::new(t, sys.k(i))).collect();
        let vols = (0..m)
            .map(|i| {
                let col: Vec<f64> = sys.target.column(i).iter().copied().collect();
                let d: Vec<f64> = if sys.differenced() {
                    col
                } else {
                    col.windows(2).map(|w| w[1] - w[0]).collect()
                };
                let v = variance(&d);
                let mu = if v > 0.0 && v.is_finite() { v.ln() } else { 0.0 };
                VolState::new(t, mu, student_t)
            })
            .collect();
        let q = sys.q();
        let beta = DMatrix::from_fn(q, sys.coint, |r, c| if r == c { 1.0 } else { 0.0 });
        ChainState {
            eqs,
            vols,
            beta,
            u: sys.target.clone(),
            eps: sys.target.clone(),
        }
    }

    fn effective_variance(&self, i: usize, t: usize) -> f64 {
        let v = &self.vols[i];
        let tau = v.tau.as_ref().map_or(1.0, |x| x[t]);
        v.logh[t].exp() * tau
    }

    /// Recompute `u_i` and `eps_i` for equation `i` from its regressors and coefficients.
    fn update_residuals(&mut self, sys: &System, i: usize, z: &DMatrix<f64>) {
        let st = &self.eqs[i];
        let c_short = sys.coint + sys.x_cols[i].len();
        let k = st.k();
        for t in 0..sys.n_obs() {
            let (mut fit, mut chol) = (0.0, 0.0);
            for j in 0..k {
                let b = st.b0[j] + st.sqrt_theta[j] * st.btilde[(t, j)];
                if j < c_short {
                    fit += z[(t, j)] * b;
                } else {
                    chol += z[(t, j)] * b;
                }
            }
            let u = sys.target[(t, i)] - fit;
            self.u[(t, i)] = u;
            self.eps[(t, i)] = u - chol;
        }
    }

    /// Residuals of every equation from stored quantities only.
    pub fn recompute_residuals(&self, sys: &System) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut scratch = self.clone();
        let wb = &sys.w * &self.beta;
        for i in 0..sys.n_endog() {
            let z = sys.regressors(i, &wb, &scratch.u);
            scratch.update_residuals(sys, i, &z);
        }
        (scratch.u, scratch.eps)
    }

    /// `M × c` adjustment matrix at `t`.
    fn alpha(&self, sys: &System, t: usize) -> DMatrix<f64> {
        let m = sys.n_endog();
        DMatrix::from_fn(m, sys.coint, |i, j| {
            let st = &self.eqs[i];
            st.b0[j] + st.sqrt_theta[j] * st.btilde[(t, j)]
        })
    }

    /// Unit lower-triangular `L_t^{-1}` from the Cholesky coefficients.
    fn l_inv(&self, sys: &System, t: usize) -> DMatrix<f64> {
        let m = sys.n_endog();
        let mut l = DMatrix::identity(m, m);
        if sys.cholesky {
            for i in 1..m {
                let st = &self.eqs[i];
                let off = sys.coint + sys.x_cols[i].len();
                for j in 0..i {
                    let k = off + j;
                    l[(i, j)] = st.b0[k] + st.sqrt_theta[k] * st.btilde[(t, k)];
                }
            }
        }
        l
    }

    /// `Sigma_t = L_t H_t L_t'`.
    fn sigma(&self, sys: &System, t: usize) -> DMatrix<f64> {
        let m = sys.n_endog();
        let l = unit_lower_inverse(&self.l_inv(sys, t));
        let h = DVector::from_fn(m, |i, _| self.effective_variance(i, t));
        &l * DMatrix::from_diagonal(&h) * l.transpose()
    }
}

fn draw_prior_bhat<R: Rng + ?Sized>(prior_var: &[f64], k: usize, tvp: bool, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(2 * k, |j, _| {
        if j >= k && !tvp {
            0.0
        } else {
            let z: f64 = StandardNormal.sample(rng);
            z * prior_var[j].sqrt()
        }
    })
}

fn prior_random_walk<R: Rng + ?Sized>(t: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(t, k);
    for j in 0..k {
        let mut acc = 0.0;
        for r in 0..t {
            let z: f64 = StandardNormal.sample(rng);
            acc += z;
            out[(r, j)] = acc;
        }
    }
    out
}

struct Timer {
    totals: BTreeMap<String, f64>,
}

impl Timer {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.totals.entry(name.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }
}

/// Run the sampler and collect the retained draws.
pub fn run_mcmc(config: &ModelConfig, design: &Design, names: &[String]) -> Result<DrawArchive> {
    config.validate(Some(design.n_endog))?;
    let sys = System::new(config.model_class, config.rank, design)?;
    let m = sys.n_endog();
    let t_obs = sys.n_obs();
    let q = sys.q();
    let tvp = config.tvp;
    let student_t = config.error_dist == ErrorDist::StudentT;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = ChainState::new(&sys, student_t);
    for v in &mut state.vols {
        v.nu_sampler.step = config.nu_step;
    }
    let started = Instant::now();
    let mut timer = Timer {
        totals: BTreeMap::new(),
    };

    let sparsify_ctx = config
        .sparsify
        .then(|| SparsifyContext::new(&sys.w, &sys.x, m, config.glasso));
    let mut inclusion = sparsify_ctx
        .as_ref()
        .map(|_| InclusionCounts::new(t_obs, m, if sys.coint > 0 { q } else { 0 }, m * sys.j()));
    let mut pi_dense_sum: Vec<DMatrix<f64>> = vec![DMatrix::zeros(m, q); t_obs];
    let mut counters = Counters::default();
    let mut stages = Vec::new();
    let mut draws = Vec::with_capacity(config.retained());
    let fixed_rank = config.model_class == ModelClass::VecmFixedRank;

    for sweep in 0..config.draws {
        let mut log = Vec::new();
        let mut stage = |s: Stage| {
            if config.record_stages {
                log.push(s);
            }
        };

        stage(Stage::RebuildRegressors);
        let wb = &sys.w * &state.beta;

        for i in 0..m {
            let z = sys.regressors(i, &wb, &state.u);
            let k = sys.k(i);
            let eq = EquationData {
                y: sys.target.column(i).into_owned(),
                z,
                h: DVector::from_iterator(t_obs, state.vols[i].logh.iter().map(|l| l.exp())),
                tau: state.vols[i].tau.as_ref().map(|v| DVector::from_column_slice(v)),
            };
            stage(Stage::ConstantScales(i));
            let bhat = timer
                .time("constant_scales", || {
                    let st = &state.eqs[i];
                    if config.likelihood {
                        draw_constant_scales(&eq, &st.btilde, &st.hs, tvp, &mut rng)
                    } else {
                        Ok(draw_prior_bhat(&st.hs.prior_variance(), k, tvp, &mut rng))
                    }
                })
                .map_err(|e| with_context(e, sweep, "constant coefficients", Some(i)))?;
            let st = &mut state.eqs[i];
            st.set_bhat(&bhat);

            stage(Stage::Shrinkage(i));
            timer
                .time("shrinkage", || -> Result<()> {
                    st.hs.update_local(bhat.as_slice(), &mut rng)?;
                    if tvp {
                        st.hs.update_global(bhat.as_slice(), &mut rng)
                    } else {
                        st.hs.update_global_group(bhat.as_slice(), Group::Constant, &mut rng)
                    }
                })
                .map_err(|e| with_context(e, sweep, "shrinkage", Some(i)))?;

            if tvp {
                stage(Stage::States(i));
                st.btilde = timer
                    .time("states", || {
                        if config.likelihood {
                            ffbs_states(&eq, &st.b0, &st.sqrt_theta, &mut rng)
                        } else {
                            Ok(prior_random_walk(t_obs, k, &mut rng))
                        }
                    })
                    .map_err(|e| with_context(e, sweep, "states", Some(i)))?;
            }
            state.update_residuals(&sys, i, &eq.z);
        }

        let mut normalized_pair = None;
        if sys.coint > 0 {
            stage(Stage::LongRun);
            let alpha: Vec<DMatrix<f64>> = (0..t_obs).map(|t| state.alpha(&sys, t)).collect();
            let whiten: Vec<DMatrix<f64>> = (0..t_obs)
                .map(|t| {
                    let mut li = state.l_inv(&sys, t);
                    for i in 0..m {
                        let s = 1.0 / state.effective_variance(i, t).sqrt();
                        li.row_mut(i).scale_mut(s);
                    }
                    li
                })
                .collect();
            // Responses net of the short-run part: target - fitted + long-run part.
            let response = DMatrix::from_fn(t_obs, m, |t, i| {
                let mut v = state.u[(t, i)];
                for j in 0..sys.coint {
                    v += wb[(t, j)] * alpha[t][(i, j)];
                }
                v
            });
            let inputs = BetaInputs {
                response: &response,
                w: &sys.w,
                alpha: &alpha,
                whiten: &whiten,
            };
            state.beta = timer
                .time("long_run", || draw_beta(&inputs, config.s0, config.likelihood, &mut rng))
                .map_err(|e| with_context(e, sweep, "long-run matrix", None))?;
            normalized_pair = normalize(&state.beta, &[]).map(|(b, _)| b);
            if normalized_pair.is_none() {
                counters.normalize_skips += 1;
            }
            let wb = &sys.w * &state.beta;
            for i in 0..m {
                let z = sys.regressors(i, &wb, &state.u);
                state.update_residuals(&sys, i, &z);
            }
        }

        // Volatilities are independent across equations given the residuals; each
        // equation gets its own generator seeded from the master stream.
        let seeds: Vec<u64> = (0..m).map(|_| rng.next_u64()).collect();
        for i in 0..m {
            stage(Stage::Volatility(i));
        }
        let in_burnin = sweep < config.burnin;
        let eps = &state.eps;
        let vol_results: Vec<Result<()>> = timer.time("volatility", || {
            state
                .vols
                .par_iter_mut()
                .enumerate()
                .map(|(i, vol)| {
                    let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
                    let e: Vec<f64> = eps.column(i).iter().copied().collect();
                    let scaled: Vec<f64> = match &vol.tau {
                        Some(tau) => e.iter().zip(tau).map(|(x, t)| x / t.sqrt()).collect(),
                        None => e.clone(),
                    };
                    draw_volatility(&scaled, vol, &config.sv_prior, config.likelihood, &mut r)?;
                    if let Some(nu) = vol.nu {
                        let tau = if config.likelihood {
                            draw_tau(&e, &vol.logh, nu, &mut r)
                        } else {
                            (0..e.len()).map(|_| inv_gamma(&mut r, nu / 2.0, nu / 2.0)).collect()
                        };
                        let new_nu = draw_nu(&tau, nu, config.sv_prior.nu_max, &mut vol.nu_sampler, &mut r);
                        if in_burnin {
                            vol.nu_sampler.adapt();
                        }
                        vol.tau = Some(tau);
                        vol.nu = Some(new_nu);
                    }
                    Ok(())
                })
                .collect()
        });
        for (i, r) in vol_results.into_iter().enumerate() {
            r.map_err(|e| with_context(e, sweep, "volatility", Some(i)))?;
        }

        if config.check_residuals {
            let (_, eps) = state.recompute_residuals(&sys);
            let gap = (&eps - &state.eps).amax();
            counters.max_residual_gap = counters.max_residual_gap.max(gap);
        }

        if config.is_retained(sweep) {
            let pis: Vec<DMatrix<f64>> = if sys.coint > 0 {
                let alpha: Vec<DMatrix<f64>> = (0..t_obs).map(|t| state.alpha(&sys, t)).collect();
                assemble_pi(&alpha, &state.beta)
            } else {
                vec![DMatrix::zeros(m, 0); t_obs]
            };
            for (acc, p) in pi_dense_sum.iter_mut().zip(&pis) {
                if p.ncols() == q {
                    *acc += p;
                }
            }
            let mut ranks = Vec::new();
            let mut pi_mean = DMatrix::zeros(m, pis.first().map_or(0, |p| p.ncols()));
            if let Some(ctx) = &sparsify_ctx {
                stage(Stage::Sparsify);
                let phi = match config.rank_threshold {
                    RankThreshold::PerDraw => noise_threshold(&state.u),
                    RankThreshold::Fixed(v) => v,
                };
                let inputs: Vec<(DVector<f64>, DMatrix<f64>)> = (0..t_obs)
                    .map(|t| {
                        let mut a = Vec::with_capacity(m * sys.j());
                        for (i, st) in state.eqs.iter().enumerate() {
                            let b = st.coefficient(t);
                            a.extend(sys.short_run_row(i, b.as_slice()));
                        }
                        (DVector::from_vec(a), state.sigma(&sys, t))
                    })
                    .collect();
                let points = timer
                    .time("sparsify", || {
                        inputs
                            .par_iter()
                            .zip(pis.par_iter())
                            .map(|((a, sigma), pi)| {
                                let pi_hat = (sys.coint > 0 && !fixed_rank).then_some(pi);
                                let mut p = ctx.sparsify_point(pi_hat, a, sigma, phi)?;
                                if fixed_rank {
                                    p.pi_star = pi.clone();
                                    p.rank = sys.coint;
                                }
                                Ok(p)
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .map_err(|e| with_context(e, sweep, "sparsification", None))?;
                let draw = SparseDraw { points };
                counters.glasso_projections += draw.points.iter().filter(|p| p.projected).count() as u64;
                ranks = draw.ranks();
                if sys.coint > 0 {
                    for p in &draw.points {
                        pi_mean += &p.pi_star;
                    }
                    pi_mean /= t_obs as f64;
                }
                inclusion
                    .as_mut()
                    .expect("inclusion exists with sparsification")
                    .add(&draw)?;
            } else if sys.coint > 0 {
                for p in &pis {
                    pi_mean += p;
                }
                pi_mean /= t_obs as f64;
            }

            let beta_raw = state.beta.clone();
            let (beta, normalized) = match &normalized_pair {
                Some(b) => (b.clone(), true),
                None => (beta_raw.clone(), sys.coint == 0),
            };
            let retained = RetainedDraw {
                beta_raw,
                beta,
                normalized,
                b_last: state.eqs.iter().map(|st| st.coefficient(t_obs - 1)).collect(),
                sqrt_theta: state.eqs.iter().map(|st| st.sqrt_theta.clone()).collect(),
                logh: DMatrix::from_fn(t_obs, m, |t, i| state.vols[i].logh[t]),
                mu: DVector::from_fn(m, |i, _| state.vols[i].mu),
                phi: DVector::from_fn(m, |i, _| state.vols[i].phi),
                sigma: DVector::from_fn(m, |i, _| state.vols[i].sigma),
                nu: student_t.then(|| DVector::from_fn(m, |i, _| state.vols[i].nu.unwrap_or(f64::NAN))),
                pi_mean,
                ranks,
                paths: config
                    .keep_paths
                    .then(|| state.eqs.iter().map(|st| st.coefficient_paths()).collect()),
            };
            let finite = retained.b_last.iter().all(|b| b.iter().all(|v| v.is_finite()))
                && retained.logh.iter().all(|v| v.is_finite())
                && retained.beta_raw.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::numerical(
                    format!("retained draw (sweep {sweep})"),
                    "non-finite value in a retained draw",
                ));
            }
            draws.push(retained);
        }
        if config.record_stages {
            stages.push(log);
        }
    }

    counters.clamp_events = state.eqs.iter().map(|s| s.hs.clamp_events).sum();
    counters.phi_rejections = state.vols.iter().map(|v| v.phi_rejections).sum();
    counters.nu_acceptance = state.vols.iter().map(|v| v.nu_sampler.acceptance_rate()).collect();
    let n = draws.len().max(1) as f64;
    let pi_dense_mean = pi_dense_sum.into_iter().map(|p| p / n).collect();
    let mut timings = timer.totals;
    timings.insert("total".into(), started.elapsed().as_secs_f64());

    let endog: Vec<String> = names.iter().take(m).cloned().collect();
    let meta = ArchiveMeta {
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        config_hash: config.hash(),
        names: endog,
        x_labels: sys.x_labels(design, names),
        w_labels: if sys.coint > 0 {
            names.iter().take(q).cloned().collect()
        } else {
            Vec::new()
        },
        timestamps: design.timestamps.iter().map(|t| t.to_string()).collect(),
        n_obs: t_obs,
        n_endog: m,
        q,
        j: sys.j(),
        coint: sys.coint,
        k: (0..m).map(|i| sys.k(i)).collect(),
        x_cols: sys.x_cols.clone(),
        cholesky: sys.cholesky,
        counters,
        timings,
        draw_layout: Vec::new(),
    };
    Ok(DrawArchive {
        meta,
        draws,
        inclusion,
        pi_dense_mean,
        sparsify_context: sparsify_ctx,
        stages,
    })
}
