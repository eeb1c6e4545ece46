//! Rolling-window pseudo out-of-sample evaluation over a grid of model configurations.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_design_with_next, Panel};
use crate::error::{Error, Result};
use crate::sampler::{run_mcmc, ModelConfig};

use super::forecast::{predict_one_step, Forecast, ForecastOptions};
use super::mcs::{mcs, LossMatrix, McsOptions, McsResult};
use super::scores::{crps_sample, rmse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PointForecast {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    /// Rows of the panel in every estimation window.
    pub window: usize,
    /// Number of forecast origins, counted back from the end of the panel.
    pub holdout: usize,
    /// Re-estimate every `stride` origins and reuse the draws in between.
    pub stride: usize,
    pub seed: u64,
    pub point: PointForecast,
    /// Divide each series by the standard deviation of its differences within the
    /// estimation window; forecasts are scaled back before scoring.
    pub scale: bool,
    pub sparsify_forecast: bool,
    pub mcs: McsOptions,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            window: 400,
            holdout: 100,
            stride: 1,
            seed: 2024,
            point: PointForecast::Median,
            scale: false,
            sparsify_forecast: true,
            mcs: McsOptions::default(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self, n_rows: usize) -> Result<()> {
        let mut v = Vec::new();
        if self.holdout == 0 {
            v.push("holdout: must be positive".to_string());
        }
        if self.stride == 0 {
            v.push("stride: must be positive".to_string());
        }
        if self.window + self.holdout > n_rows {
            v.push(format!(
                "window: {} rows plus {} holdout origins exceed the {n_rows} panel rows",
                self.window, self.holdout
            ));
        }
        if !(self.mcs.alpha > 0.0 && self.mcs.alpha < 1.0) {
            v.push("mcs.alpha: must lie in (0, 1)".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub label: String,
    pub config: ModelConfig,
}

/// Forecasts of one model over the holdout.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub label: String,
    /// One `S × M` level ensemble per origin.
    pub ensembles: Vec<DMatrix<f64>>,
    /// `H × M` point forecasts.
    pub point: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFailure {
    pub label: String,
    pub origin: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub config: BacktestConfig,
    pub names: Vec<String>,
    /// Forecast dates.
    pub points: Vec<String>,
    /// `H × M` realized levels.
    pub actuals: DMatrix<f64>,
    pub runs: Vec<ForecastRun>,
    pub failures: Vec<ModelFailure>,
}

/// Per-series and total scores of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub label: String,
    pub rmse: Vec<f64>,
    pub rmse_total: f64,
    pub crps: Vec<f64>,
    pub crps_total: f64,
}

/// Mix a base seed with an index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One estimation and the origins that reuse its draws.
struct Block {
    model: usize,
    /// Holdout indices `h` served by this estimation; the first one is estimated at.
    origins: Vec<usize>,
}

fn first_target(panel: &Panel, cfg: &BacktestConfig) -> usize {
    panel.n_rows() - cfg.holdout
}

/// Forecasts for all origins of one block.
fn run_block(
    panel: &Panel,
    model: &ModelSpec,
    cfg: &BacktestConfig,
    block: &Block,
) -> std::result::Result<Vec<(usize, Forecast)>, ModelFailure> {
    let start = first_target(panel, cfg);
    let fail = |h: usize, e: Error| ModelFailure {
        label: model.label.clone(),
        origin: h,
        message: e.to_string(),
    };
    let h0 = block.origins[0];
    // Target row `start + h`; the window ends one row earlier.
    let window = |h: usize| panel.slice(start + h - cfg.window, start + h);
    let est_panel = window(h0);
    let factors = if cfg.scale {
        est_panel.scaled().1
    } else {
        vec![1.0; panel.n_endog() + panel.n_factors()]
    };
    let prepare = |p: Panel| -> Result<Panel> {
        if cfg.scale {
            p.scaled_by(&factors)
        } else {
            Ok(p)
        }
    };
    let next_ts = |h: usize| panel.timestamps[start + h];
    let mut config = model.config.clone();
    config.seed = derive_seed(cfg.seed, h0 as u64);
    let est = prepare(est_panel).map_err(|e| fail(h0, e))?;
    let design =
        build_design_with_next(&est, config.lags, config.deterministics, next_ts(h0)).map_err(|e| fail(h0, e))?;
    let archive = run_mcmc(&config, &design, &panel.names).map_err(|e| fail(h0, e))?;
    let mut out = Vec::with_capacity(block.origins.len());
    for &h in &block.origins {
        let p = prepare(window(h)).map_err(|e| fail(h, e))?;
        let design =
            build_design_with_next(&p, config.lags, config.deterministics, next_ts(h)).map_err(|e| fail(h, e))?;
        let opts = ForecastOptions {
            seed: derive_seed(cfg.seed ^ 0xF0CA_57, h as u64),
            sparsify: cfg.sparsify_forecast,
        };
        let mut f = predict_one_step(&archive, &design, &opts).map_err(|e| fail(h, e))?;
        for (j, s) in factors.iter().take(panel.n_endog()).enumerate() {
            f.levels.column_mut(j).scale_mut(*s);
        }
        out.push((h, f));
    }
    Ok(out)
}

/// Run every model over the holdout. Models failing at any origin are dropped
/// from the result and listed in `failures`.
pub fn backtest(panel: &Panel, models: &[ModelSpec], cfg: &BacktestConfig) -> Result<BacktestResult> {
    cfg.validate(panel.n_rows())?;
    if models.is_empty() {
        return Err(Error::Contract("backtest needs at least one model".into()));
    }
    for (k, m) in models.iter().enumerate() {
        if models[..k].iter().any(|o| o.label == m.label) {
            return Err(Error::Validation(vec![format!("models: duplicate label {}", m.label)]));
        }
        let mut v = Vec::new();
        if let Err(Error::Validation(errs)) = m.config.validate(Some(panel.n_endog())) {
            v.extend(errs.into_iter().map(|e| format!("{}: {e}", m.label)));
        }
        if m.config.lags + 3 > cfg.window {
            v.push(format!("{}: window too short for lag order {}", m.label, m.config.lags));
        }
        if !v.is_empty() {
            log::warn!("model {} has an invalid configuration: {}", m.label, v.join("; "));
        }
    }
    let blocks: Vec<Block> = (0..models.len())
        .flat_map(|model| {
            (0..cfg.holdout).step_by(cfg.stride).map(move |h0| Block {
                model,
                origins: (h0..(h0 + cfg.stride).min(cfg.holdout)).collect(),
            })
        })
        .collect();
    let results: Vec<_> = blocks
        .par_iter()
        .map(|b| run_block(panel, &models[b.model], cfg, b))
        .collect();

    let m = panel.n_endog();
    let mut per_model: Vec<Vec<Option<Forecast>>> = vec![vec![None; cfg.holdout]; models.len()];
    let mut failures = Vec::new();
    for (b, r) in blocks.iter().zip(results) {
        match r {
            Ok(fs) => {
                for (h, f) in fs {
                    per_model[b.model][h] = Some(f);
                }
            }
            Err(f) => failures.push(f),
        }
    }
    let mut runs = Vec::new();
    for (k, fs) in per_model.into_iter().enumerate() {
        let label = &models[k].label;
        if failures.iter().any(|f| &f.label == label) {
            log::warn!("model {label} failed and is excluded from the comparison");
            continue;
        }
        let fs: Vec<Forecast> = fs.into_iter().map(|f| f.expect("every origin ran")).collect();
        let point = DMatrix::from_fn(cfg.holdout, m, |h, i| match cfg.point {
            PointForecast::Median => fs[h].median()[i],
            PointForecast::Mean => fs[h].mean()[i],
        });
        runs.push(ForecastRun {
            label: label.clone(),
            ensembles: fs.into_iter().map(|f| f.levels).collect(),
            point,
        });
    }
    let start = first_target(panel, cfg);
    let actuals = panel.levels.rows(start, cfg.holdout).into_owned();
    let points = panel.timestamps[start..].iter().map(|t| t.to_string()).collect();
    Ok(BacktestResult {
        config: cfg.clone(),
        names: panel.names.iter().take(m).cloned().collect(),
        points,
        actuals,
        runs,
        failures,
    })
}

impl BacktestResult {
    fn labels(&self) -> Vec<String> {
        self.runs.iter().map(|r| r.label.clone()).collect()
    }

    /// Squared error of the point forecast, averaged over series, per origin and model.
    pub fn squared_error_losses(&self) -> Result<LossMatrix> {
        let h = self.actuals.nrows();
        let m = self.actuals.ncols() as f64;
        let losses = DMatrix::from_fn(h, self.runs.len(), |t, k| {
            let e = self.runs[k].point.row(t) - self.actuals.row(t);
            e.norm_squared() / m
        });
        LossMatrix::new(self.labels(), self.points.clone(), losses)
    }

    /// CRPS averaged over series, per origin and model.
    pub fn crps_losses(&self) -> Result<LossMatrix> {
        let table = self.crps_cells()?;
        let m = self.actuals.ncols() as f64;
        let losses = DMatrix::from_fn(self.actuals.nrows(), self.runs.len(), |t, k| {
            table[k].row(t).sum() / m
        });
        LossMatrix::new(self.labels(), self.points.clone(), losses)
    }

    /// `H × M` CRPS values per model.
    fn crps_cells(&self) -> Result<Vec<DMatrix<f64>>> {
        let (h, m) = self.actuals.shape();
        self.runs
            .iter()
            .map(|run| {
                let mut out = DMatrix::zeros(h, m);
                for t in 0..h {
                    for i in 0..m {
                        let ens: Vec<f64> = run.ensembles[t].column(i).iter().copied().collect();
                        out[(t, i)] = crps_sample(&ens, self.actuals[(t, i)])?;
                    }
                }
                Ok(out)
            })
            .collect()
    }

    pub fn scores(&self) -> Result<Vec<ModelScores>> {
        let crps = self.crps_cells()?;
        self.runs
            .iter()
            .zip(crps)
            .map(|(run, c)| {
                let r = rmse(&run.point, &self.actuals)?;
                let crps_series: Vec<f64> = c.column_iter().map(|col| col.mean()).collect();
                Ok(ModelScores {
                    label: run.label.clone(),
                    rmse: r.per_series,
                    rmse_total: r.total,
                    crps: crps_series,
                    crps_total: c.mean(),
                })
            })
            .collect()
    }

    pub fn mcs_squared_error(&self) -> Result<McsResult> {
        mcs(&self.squared_error_losses()?, &self.config.mcs)
    }

    pub fn mcs_crps(&self) -> Result<McsResult> {
        mcs(&self.crps_losses()?, &self.config.mcs)
    }

    /// Score table with one row per model and statistic; columns are the series and `total`.
    pub fn write_scores<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["model".to_string(), "statistic".to_string()];
        header.extend(self.names.iter().cloned());
        header.push("total".into());
        w.write_record(&header)?;
        for s in self.scores()? {
            for (stat, per, total) in [("rmse", &s.rmse, s.rmse_total), ("crps", &s.crps, s.crps_total)] {
                let mut rec = vec![s.label.clone(), stat.to_string()];
                rec.extend(per.iter().map(|v| v.to_string()));
                rec.push(total.to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Point forecasts and realized values in long format.
    pub fn write_forecasts<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "model", "series", "point", "actual"])?;
        for run in &self.runs {
            for (t, time) in self.points.iter().enumerate() {
                for (i, name) in self.names.iter().enumerate() {
                    w.write_record([
                        time.as_str(),
                        &run.label,
                        name,
                        &run.point[(t, i)].to_string(),
                        &self.actuals[(t, i)].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Total CRPS of `model` relative to `benchmark`.
    pub fn crps_ratio(&self, model: &str, benchmark: &str) -> Result<f64> {
        let scores = self.scores()?;
        let find = |l: &str| {
            scores
                .iter()
                .find(|s| s.label == l)
                .map(|s| s.crps_total)
                .ok_or_else(|| Error::Contract(format!("no forecasts for model {l}")))
        };
        Ok(find(model)? / find(benchmark)?)
    }

    pub fn point_forecasts(&self, label: &str) -> Option<&DMatrix<f64>> {
        self.runs.iter().find(|r| r.label == label).map(|r| &r.point)
    }
}
