//! Subcommand bodies. Each writes into a staging directory that only replaces the
//! final output directory once everything succeeded.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use tvpvecm::data::build_design;
use tvpvecm::evaluate::{backtest, vol_pca, LossMatrix, McsResult};
use tvpvecm::sampler::{run_mcmc, write_summaries, DrawArchive};
use tvpvecm::synth::generate;
use tvpvecm::Error;

use crate::config::RunConfig;

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Some grid entries failed; results for the others were written.
    Partial,
}

/// A `<out>.partial` directory renamed onto `<out>` by [`Staging::commit`] and
/// removed if dropped before that.
pub struct Staging {
    target: PathBuf,
    dir: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn begin(target: &Path, overwrite: bool) -> Result<Self> {
        let occupied = target.exists() && fs::read_dir(target).map_or(true, |mut d| d.next().is_some());
        if occupied && !overwrite {
            return Err(Error::Validation(vec![format!(
                "out: {} already exists (pass --overwrite to replace it)",
                target.display()
            )])
            .into());
        }
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        let dir = target.with_file_name(format!("{name}.partial"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Staging {
            target: target.to_path_buf(),
            dir,
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.dir, &self.target)?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Posterior summaries and the volatility principal component of an archive.
pub fn report(archive: &DrawArchive, dir: &Path) -> Result<()> {
    write_summaries(archive, dir)?;
    let m = archive.meta.n_endog;
    let t = archive.meta.n_obs;
    if m >= 2 && !archive.draws.is_empty() {
        let medians = DMatrix::from_fn(t, m, |r, i| {
            let v: Vec<f64> = archive.draws.iter().map(|d| d.logh[(r, i)]).collect();
            tvpvecm::evaluate::median(&v)
        });
        let pca = vol_pca(&medians)?;
        let mut w = csv::Writer::from_writer(create(dir, "vol_pca.csv")?);
        w.write_record(["time", "entity", "statistic", "value"])?;
        for (time, s) in archive.meta.timestamps.iter().zip(&pca.scores) {
            w.write_record([time.as_str(), "pc1", "score", &s.to_string()])?;
        }
        for (name, l) in archive.meta.names.iter().zip(&pca.loadings) {
            w.write_record(["", name.as_str(), "loading", &l.to_string()])?;
        }
        w.write_record(["", "pc1", "explained", &pca.explained.to_string()])?;
        w.flush()?;
    }
    Ok(())
}

pub fn estimate(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    cfg.model.validate(None)?;
    let data = cfg.data()?;
    let panel = data.load()?;
    let (panel, factors) = if data.scale {
        let (p, f) = panel.scaled();
        (p, Some(f))
    } else {
        (panel, None)
    };
    let design = build_design(&panel, cfg.model.lags, cfg.model.deterministics)?;
    log::info!(
        "estimating {:?} on {} observations of {} series",
        cfg.model.model_class,
        design.n_obs(),
        design.n_endog
    );
    let archive = run_mcmc(&cfg.model, &design, &panel.names)?;
    archive.save(&dir.join("archive"))?;
    report(&archive, dir)?;
    if let Some(f) = factors {
        let mut w = csv::Writer::from_writer(create(dir, "scaling.csv")?);
        w.write_record(["series", "factor"])?;
        for (name, s) in panel.names.iter().zip(&f) {
            w.write_record([name.as_str(), &s.to_string()])?;
        }
        w.flush()?;
    }
    Ok(Outcome::Complete)
}

fn write_losses(l: &LossMatrix, dir: &Path, name: &str) -> Result<()> {
    l.write_csv(create(dir, name)?)?;
    Ok(())
}

fn write_mcs(r: &McsResult, dir: &Path, name: &str) -> Result<()> {
    r.write_csv(create(dir, name)?)?;
    Ok(())
}

pub fn run_backtest(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let data = cfg.data()?;
    let panel = data.load()?;
    let mut bt = cfg.backtest.clone();
    bt.scale |= data.scale;
    let grid = cfg.grid();
    log::info!(
        "backtesting {} models over {} origins (window {}, stride {})",
        grid.len(),
        bt.holdout,
        bt.window,
        bt.stride
    );
    let result = backtest(&panel, &grid, &bt)?;
    if !result.failures.is_empty() {
        let mut w = csv::Writer::from_writer(create(dir, "failures.csv")?);
        w.write_record(["model", "origin", "message"])?;
        for f in &result.failures {
            log::warn!("{} failed at origin {}: {}", f.label, f.origin, f.message);
            w.write_record([f.label.as_str(), &f.origin.to_string(), &f.message])?;
        }
        w.flush()?;
    }
    if result.runs.is_empty() {
        let first = &result.failures[0];
        return Err(Error::numerical(format!("model {}", first.label), first.message.clone()).into());
    }
    let se = result.squared_error_losses()?;
    let crps = result.crps_losses()?;
    write_losses(&se, dir, "losses_squared_error.csv")?;
    write_losses(&crps, dir, "losses_crps.csv")?;
    result.write_scores(create(dir, "scores.csv")?)?;
    result.write_forecasts(create(dir, "forecasts.csv")?)?;
    if result.runs.len() == 1 || bt.holdout >= 20 {
        write_mcs(&result.mcs_squared_error()?, dir, "mcs_squared_error.csv")?;
        write_mcs(&result.mcs_crps()?, dir, "mcs_crps.csv")?;
    } else {
        log::warn!("model confidence set skipped: it needs at least 20 holdout points");
    }
    Ok(if result.failures.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

pub fn synth(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    let (panel, truth) = generate(&cfg.synth)?;
    panel.write_csv(create(dir, "data.csv")?)?;
    serde_json::to_writer_pretty(create(dir, "truth.json")?, &truth)?;
    Ok(Outcome::Complete)
}

pub fn report_archive(archive_dir: &Path, dir: &Path) -> Result<Outcome> {
    if !archive_dir.join("meta.json").exists() {
        bail!(Error::Contract(format!(
            "{} does not hold a draw archive",
            archive_dir.display()
        )));
    }
    let archive = DrawArchive::load(archive_dir)?;
    report(&archive, dir)?;
    Ok(Outcome::Complete)
}
