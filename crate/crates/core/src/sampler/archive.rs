//! Retained posterior draws, their summaries and on-disk layout.
//!
//! An archive directory holds `meta.json`, `inclusion.json` (when sparsified),
//! `extra.bin` and one `draws/draw_NNNNNN.bin` per retained draw. Every `.bin`
//! file is a `u32` matrix count followed by matrices, each stored as `u32` rows,
//! `u32` columns and then the entries as little-endian `f64` in row-major order.
//! The order of the matrices is listed in `meta.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsify::{InclusionCounts, SparsifyContext};

use super::config::ModelConfig;

/// One stage of a sweep, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    RebuildRegressors,
    ConstantScales(usize),
    Shrinkage(usize),
    States(usize),
    LongRun,
    Volatility(usize),
    Sparsify,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Counters {
    /// Sweeps in which `beta~' beta~` was too close to singular to normalize.
    pub normalize_skips: u64,
    pub clamp_events: u64,
    pub phi_rejections: u64,
    pub glasso_projections: u64,
    /// Acceptance rate of the degrees-of-freedom sampler per equation.
    pub nu_acceptance: Vec<f64>,
    /// Largest gap between in-sweep and recomputed residuals.
    pub max_residual_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub library_version: String,
    pub config: ModelConfig,
    pub config_hash: String,
    pub names: Vec<String>,
    pub x_labels: Vec<String>,
    pub w_labels: Vec<String>,
    pub timestamps: Vec<String>,
    pub n_obs: usize,
    pub n_endog: usize,
    pub q: usize,
    pub j: usize,
    pub coint: usize,
    pub k: Vec<usize>,
    pub x_cols: Vec<Vec<usize>>,
    pub cholesky: bool,
    pub counters: Counters,
    /// Wall-clock seconds per stage; not reproducible across runs.
    pub timings: BTreeMap<String, f64>,
    #[serde(default)]
    pub draw_layout: Vec<String>,
}

/// Quantities kept from one retained sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedDraw {
    /// Long-run matrix as used by the chain (`q × c`).
    pub beta_raw: DMatrix<f64>,
    /// Long-run matrix with orthonormal columns when normalization succeeded.
    pub beta: DMatrix<f64>,
    pub normalized: bool,
    /// Coefficients `b_{i,T}` at the last observation.
    pub b_last: Vec<DVector<f64>>,
    pub sqrt_theta: Vec<DVector<f64>>,
    /// `T × M` log-volatilities.
    pub logh: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub phi: DVector<f64>,
    pub sigma: DVector<f64>,
    pub nu: Option<DVector<f64>>,
    /// Time average of `Pi*_t` (or `Pi_t` without sparsification), `M × q`.
    pub pi_mean: DMatrix<f64>,
    /// Estimated rank per period; empty without sparsification.
    pub ranks: Vec<usize>,
    /// Full `T × K_i` coefficient paths when requested.
    pub paths: Option<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone)]
pub struct DrawArchive {
    pub meta: ArchiveMeta,
    pub draws: Vec<RetainedDraw>,
    pub inclusion: Option<InclusionCounts>,
    /// Posterior mean of the unsparsified `Pi_t` per period.
    pub pi_dense_mean: Vec<DMatrix<f64>>,
    pub sparsify_context: Option<SparsifyContext>,
    pub stages: Vec<Vec<Stage>>,
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Contract(format!("dimension {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

/// Write matrices in the documented binary layout.
pub fn write_matrices<W: Write>(out: &mut W, mats: &[DMatrix<f64>]) -> Result<()> {
    write_u32(out, mats.len())?;
    for m in mats {
        write_u32(out, m.nrows())?;
        write_u32(out, m.ncols())?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.write_all(&m[(i, j)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_matrices<R: Read>(input: &mut R) -> Result<Vec<DMatrix<f64>>> {
    let n = read_u32(input)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let rows = read_u32(input)?;
        let cols = read_u32(input)?;
        let mut m = DMatrix::zeros(rows, cols);
        let mut b = [0u8; 8];
        for i in 0..rows {
            for j in 0..cols {
                input.read_exact(&mut b)?;
                m[(i, j)] = f64::from_le_bytes(b);
            }
        }
        out.push(m);
    }
    Ok(out)
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn row_of(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v)
}

impl RetainedDraw {
    fn layout(m: usize, with_paths: bool) -> Vec<String> {
        let mut names = vec!["beta_raw".to_string(), "beta".to_string(), "flags".to_string()];
        names.extend((0..m).map(|i| format!("b_last[{i}]")));
        names.extend((0..m).map(|i| format!("sqrt_theta[{i}]")));
        names.extend(["logh", "sv", "pi_mean", "ranks"].map(String::from));
        if with_paths {
            names.extend((0..m).map(|i| format!("paths[{i}]")));
        }
        names
    }

    fn to_matrices(&self) -> Vec<DMatrix<f64>> {
        let m = self.mu.len();
        let mut out = vec![
            self.beta_raw.clone(),
            self.beta.clone(),
            row_of(&[f64::from(u8::from(self.normalized))]),
        ];
        out.extend(self.b_last.iter().map(col));
        out.extend(self.sqrt_theta.iter().map(col));
        out.push(self.logh.clone());
        let sv = DMatrix::from_fn(m, 4, |i, k| match k {
            0 => self.mu[i],
            1 => self.phi[i],
            2 => self.sigma[i],
            _ => self.nu.as_ref().map_or(f64::NAN, |n| n[i]),
        });
        out.push(sv);
        out.push(self.pi_mean.clone());
        let ranks: Vec<f64> = self.ranks.iter().map(|&r| r as f64).collect();
        out.push(row_of(&ranks));
        if let Some(paths) = &self.paths {
            out.extend(paths.iter().cloned());
        }
        out
    }

    fn from_matrices(mats: Vec<DMatrix<f64>>, m: usize) -> Result<Self> {
        let with_paths = mats.len() == 3 + 2 * m + 4 + m;
        if !(with_paths || mats.len() == 3 + 2 * m + 4) {
            return Err(Error::Data(format!("draw file holds {} matrices", mats.len())));
        }
        let mut it = mats.into_iter();
        let mut next = || it.next().expect("length checked");
        let beta_raw = next();
        let beta = next();
        let normalized = next()[(0, 0)] != 0.0;
        let b_last = (0..m).map(|_| next().column(0).into_owned()).collect();
        let sqrt_theta = (0..m).map(|_| next().column(0).into_owned()).collect();
        let logh = next();
        let sv = next();
        let pi_mean = next();
        let ranks = next().iter().map(|&r| r as usize).collect();
        let paths = with_paths.then(|| (0..m).map(|_| next()).collect());
        let nu = sv.column(3).iter().all(|v| v.is_finite()).then(|| sv.column(3).into_owned());
        Ok(RetainedDraw {
            beta_raw,
            beta,
            normalized,
            b_last,
            sqrt_theta,
            logh,
            mu: sv.column(0).into_owned(),
            phi: sv.column(1).into_owned(),
            sigma: sv.column(2).into_owned(),
            nu: if m == 0 { None } else { nu },
            pi_mean,
            ranks,
            paths,
        })
    }
}

impl DrawArchive {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Persist the archive into `dir`, which is created if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let draws_dir = dir.join("draws");
        fs::create_dir_all(&draws_dir)?;
        let m = self.meta.n_endog;
        let mut meta = self.meta.clone();
        meta.draw_layout = RetainedDraw::layout(m, self.meta.config.keep_paths);
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("meta.json"))?), &meta)?;
        if let Some(inc) = &self.inclusion {
            serde_json::to_writer(BufWriter::new(File::create(dir.join("inclusion.json"))?), inc)?;
        }
        let mut extra = self.pi_dense_mean.clone();
        if let Some(ctx) = &self.sparsify_context {
            extra.push(row_of(&ctx.w_norms_sq));
            extra.push(ctx.wtw.clone());
            extra.push(row_of(&ctx.x_norms_sq));
        }
        let mut f = BufWriter::new(File::create(dir.join("extra.bin"))?);
        write_matrices(&mut f, &extra)?;
        f.flush()?;
        for (s, d) in self.draws.iter().enumerate() {
            let mut f = BufWriter::new(File::create(draws_dir.join(format!("draw_{s:06}.bin")))?);
            write_matrices(&mut f, &d.to_matrices())?;
            f.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ArchiveMeta = serde_json::from_reader(BufReader::new(File::open(dir.join("meta.json"))?))?;
        let inc_path = dir.join("inclusion.json");
        let inclusion = if inc_path.exists() {
            Some(serde_json::from_reader(BufReader::new(File::open(inc_path)?))?)
        } else {
            None
        };
        let mut extra = read_matrices(&mut BufReader::new(File::open(dir.join("extra.bin"))?))?;
        let sparsify_context = if extra.len() == meta.n_obs + 3 {
            let x_norms_sq = extra.pop().expect("length checked").iter().copied().collect();
            let wtw = extra.pop().expect("length checked");
            let w_norms_sq = extra.pop().expect("length checked").iter().copied().collect();
            Some(SparsifyContext {
                w_norms_sq,
                wtw,
                x_norms_sq,
                glasso: meta.config.glasso,
            })
        } else {
            None
        };
        let mut files: Vec<_> = fs::read_dir(dir.join("draws"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        let mut draws = Vec::with_capacity(files.len());
        for p in files {
            let mats = read_matrices(&mut BufReader::new(File::open(&p)?))?;
            draws.push(RetainedDraw::from_matrices(mats, meta.n_endog)?);
        }
        Ok(DrawArchive {
            meta,
            draws,
            inclusion,
            pi_dense_mean: extra,
            sparsify_context,
            stages: Vec::new(),
        })
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Long-format CSV writer with the columns `(time, entity, statistic, value)`.
struct LongCsv {
    inner: csv::Writer<BufWriter<File>>,
}

impl LongCsv {
    fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        inner.write_record(["time", "entity", "statistic", "value"])?;
        Ok(LongCsv { inner })
    }

    fn row(&mut self, time: &str, entity: &str, statistic: &str, value: f64) -> Result<()> {
        self.inner.write_record([time, entity, statistic, &value.to_string()])?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Summary tables written next to an archive.
pub const SUMMARY_FILES: [&str; 5] = [
    "pi_mean.csv",
    "rank_ppr.csv",
    "pip.csv",
    "volatility.csv",
    "sv_params.csv",
];

/// Write the posterior summaries as long-format CSV files into `dir`.
///
/// Returns the paths written.
pub fn write_summaries(archive: &DrawArchive, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let meta = &archive.meta;
    let m = meta.n_endog;
    let names = &meta.names;
    let ts = &meta.timestamps;
    let summary = match &archive.inclusion {
        Some(inc) => Some(inc.summary()?),
        None => None,
    };
    let mut written = Vec::new();

    let path = dir.join("pi_mean.csv");
    let mut out = LongCsv::create(&path)?;
    for (t, time) in ts.iter().enumerate() {
        if meta.coint == 0 {
            break;
        }
        for i in 0..m {
            for j in 0..meta.q {
                let entity = format!("{}~{}", names[i], meta.w_labels[j]);
                out.row(time, &entity, "mean", archive.pi_dense_mean[t][(i, j)])?;
                if let Some(s) = &summary {
                    if !s.pi_mean[t].is_empty() {
                        out.row(time, &entity, "sparse_mean", s.pi_mean[t][i * meta.q + j])?;
                    }
                }
            }
        }
    }
    out.finish()?;
    written.push(path);

    let path = dir.join("rank_ppr.csv");
    let mut out = LongCsv::create(&path)?;
    if let Some(s) = &summary {
        for (t, time) in ts.iter().enumerate() {
            for (r, p) in s.rank[t].iter().enumerate() {
                out.row(time, &format!("rank{r}"), "ppr", *p)?;
            }
        }
    }
    out.finish()?;
    written.push(path);

    let path = dir.join("pip.csv");
    let mut out = LongCsv::create(&path)?;
    if let Some(s) = &summary {
        let jn = meta.j;
        for (t, time) in ts.iter().enumerate() {
            for i in 0..m {
                for (k, label) in meta.x_labels.iter().enumerate() {
                    out.row(time, &format!("{}~{}", names[i], label), "pip", s.a[t][i * jn + k])?;
                }
            }
            for (j, label) in meta.w_labels.iter().enumerate() {
                if let Some(p) = s.pi_columns[t].get(j) {
                    out.row(time, &format!("pi~{label}"), "pip", *p)?;
                }
            }
            for i in 0..m {
                for j in 0..i {
                    out.row(
                        time,
                        &format!("precision~{}~{}", names[i], names[j]),
                        "pip",
                        s.precision[t][i * m + j],
                    )?;
                }
            }
        }
    }
    out.finish()?;
    written.push(path);

    let path = dir.join("volatility.csv");
    let mut out = LongCsv::create(&path)?;
    for (t, time) in ts.iter().enumerate() {
        for i in 0..m {
            let v = sorted(archive.draws.iter().map(|d| d.logh[(t, i)]).collect());
            out.row(time, &names[i], "logh_median", quantile(&v, 0.5))?;
            out.row(time, &names[i], "logh_q05", quantile(&v, 0.05))?;
            out.row(time, &names[i], "logh_q95", quantile(&v, 0.95))?;
        }
    }
    out.finish()?;
    written.push(path);

    let path = dir.join("sv_params.csv");
    let mut out = LongCsv::create(&path)?;
    for i in 0..m {
        let mut params: Vec<(&str, Vec<f64>)> = vec![
            ("mu", archive.draws.iter().map(|d| d.mu[i]).collect()),
            ("phi", archive.draws.iter().map(|d| d.phi[i]).collect()),
            ("sigma", archive.draws.iter().map(|d| d.sigma[i]).collect()),
        ];
        if archive.draws.first().is_some_and(|d| d.nu.is_some()) {
            params.push((
                "nu",
                archive.draws.iter().filter_map(|d| d.nu.as_ref().map(|n| n[i])).collect(),
            ));
        }
        for (p, v) in params {
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            let v = sorted(v);
            out.row("", &names[i], &format!("{p}_mean"), mean)?;
            out.row("", &names[i], &format!("{p}_q05"), quantile(&v, 0.05))?;
            out.row("", &names[i], &format!("{p}_median"), quantile(&v, 0.5))?;
            out.row("", &names[i], &format!("{p}_q95"), quantile(&v, 0.95))?;
        }
    }
    out.finish()?;
    written.push(path);
    Ok(written)
}
