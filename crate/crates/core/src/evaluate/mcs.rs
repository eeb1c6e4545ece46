//! Model confidence set with the range statistic `T_max` and a moving-block bootstrap.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Losses of `K` models over `H` evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    pub labels: Vec<String>,
    /// Row labels, usually the forecast timestamps.
    pub points: Vec<String>,
    /// `H × K`.
    pub losses: DMatrix<f64>,
}

impl LossMatrix {
    pub fn new(labels: Vec<String>, points: Vec<String>, losses: DMatrix<f64>) -> Result<Self> {
        if labels.len() != losses.ncols() || points.len() != losses.nrows() {
            return Err(Error::Dimension("loss matrix labels do not match its shape".into()));
        }
        if losses.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("loss matrix has missing or non-finite cells".into()));
        }
        Ok(LossMatrix { labels, points, losses })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["point".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (h, p) in self.points.iter().enumerate() {
            let mut rec = vec![p.clone()];
            rec.extend(self.losses.row(h).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McsOptions {
    pub alpha: f64,
    /// Block length; `ceil(H^{1/3})` when absent.
    pub block_len: Option<usize>,
    pub replications: usize,
    pub seed: u64,
}

impl Default for McsOptions {
    fn default() -> Self {
        McsOptions {
            alpha: 0.25,
            block_len: None,
            replications: 5000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsEntry {
    pub label: String,
    /// Elimination order; the last survivor has rank 1.
    pub rank: usize,
    pub p_value: f64,
    pub in_set: bool,
    /// Whether the elimination decision was settled by the tie-break.
    pub tie_break: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsResult {
    pub alpha: f64,
    pub entries: Vec<McsEntry>,
}

impl McsResult {
    pub fn surviving(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| e.in_set).map(|e| e.label.as_str()).collect()
    }

    /// Membership at another significance level from the same p-values.
    pub fn at_alpha(&self, alpha: f64) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.p_value >= alpha)
            .map(|e| e.label.as_str())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "rank", "p_value", "in_set", "tie_break"])?;
        for e in &self.entries {
            w.write_record([
                e.label.clone(),
                e.rank.to_string(),
                e.p_value.to_string(),
                e.in_set.to_string(),
                e.tie_break.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative tolerance under which a variance or mean differential counts as zero.
const ZERO_TOL: f64 = 1e-12;

fn block_indices(h: usize, block: usize, reps: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..reps)
        .map(|_| {
            let mut idx = Vec::with_capacity(h);
            while idx.len() < h {
                let start = rng.random_range(0..h);
                for k in 0..block {
                    if idx.len() == h {
                        break;
                    }
                    idx.push((start + k) % h);
                }
            }
            idx
        })
        .collect()
}

/// Sequential elimination with the `T_max` statistic.
pub fn mcs(losses: &LossMatrix, opts: &McsOptions) -> Result<McsResult> {
    let (h, k) = losses.losses.shape();
    if k == 0 {
        return Err(Error::Contract("model confidence set needs at least one model".into()));
    }
    if k == 1 {
        return Ok(McsResult {
            alpha: opts.alpha,
            entries: vec![McsEntry {
                label: losses.labels[0].clone(),
                rank: 1,
                p_value: 1.0,
                in_set: true,
                tie_break: false,
            }],
        });
    }
    if h < 20 {
        return Err(Error::Contract(format!("model confidence set needs H >= 20, got {h}")));
    }
    if opts.replications == 0 {
        return Err(Error::Contract("bootstrap needs at least one replication".into()));
    }
    let block = opts
        .block_len
        .unwrap_or_else(|| (h as f64).cbrt().ceil() as usize)
        .clamp(1, h);
    let boots = block_indices(h, block, opts.replications, opts.seed);
    let l = &losses.losses;
    let means: Vec<f64> = (0..k).map(|j| l.column(j).mean()).collect();
    let scale = l.amax().max(1.0);
    // Bootstrap means of every model's loss, reused across elimination steps.
    let boot_means: Vec<Vec<f64>> = boots
        .iter()
        .map(|idx| {
            (0..k)
                .map(|j| idx.iter().map(|&t| l[(t, j)]).sum::<f64>() / h as f64)
                .collect()
        })
        .collect();

    let mut alive: Vec<usize> = (0..k).collect();
    let mut order = Vec::with_capacity(k);
    let mut running_p = 0.0f64;
    while alive.len() > 1 {
        let n = alive.len() as f64;
        let avg: f64 = alive.iter().map(|&j| means[j]).sum::<f64>() / n;
        let dbar: Vec<f64> = alive.iter().map(|&j| means[j] - avg).collect();
        let dstar: Vec<Vec<f64>> = boot_means
            .iter()
            .map(|bm| {
                let a: f64 = alive.iter().map(|&j| bm[j]).sum::<f64>() / n;
                alive.iter().map(|&j| bm[j] - a).collect()
            })
            .collect();
        let reps = boots.len() as f64;
        let var: Vec<f64> = (0..alive.len())
            .map(|a| dstar.iter().map(|d| (d[a] - dbar[a]).powi(2)).sum::<f64>() / reps)
            .collect();
        let tol = ZERO_TOL * scale;
        let stat = |a: usize, d: f64| -> f64 {
            if var[a] > tol * tol {
                d / var[a].sqrt()
            } else if d.abs() <= tol {
                0.0
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        };
        let t_stats: Vec<f64> = (0..alive.len()).map(|a| stat(a, dbar[a])).collect();
        let t_max = t_stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exceed = dstar
            .iter()
            .filter(|d| {
                let tb = (0..alive.len())
                    .map(|a| {
                        if var[a] > tol * tol {
                            (d[a] - dbar[a]) / var[a].sqrt()
                        } else {
                            0.0
                        }
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                tb >= t_max
            })
            .count();
        let p = exceed as f64 / reps;
        running_p = running_p.max(p);

        // Worst model: largest statistic, then larger mean loss, then later label.
        let mut worst = 0;
        let mut tie = false;
        for a in 1..alive.len() {
            let (ja, jw) = (alive[a], alive[worst]);
            let ord = t_stats[a]
                .partial_cmp(&t_stats[worst])
                .unwrap_or(std::cmp::Ordering::Equal);
            match ord {
                std::cmp::Ordering::Greater => {
                    worst = a;
                    tie = false;
                }
                std::cmp::Ordering::Equal => {
                    tie = true;
                    let by_mean = means[ja].total_cmp(&means[jw]);
                    let by_label = losses.labels[ja].cmp(&losses.labels[jw]);
                    if by_mean.then(by_label) == std::cmp::Ordering::Greater {
                        worst = a;
                    }
                }
                std::cmp::Ordering::Less => {}
            }
        }
        order.push((alive.remove(worst), running_p, tie));
    }
    order.push((alive[0], 1.0, false));

    let total = order.len();
    let mut entries: Vec<McsEntry> = order
        .into_iter()
        .enumerate()
        .map(|(pos, (j, p, tie))| McsEntry {
            label: losses.labels[j].clone(),
            rank: total - pos,
            p_value: p,
            in_set: p >= opts.alpha,
            tie_break: tie,
        })
        .collect();
    entries.sort_by_key(|e| e.rank);
    Ok(McsResult {
        alpha: opts.alpha,
        entries,
    })
}
