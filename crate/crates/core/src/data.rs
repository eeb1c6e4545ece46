//! Panel ingestion and construction of the regression matrices.
//!
//! Row `r` of every design matrix refers to panel index `t = r + P + 1`, so that
//! `Δy_t`, `w_t = (y_{t-1}', f_{t-1}')'` and `x_t = (Δy_{t-1}', …, Δy_{t-P}', c_t')'`
//! all describe the same calendar point.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub timestamps: Vec<NaiveDateTime>,
    /// `T_raw × M` endogenous levels.
    pub levels: DMatrix<f64>,
    /// `T_raw × q_f` exogenous factors (possibly zero columns).
    pub factors: DMatrix<f64>,
    /// `M + q_f` labels, endogenous first.
    pub names: Vec<String>,
}

/// Declares which CSV columns are endogenous and which are exogenous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSchema {
    /// Timestamp column; the first column when absent.
    #[serde(default)]
    pub timestamp: Option<String>,
    pub endogenous: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    /// Columns averaged into one derived endogenous series before modelling,
    /// e.g. the night hours of an hourly price panel.
    #[serde(default)]
    pub averages: Vec<AveragedSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSeries {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Linear,
    Reject,
}

/// Recipe for the deterministic block `c_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Deterministics {
    pub intercept: bool,
    pub day_of_week: bool,
    pub trend: bool,
}

impl Default for Deterministics {
    fn default() -> Self {
        Deterministics {
            intercept: true,
            day_of_week: true,
            trend: false,
        }
    }
}

impl Deterministics {
    pub const NONE: Deterministics = Deterministics {
        intercept: false,
        day_of_week: false,
        trend: false,
    };

    pub const INTERCEPT: Deterministics = Deterministics {
        intercept: true,
        day_of_week: false,
        trend: false,
    };

    /// Number of deterministic columns `N`.
    pub fn width(&self) -> usize {
        let dow = if self.day_of_week {
            if self.intercept {
                6
            } else {
                7
            }
        } else {
            0
        };
        usize::from(self.intercept) + dow + usize::from(self.trend)
    }

    /// Deterministic row for a timestamp; `index` is the panel row (1-based trend).
    pub fn row(&self, ts: &NaiveDateTime, index: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        if self.intercept {
            out.push(1.0);
        }
        if self.day_of_week {
            // Monday is the reference day when an intercept is present.
            let dow = ts.weekday().num_days_from_monday() as usize;
            let first = usize::from(self.intercept);
            for d in first..7 {
                out.push(if d == dow { 1.0 } else { 0.0 });
            }
        }
        if self.trend {
            out.push((index + 1) as f64);
        }
        out
    }

    pub fn labels(&self) -> Vec<String> {
        const DAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
        let mut out = Vec::new();
        if self.intercept {
            out.push("const".to_string());
        }
        if self.day_of_week {
            let first = usize::from(self.intercept);
            out.extend(DAYS[first..].iter().map(|d| d.to_string()));
        }
        if self.trend {
            out.push("trend".to_string());
        }
        out
    }
}

impl Panel {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        levels: DMatrix<f64>,
        factors: DMatrix<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if levels.nrows() != n || factors.nrows() != n {
            return Err(Error::Dimension(format!(
                "timestamps ({n}), levels ({}) and factors ({}) disagree on row count",
                levels.nrows(),
                factors.nrows()
            )));
        }
        if levels.ncols() == 0 {
            return Err(Error::Dimension("panel needs at least one endogenous series".into()));
        }
        if names.len() != levels.ncols() + factors.ncols() {
            return Err(Error::Dimension("one name per series is required".into()));
        }
        check_monotone(&timestamps)?;
        if levels.iter().chain(factors.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("panel contains non-finite values".into()));
        }
        Ok(Panel {
            timestamps,
            levels,
            factors,
            names,
        })
    }

    /// Panel on consecutive daily dates starting 2000-01-03 (a Monday).
    pub fn from_levels(levels: DMatrix<f64>, factors: DMatrix<f64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let ts = (0..levels.nrows())
            .map(|i| start + chrono::Duration::days(i as i64))
            .collect();
        let names = (0..levels.ncols())
            .map(|i| format!("y{}", i + 1))
            .chain((0..factors.ncols()).map(|i| format!("f{}", i + 1)))
            .collect();
        Panel::new(ts, levels, factors, names)
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_endog(&self) -> usize {
        self.levels.ncols()
    }

    pub fn n_factors(&self) -> usize {
        self.factors.ncols()
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Panel {
        let n = end - start;
        Panel {
            timestamps: self.timestamps[start..end].to_vec(),
            levels: self.levels.rows(start, n).into_owned(),
            factors: self.factors.rows(start, n).into_owned(),
            names: self.names.clone(),
        }
    }

    /// Timestamp one step past the end, extrapolating the last spacing.
    pub fn next_timestamp(&self) -> NaiveDateTime {
        let n = self.timestamps.len();
        let step = if n >= 2 {
            self.timestamps[n - 1] - self.timestamps[n - 2]
        } else {
            chrono::Duration::days(1)
        };
        self.timestamps[n - 1] + step
    }

    /// Divide every series by the standard deviation of its first differences.
    ///
    /// Returns the scaled panel and the per-series factors (endogenous first).
    pub fn scaled(&self) -> (Panel, Vec<f64>) {
        let mut out = self.clone();
        let mut factors = Vec::new();
        for (block, dst) in [(&self.levels, &mut out.levels), (&self.factors, &mut out.factors)] {
            for j in 0..block.ncols() {
                let col = block.column(j);
                let d: Vec<f64> = (1..col.len()).map(|t| col[t] - col[t - 1]).collect();
                let s = sample_sd(&d);
                let s = if s > 0.0 && s.is_finite() { s } else { 1.0 };
                dst.column_mut(j).scale_mut(1.0 / s);
                factors.push(s);
            }
        }
        (out, factors)
    }

    /// Write the panel as CSV with a `timestamp` column followed by every series.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for t in 0..self.n_rows() {
            let mut rec = vec![self.timestamps[t].format("%Y-%m-%d %H:%M:%S").to_string()];
            rec.extend(self.levels.row(t).iter().map(|v| v.to_string()));
            rec.extend(self.factors.row(t).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Divide every series by the given factors (endogenous first, then exogenous).
    pub fn scaled_by(&self, factors: &[f64]) -> Result<Panel> {
        let (m, f) = (self.n_endog(), self.n_factors());
        if factors.len() != m + f {
            return Err(Error::Dimension(format!(
                "{} scale factors for {} series",
                factors.len(),
                m + f
            )));
        }
        let mut out = self.clone();
        for j in 0..m {
            out.levels.column_mut(j).scale_mut(1.0 / factors[j]);
        }
        for j in 0..f {
            out.factors.column_mut(j).scale_mut(1.0 / factors[m + j]);
        }
        Ok(out)
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn check_monotone(ts: &[NaiveDateTime]) -> Result<()> {
    for (i, w) in ts.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at row {} ({} after {})",
                i + 2,
                w[1],
                w[0]
            )));
        }
    }
    Ok(())
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    for f in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Some(t);
        }
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn is_missing(s: &str) -> bool {
    matches!(
        s.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null" | "none"
    )
}

/// Read a CSV panel. Missing cells are interpolated linearly along time or
/// rejected, depending on `interpolation`.
pub fn load_panel(path: &Path, schema: &PanelSchema, interpolation: Interpolation) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in {}", path.display())))
    };
    if schema.endogenous.is_empty() && schema.averages.is_empty() {
        return Err(Error::Schema("schema declares no endogenous column".into()));
    }
    let ts_col = match &schema.timestamp {
        Some(name) => find(name)?,
        None => 0,
    };
    let endo_idx = schema
        .endogenous
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;
    let exo_idx = schema
        .exogenous
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;
    let avg_idx = schema
        .averages
        .iter()
        .map(|a| {
            if a.columns.is_empty() {
                return Err(Error::Schema(format!("averaged series `{}` has no columns", a.name)));
            }
            a.columns.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    // All referenced raw columns, in order of first use.
    let mut raw_cols: Vec<usize> = Vec::new();
    for &c in endo_idx.iter().chain(exo_idx.iter()).chain(avg_idx.iter().flatten()) {
        if !raw_cols.contains(&c) {
            raw_cols.push(c);
        }
    }

    let mut timestamps = Vec::new();
    let mut raw: Vec<Vec<Option<f64>>> = vec![Vec::new(); raw_cols.len()];
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let ts_str = rec.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(ts_str).ok_or_else(|| {
            Error::Data(format!("row {row}: cannot parse timestamp `{ts_str}`"))
        })?;
        timestamps.push(ts);
        for (k, &c) in raw_cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            let v = if is_missing(cell) {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("row {row}, column `{}`: `{cell}` is not numeric", headers[c]))
                })?;
                if v.is_finite() {
                    Some(v)
                } else {
                    None
                }
            };
            raw[k].push(v);
        }
    }
    check_monotone(&timestamps)?;
    let n = timestamps.len();

    let mut filled: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
    for (k, col) in raw.iter().enumerate() {
        let name = &headers[raw_cols[k]];
        filled.push(match interpolation {
            Interpolation::Reject => col
                .iter()
                .enumerate()
                .map(|(r, v)| {
                    v.ok_or_else(|| {
                        Error::Data(format!("missing value at row {}, column `{name}`", r + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            Interpolation::Linear => interpolate_linear(col).map_err(|r| {
                Error::Data(format!(
                    "cannot interpolate column `{name}`: missing value at row {} has no neighbour on both sides",
                    r + 1
                ))
            })?,
        });
    }
    let col_of = |c: usize| &filled[raw_cols.iter().position(|&x| x == c).unwrap()];

    let m = endo_idx.len() + avg_idx.len();
    let mut levels = DMatrix::zeros(n, m);
    let mut names = Vec::new();
    for (j, &c) in endo_idx.iter().enumerate() {
        levels.set_column(j, &DVector::from_column_slice(col_of(c)));
        names.push(headers[c].clone());
    }
    for (k, cols) in avg_idx.iter().enumerate() {
        let j = endo_idx.len() + k;
        for t in 0..n {
            levels[(t, j)] = cols.iter().map(|&c| col_of(c)[t]).sum::<f64>() / cols.len() as f64;
        }
        names.push(schema.averages[k].name.clone());
    }
    let mut factors = DMatrix::zeros(n, exo_idx.len());
    for (j, &c) in exo_idx.iter().enumerate() {
        factors.set_column(j, &DVector::from_column_slice(col_of(c)));
        names.push(headers[c].clone());
    }
    Panel::new(timestamps, levels, factors, names)
}

/// Fill interior gaps linearly in the row index. Returns the first offending row
/// when a gap touches either end of the series.
fn interpolate_linear(col: &[Option<f64>]) -> std::result::Result<Vec<f64>, usize> {
    let n = col.len();
    let mut out = vec![0.0; n];
    let mut last: Option<usize> = None;
    let mut t = 0;
    while t < n {
        match col[t] {
            Some(v) => {
                out[t] = v;
                last = Some(t);
                t += 1;
            }
            None => {
                let lo = last.ok_or(t)?;
                let hi = (t..n).find(|&k| col[k].is_some()).ok_or(t)?;
                let (a, b) = (col[lo].unwrap(), col[hi].unwrap());
                for k in t..hi {
                    let frac = (k - lo) as f64 / (hi - lo) as f64;
                    out[k] = a + frac * (b - a);
                }
                t = hi;
            }
        }
    }
    Ok(out)
}

/// Regression matrices for one estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// `T × M` first differences `Δy_t`.
    pub dy: DMatrix<f64>,
    /// `T × q` lagged levels and factors `w_t`.
    pub w: DMatrix<f64>,
    /// `T × J` lagged differences and deterministic terms `x_t`.
    pub x: DMatrix<f64>,
    /// `T × M` current levels `y_t`.
    pub levels: DMatrix<f64>,
    /// `T × MP` lagged levels `(y_{t-1}', …, y_{t-P}')`.
    pub level_lags: DMatrix<f64>,
    pub lags: usize,
    pub deterministics: Deterministics,
    pub n_endog: usize,
    pub n_factors: usize,
    pub timestamps: Vec<NaiveDateTime>,
    /// Regressors one step past the sample end.
    pub next: NextRow,
}

/// Regressors needed to form the one-step-ahead prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct NextRow {
    pub timestamp: NaiveDateTime,
    pub w: DVector<f64>,
    pub x: DVector<f64>,
    pub level_lags: DVector<f64>,
    /// Last observed levels `y_T`.
    pub last_levels: DVector<f64>,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.dy.nrows()
    }

    /// `q = M + q_f`.
    pub fn q(&self) -> usize {
        self.w.ncols()
    }

    /// `J = MP + N`.
    pub fn j(&self) -> usize {
        self.x.ncols()
    }

    pub fn x_labels(&self, names: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for p in 1..=self.lags {
            for n in names.iter().take(self.n_endog) {
                out.push(format!("d.{n}.l{p}"));
            }
        }
        out.extend(self.deterministics.labels());
        out
    }

    /// Write `dy`, `w` and `x` side by side as CSV.
    pub fn write_csv<W: Write>(&self, out: W, names: &[String]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        header.extend(names.iter().take(self.n_endog).map(|n| format!("d.{n}")));
        header.extend(names.iter().map(|n| format!("w.{n}")));
        header.extend(self.x_labels(names).into_iter().map(|n| format!("x.{n}")));
        wtr.write_record(&header)?;
        for r in 0..self.n_obs() {
            let mut rec = vec![self.timestamps[r].to_string()];
            rec.extend(self.dy.row(r).iter().map(|v| v.to_string()));
            rec.extend(self.w.row(r).iter().map(|v| v.to_string()));
            rec.extend(self.x.row(r).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Assemble `Δy`, `W` and `X` for lag order `P`.
pub fn build_design(panel: &Panel, lags: usize, deterministics: Deterministics) -> Result<Design> {
    build_design_with_next(panel, lags, deterministics, panel.next_timestamp())
}

/// As [`build_design`], with an explicit timestamp for the forecast row.
pub fn build_design_with_next(
    panel: &Panel,
    lags: usize,
    deterministics: Deterministics,
    next_timestamp: NaiveDateTime,
) -> Result<Design> {
    if lags == 0 {
        return Err(Error::Dimension("lag order P must be at least 1".into()));
    }
    let t_raw = panel.n_rows();
    if t_raw <= lags + 2 {
        return Err(Error::Dimension(format!(
            "{t_raw} rows are too few for lag order {lags} (need more than {})",
            lags + 2
        )));
    }
    let m = panel.n_endog();
    let qf = panel.n_factors();
    let n_det = deterministics.width();
    let t_obs = t_raw - lags - 1;
    let y = &panel.levels;
    let f = &panel.factors;
    let diff = |t: usize, i: usize| y[(t, i)] - y[(t - 1, i)];

    let mut dy = DMatrix::zeros(t_obs, m);
    let mut w = DMatrix::zeros(t_obs, m + qf);
    let mut x = DMatrix::zeros(t_obs, m * lags + n_det);
    let mut levels = DMatrix::zeros(t_obs, m);
    let mut level_lags = DMatrix::zeros(t_obs, m * lags);
    let mut timestamps = Vec::with_capacity(t_obs);
    for r in 0..t_obs {
        let t = r + lags + 1;
        for i in 0..m {
            dy[(r, i)] = diff(t, i);
            w[(r, i)] = y[(t - 1, i)];
            levels[(r, i)] = y[(t, i)];
        }
        for k in 0..qf {
            w[(r, m + k)] = f[(t - 1, k)];
        }
        for p in 1..=lags {
            for i in 0..m {
                x[(r, (p - 1) * m + i)] = diff(t - p, i);
                level_lags[(r, (p - 1) * m + i)] = y[(t - p, i)];
            }
        }
        for (k, v) in deterministics.row(&panel.timestamps[t], t).into_iter().enumerate() {
            x[(r, m * lags + k)] = v;
        }
        timestamps.push(panel.timestamps[t]);
    }

    // One step past the end: t = t_raw.
    let t = t_raw;
    let mut nw = DVector::zeros(m + qf);
    let mut nx = DVector::zeros(m * lags + n_det);
    let mut nl = DVector::zeros(m * lags);
    for i in 0..m {
        nw[i] = y[(t - 1, i)];
    }
    for k in 0..qf {
        nw[m + k] = f[(t - 1, k)];
    }
    for p in 1..=lags {
        for i in 0..m {
            nx[(p - 1) * m + i] = diff(t - p, i);
            nl[(p - 1) * m + i] = y[(t - p, i)];
        }
    }
    for (k, v) in deterministics.row(&next_timestamp, t).into_iter().enumerate() {
        nx[m * lags + k] = v;
    }
    let next = NextRow {
        timestamp: next_timestamp,
        w: nw,
        x: nx,
        level_lags: nl,
        last_levels: y.row(t_raw - 1).transpose(),
    };

    Ok(Design {
        dy,
        w,
        x,
        levels,
        level_lags,
        lags,
        deterministics,
        n_endog: m,
        n_factors: qf,
        timestamps,
        next,
    })
}
