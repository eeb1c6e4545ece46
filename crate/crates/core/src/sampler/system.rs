//! Mapping of each model class onto one equation-by-equation regression layout.

use nalgebra::{DMatrix, DVector};

use crate::data::Design;
use crate::error::{Error, Result};

use super::config::ModelClass;

/// Targets and regressors shared by every model class.
///
/// Equation `i` regresses `target_i` on `(beta~' w_t, x_t[x_cols_i], -u_{1..i-1,t})`,
/// where `u_j` are the reduced-form residuals of the preceding equations.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub class: ModelClass,
    /// `T × M` responses: differences, or levels for the level classes.
    pub target: DMatrix<f64>,
    /// `T × q` regressors entering the long-run block.
    pub w: DMatrix<f64>,
    /// `T × J` short-run regressors.
    pub x: DMatrix<f64>,
    /// Columns of `x` used by each equation.
    pub x_cols: Vec<Vec<usize>>,
    /// Width `c` of the long-run block (`0` without one).
    pub coint: usize,
    /// Whether equations include the residuals of earlier equations.
    pub cholesky: bool,
    /// Regressors one step past the sample.
    pub next_w: DVector<f64>,
    pub next_x: DVector<f64>,
    /// Last observed levels `y_T`.
    pub last_levels: DVector<f64>,
}

fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(*b);
        at += b.ncols();
    }
    out
}

fn vcat(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().copied()),
    )
}

impl System {
    pub fn new(class: ModelClass, rank: Option<usize>, design: &Design) -> Result<Self> {
        let m = design.n_endog;
        let t = design.n_obs();
        let p = design.lags;
        let n_det = design.deterministics.width();
        let j_diff = design.j();
        let det_cols = m * p..m * p + n_det;
        let det_x = design.x.columns(m * p, n_det).into_owned();
        let next_det = design.next.x.rows(m * p, n_det).into_owned();
        let factors = design.w.columns(m, design.n_factors).into_owned();
        let next_factors = design.next.w.rows(m, design.n_factors).into_owned();
        let all = |j: usize| vec![(0..j).collect::<Vec<_>>(); m];
        let own = |i: usize| -> Vec<usize> {
            (0..p).map(|l| l * m + i).chain(det_cols.clone()).collect()
        };
        let empty_w = DMatrix::zeros(t, 0);

        let sys = match class {
            ModelClass::Vecm | ModelClass::VecmFixedRank => {
                let coint = match class {
                    ModelClass::Vecm => design.q(),
                    _ => rank.ok_or_else(|| Error::Contract("fixed-rank VECM needs a rank".into()))?,
                };
                if coint == 0 || coint > design.q() {
                    return Err(Error::Dimension(format!(
                        "long-run width {coint} outside 1..={}",
                        design.q()
                    )));
                }
                System {
                    class,
                    target: design.dy.clone(),
                    w: design.w.clone(),
                    x: design.x.clone(),
                    x_cols: all(j_diff),
                    coint,
                    cholesky: true,
                    next_w: design.next.w.clone(),
                    next_x: design.next.x.clone(),
                    last_levels: design.next.last_levels.clone(),
                }
            }
            ModelClass::VarDifferences => System {
                class,
                target: design.dy.clone(),
                w: empty_w,
                x: design.x.clone(),
                x_cols: all(j_diff),
                coint: 0,
                cholesky: true,
                next_w: DVector::zeros(0),
                next_x: design.next.x.clone(),
                last_levels: design.next.last_levels.clone(),
            },
            ModelClass::ArDifferences => System {
                class,
                target: design.dy.clone(),
                w: empty_w,
                x: design.x.clone(),
                x_cols: (0..m).map(own).collect(),
                coint: 0,
                cholesky: false,
                next_w: DVector::zeros(0),
                next_x: design.next.x.clone(),
                last_levels: design.next.last_levels.clone(),
            },
            ModelClass::VarLevels => {
                let x = hcat(&[&design.level_lags, &factors, &det_x]);
                let j = x.ncols();
                System {
                    class,
                    target: design.levels.clone(),
                    w: empty_w,
                    x,
                    x_cols: all(j),
                    coint: 0,
                    cholesky: true,
                    next_w: DVector::zeros(0),
                    next_x: vcat(&[design.next.level_lags.clone(), next_factors, next_det]),
                    last_levels: design.next.last_levels.clone(),
                }
            }
            ModelClass::ArLevels => {
                let x = hcat(&[&design.level_lags, &det_x]);
                System {
                    class,
                    target: design.levels.clone(),
                    w: empty_w,
                    x,
                    x_cols: (0..m).map(own).collect(),
                    coint: 0,
                    cholesky: false,
                    next_w: DVector::zeros(0),
                    next_x: vcat(&[design.next.level_lags.clone(), next_det]),
                    last_levels: design.next.last_levels.clone(),
                }
            }
        };
        Ok(sys)
    }

    pub fn n_obs(&self) -> usize {
        self.target.nrows()
    }

    pub fn n_endog(&self) -> usize {
        self.target.ncols()
    }

    pub fn q(&self) -> usize {
        self.w.ncols()
    }

    pub fn j(&self) -> usize {
        self.x.ncols()
    }

    /// Number of Cholesky regressors of equation `i`.
    pub fn n_chol(&self, i: usize) -> usize {
        if self.cholesky {
            i
        } else {
            0
        }
    }

    /// `K_i`.
    pub fn k(&self, i: usize) -> usize {
        self.coint + self.x_cols[i].len() + self.n_chol(i)
    }

    /// Regressors of equation `i` given `W beta~` (`T × c`) and earlier residuals `u`.
    pub fn regressors(&self, i: usize, wb: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.n_obs();
        let c = self.coint;
        let cols = &self.x_cols[i];
        let mut z = DMatrix::zeros(t, self.k(i));
        if c > 0 {
            z.view_mut((0, 0), (t, c)).copy_from(wb);
        }
        for (a, &col) in cols.iter().enumerate() {
            z.column_mut(c + a).copy_from(&self.x.column(col));
        }
        for j in 0..self.n_chol(i) {
            z.column_mut(c + cols.len() + j).copy_from(&(-u.column(j)));
        }
        z
    }

    /// Split a coefficient vector of equation `i` into (adjustment, short-run, Cholesky) parts.
    pub fn split<'a>(&self, i: usize, b: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let c = self.coint;
        let n = self.x_cols[i].len();
        (&b[..c], &b[c..c + n], &b[c + n..])
    }

    /// Short-run coefficients of equation `i` scattered into a length-`J` row.
    pub fn short_run_row(&self, i: usize, b: &[f64]) -> Vec<f64> {
        let (_, a, _) = self.split(i, b);
        let mut row = vec![0.0; self.j()];
        for (v, &col) in a.iter().zip(&self.x_cols[i]) {
            row[col] = *v;
        }
        row
    }

    /// Labels of the `x` columns.
    pub fn x_labels(&self, design: &Design, names: &[String]) -> Vec<String> {
        let m = self.n_endog();
        match self.class {
            ModelClass::VarLevels | ModelClass::ArLevels => {
                let mut out = Vec::new();
                for p in 1..=design.lags {
                    for n in names.iter().take(m) {
                        out.push(format!("{n}.l{p}"));
                    }
                }
                if self.class == ModelClass::VarLevels {
                    out.extend(names.iter().skip(m).map(|n| format!("{n}.l1")));
                }
                out.extend(design.deterministics.labels());
                out
            }
            _ => design.x_labels(names),
        }
    }

    /// Whether forecasts of the target must be added to the last levels.
    pub fn differenced(&self) -> bool {
        !self.class.in_levels()
    }
}
