//! HAR-family baselines: HAR, VHAR, HAR-KS, GHAR and GNNHAR.
//!
//! Every estimator works on a complete T × N matrix of RV^{1/2} (the
//! intersection calendar). Position `t` in a series is the day being
//! predicted; its regressors use only days `< t`.

mod gnnhar;

pub use gnnhar::{fit_gnnhar, gnnhar_loss_and_grad, GnnharConfig, GnnharFit, GnnharParams};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, LeastSquares};

/// Days of history a HAR regressor needs.
pub const HAR_LOOKBACK: usize = 22;

/// Minimum usable regression rows for the single-index fit.
pub const MIN_HAR_ROWS: usize = 50;

/// How the weekly and monthly averages are windowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// weekly = mean(t−5..t−1), monthly = mean(t−22..t−1)
    #[default]
    Overlapping,
    /// weekly = mean(t−5..t−2), monthly = mean(t−22..t−6)
    NonOverlapping,
}

/// Daily, weekly and monthly regressors for one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarFeatures {
    pub daily: f64,
    pub weekly: f64,
    pub monthly: f64,
}

impl HarFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.daily, self.weekly, self.monthly]
    }
}

fn mean_of(series: &[f64], lo: usize, hi_inclusive: usize) -> f64 {
    let slice = &series[lo..=hi_inclusive];
    slice.iter().sum::<f64>() / slice.len() as f64
}

/// Regressors for predicting `series[t]` (0-based, so `t >= 22`).
pub fn har_features(series: &[f64], t: usize, mode: WindowMode) -> Result<HarFeatures> {
    if t < HAR_LOOKBACK || t > series.len() {
        return Err(Error::InsufficientObservations(format!(
            "position {t} needs {HAR_LOOKBACK} prior values (series length {})",
            series.len()
        )));
    }
    if let Some(k) = (t - HAR_LOOKBACK..t).find(|&k| !series[k].is_finite()) {
        return Err(Error::InvalidInput(format!("missing value at position {k} in lookback")));
    }
    Ok(match mode {
        WindowMode::Overlapping => HarFeatures {
            daily: series[t - 1],
            weekly: mean_of(series, t - 5, t - 1),
            monthly: mean_of(series, t - 22, t - 1),
        },
        WindowMode::NonOverlapping => HarFeatures {
            daily: series[t - 1],
            weekly: mean_of(series, t - 5, t - 2),
            monthly: mean_of(series, t - 22, t - 6),
        },
    })
}

/// One HAR equation: `alpha + beta · (d, w, m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarEquation {
    pub mode: WindowMode,
    pub alpha: f64,
    pub beta_d: f64,
    pub beta_w: f64,
    pub beta_m: f64,
    /// Standard errors in the order (alpha, beta_d, beta_w, beta_m).
    pub std_errors: [f64; 4],
}

impl HarEquation {
    pub fn predict(&self, f: &HarFeatures) -> f64 {
        self.alpha + self.beta_d * f.daily + self.beta_w * f.weekly + self.beta_m * f.monthly
    }
}

fn column(data: &DMatrix<f64>, c: usize) -> Vec<f64> {
    data.column(c).iter().copied().collect()
}

fn feature_rows(series: &[f64], mode: WindowMode) -> Result<Vec<HarFeatures>> {
    (HAR_LOOKBACK..series.len())
        .map(|t| har_features(series, t, mode))
        .collect()
}

fn ols_or_collinear(design: &DMatrix<f64>, y: &DMatrix<f64>, what: &str) -> Result<LeastSquares> {
    least_squares(design, y, 0.0).map_err(|e| match e {
        Error::SingularRegressors(m) => Error::Collinear(format!("{what}: {m}")),
        other => other,
    })
}

/// OLS fit of a single-index HAR.
pub fn fit_har(series: &[f64], mode: WindowMode) -> Result<HarEquation> {
    let feats = feature_rows(series, mode)?;
    if feats.len() < MIN_HAR_ROWS {
        return Err(Error::InsufficientObservations(format!(
            "{} usable rows, need {MIN_HAR_ROWS}",
            feats.len()
        )));
    }
    let rows = feats.len();
    let design = DMatrix::from_fn(rows, 4, |r, c| match c {
        0 => 1.0,
        _ => feats[r].as_array()[c - 1],
    });
    let y = DMatrix::from_fn(rows, 1, |r, _| series[r + HAR_LOOKBACK]);
    let fit = ols_or_collinear(&design, &y, "HAR")?;
    let b = &fit.coefficients;
    let se = &fit.std_errors;
    Ok(HarEquation {
        mode,
        alpha: b[(0, 0)],
        beta_d: b[(1, 0)],
        beta_w: b[(2, 0)],
        beta_m: b[(3, 0)],
        std_errors: [se[(0, 0)], se[(1, 0)], se[(2, 0)], se[(3, 0)]],
    })
}

/// One-step forecast from the tail of `history`.
pub fn forecast_har(coefs: &HarEquation, history: &[f64]) -> Result<f64> {
    let f = har_features(history, history.len(), coefs.mode)?;
    Ok(coefs.predict(&f))
}

/// Coefficients of every HAR-family variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum HarCoefficients {
    Har {
        equations: Vec<HarEquation>,
    },
    Vhar {
        mode: WindowMode,
        alpha: Vec<f64>,
        /// N × N, row = equation.
        beta_d: Vec<Vec<f64>>,
        beta_w: Vec<Vec<f64>>,
        beta_m: Vec<Vec<f64>>,
    },
    HarKs {
        mode: WindowMode,
        equations: Vec<HarEquation>,
        /// Per equation, the N − 1 other markets' daily coefficients in index order.
        cross_betas: Vec<Vec<f64>>,
    },
    Ghar {
        alpha: Vec<f64>,
        beta: [f64; 3],
        gamma: [f64; 3],
        /// D^{-1/2} A D^{-1/2}, row-major.
        propagation: Vec<Vec<f64>>,
        /// Standard errors of (beta_d, beta_w, beta_m, gamma_d, gamma_w, gamma_m).
        std_errors: [f64; 6],
    },
    Gnnhar(GnnharParams),
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// Features for every market at position `t` of a T × N matrix.
fn panel_features(data: &DMatrix<f64>, t: usize, mode: WindowMode) -> Result<Vec<HarFeatures>> {
    (0..data.ncols())
        .map(|c| har_features(&column(data, c), t, mode))
        .collect()
}

impl HarCoefficients {
    pub fn variant_name(&self) -> &'static str {
        match self {
            HarCoefficients::Har { .. } => "har",
            HarCoefficients::Vhar { .. } => "vhar",
            HarCoefficients::HarKs { .. } => "har-ks",
            HarCoefficients::Ghar { .. } => "ghar",
            HarCoefficients::Gnnhar(_) => "gnnhar",
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            HarCoefficients::Har { equations } => equations.len(),
            HarCoefficients::Vhar { alpha, .. } => alpha.len(),
            HarCoefficients::HarKs { equations, .. } => equations.len(),
            HarCoefficients::Ghar { alpha, .. } => alpha.len(),
            HarCoefficients::Gnnhar(p) => p.alpha.len(),
        }
    }

    /// One-step forecast for all markets from a T × N history (T ≥ 22).
    pub fn forecast(&self, history: &DMatrix<f64>) -> Result<DVector<f64>> {
        let t = history.nrows();
        let n = history.ncols();
        if n != self.n_nodes() {
            return Err(Error::Shape(format!("history has {n} columns, model has {}", self.n_nodes())));
        }
        match self {
            HarCoefficients::Har { equations } => {
                let mut out = DVector::zeros(n);
                for (c, eq) in equations.iter().enumerate() {
                    out[c] = forecast_har(eq, &column(history, c))?;
                }
                Ok(out)
            }
            HarCoefficients::Vhar {
                mode,
                alpha,
                beta_d,
                beta_w,
                beta_m,
            } => {
                let f = panel_features(history, t, *mode)?;
                let d = DVector::from_iterator(n, f.iter().map(|x| x.daily));
                let w = DVector::from_iterator(n, f.iter().map(|x| x.weekly));
                let m = DVector::from_iterator(n, f.iter().map(|x| x.monthly));
                Ok(DVector::from_vec(alpha.clone())
                    + from_rows(beta_d) * d
                    + from_rows(beta_w) * w
                    + from_rows(beta_m) * m)
            }
            HarCoefficients::HarKs {
                mode,
                equations,
                cross_betas,
            } => {
                let f = panel_features(history, t, *mode)?;
                let mut out = DVector::zeros(n);
                for i in 0..n {
                    let mut v = equations[i].predict(&f[i]);
                    for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
                        v += cross_betas[i][k] * f[j].daily;
                    }
                    out[i] = v;
                }
                Ok(out)
            }
            HarCoefficients::Ghar {
                alpha,
                beta,
                gamma,
                propagation,
                ..
            } => {
                let f = panel_features(history, t, WindowMode::NonOverlapping)?;
                let own = DMatrix::from_fn(n, 3, |i, k| f[i].as_array()[k]);
                let neigh = from_rows(propagation) * &own;
                Ok(DVector::from_fn(n, |i, _| {
                    alpha[i]
                        + (0..3).map(|k| beta[k] * own[(i, k)] + gamma[k] * neigh[(i, k)]).sum::<f64>()
                }))
            }
            HarCoefficients::Gnnhar(p) => {
                let f = panel_features(history, t, WindowMode::NonOverlapping)?;
                let own = DMatrix::from_fn(n, 3, |i, k| f[i].as_array()[k]);
                Ok(p.predict(&own))
            }
        }
    }

    /// Recursive h-step path: each one-step forecast is appended to the history.
    pub fn forecast_path(&self, history: &DMatrix<f64>, h: usize) -> Result<Vec<DVector<f64>>> {
        let n = history.ncols();
        let keep = HAR_LOOKBACK.min(history.nrows());
        let mut buf = history.rows(history.nrows() - keep, keep).into_owned();
        let mut out = Vec::with_capacity(h);
        for _ in 0..h {
            let next = self.forecast(&buf)?;
            let rows = buf.nrows();
            buf = buf.insert_row(rows, 0.0);
            buf.row_mut(rows).copy_from(&next.transpose());
            if buf.nrows() > HAR_LOOKBACK {
                buf = buf.remove_row(0);
            }
            debug_assert_eq!(buf.ncols(), n);
            out.push(next);
        }
        Ok(out)
    }
}

/// Per-index HAR on every column.
pub fn fit_har_panel(data: &DMatrix<f64>, mode: WindowMode) -> Result<HarCoefficients> {
    let equations = (0..data.ncols())
        .map(|c| fit_har(&column(data, c), mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(HarCoefficients::Har { equations })
}

/// Common sample of per-market features for positions 22..T.
fn all_features(data: &DMatrix<f64>, mode: WindowMode) -> Result<Vec<Vec<HarFeatures>>> {
    (0..data.ncols())
        .map(|c| feature_rows(&column(data, c), mode))
        .collect()
}

/// VHAR: each equation regresses on all 3N daily/weekly/monthly regressors.
pub fn fit_vhar(data: &DMatrix<f64>, mode: WindowMode) -> Result<HarCoefficients> {
    let n = data.ncols();
    let feats = all_features(data, mode)?;
    let rows = data.nrows().saturating_sub(HAR_LOOKBACK);
    if rows < 3 * n + 1 {
        return Err(Error::InsufficientObservations(format!(
            "{rows} usable rows for {} VHAR regressors",
            3 * n + 1
        )));
    }
    let design = DMatrix::from_fn(rows, 1 + 3 * n, |r, c| {
        if c == 0 {
            1.0
        } else {
            let k = (c - 1) / n;
            let j = (c - 1) % n;
            feats[j][r].as_array()[k]
        }
    });
    let y = data.rows(HAR_LOOKBACK, rows).into_owned();
    let fit = ols_or_collinear(&design, &y, "VHAR")?;
    let b = &fit.coefficients;
    let block = |k: usize| DMatrix::from_fn(n, n, |eq, j| b[(1 + k * n + j, eq)]);
    Ok(HarCoefficients::Vhar {
        mode,
        alpha: b.row(0).iter().copied().collect(),
        beta_d: to_rows(&block(0)),
        beta_w: to_rows(&block(1)),
        beta_m: to_rows(&block(2)),
    })
}

/// VHAR standard errors, laid out like the coefficients: `(alpha, beta_d, beta_w, beta_m)`.
pub fn vhar_std_errors(data: &DMatrix<f64>, mode: WindowMode) -> Result<(Vec<f64>, [DMatrix<f64>; 3])> {
    let n = data.ncols();
    let feats = all_features(data, mode)?;
    let rows = data.nrows().saturating_sub(HAR_LOOKBACK);
    let design = DMatrix::from_fn(rows, 1 + 3 * n, |r, c| {
        if c == 0 {
            1.0
        } else {
            feats[(c - 1) % n][r].as_array()[(c - 1) / n]
        }
    });
    let y = data.rows(HAR_LOOKBACK, rows).into_owned();
    let fit = ols_or_collinear(&design, &y, "VHAR")?;
    let se = &fit.std_errors;
    let block = |k: usize| DMatrix::from_fn(n, n, |eq, j| se[(1 + k * n + j, eq)]);
    Ok((se.row(0).iter().copied().collect(), [block(0), block(1), block(2)]))
}

/// HAR-KS: own HAR terms plus the other markets' lagged daily values.
pub fn fit_har_ks(data: &DMatrix<f64>, mode: WindowMode) -> Result<HarCoefficients> {
    Ok(fit_har_ks_detailed(data, mode)?.0)
}

/// HAR-KS coefficients plus per-equation standard errors in design order
/// `(alpha, beta_d, beta_w, beta_m, cross...)`.
pub fn fit_har_ks_detailed(data: &DMatrix<f64>, mode: WindowMode) -> Result<(HarCoefficients, Vec<Vec<f64>>)> {
    let n = data.ncols();
    let feats = all_features(data, mode)?;
    let rows = data.nrows().saturating_sub(HAR_LOOKBACK);
    let k = 4 + (n - 1);
    if rows < k.max(MIN_HAR_ROWS) {
        return Err(Error::InsufficientObservations(format!("{rows} usable rows for HAR-KS")));
    }
    let mut equations = Vec::with_capacity(n);
    let mut cross_betas = Vec::with_capacity(n);
    let mut ses = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let design = DMatrix::from_fn(rows, k, |r, c| match c {
            0 => 1.0,
            1..=3 => feats[i][r].as_array()[c - 1],
            _ => feats[others[c - 4]][r].daily,
        });
        let y = DMatrix::from_fn(rows, 1, |r, _| data[(r + HAR_LOOKBACK, i)]);
        let fit = ols_or_collinear(&design, &y, "HAR-KS")?;
        let b = &fit.coefficients;
        let se = &fit.std_errors;
        equations.push(HarEquation {
            mode,
            alpha: b[(0, 0)],
            beta_d: b[(1, 0)],
            beta_w: b[(2, 0)],
            beta_m: b[(3, 0)],
            std_errors: [se[(0, 0)], se[(1, 0)], se[(2, 0)], se[(3, 0)]],
        });
        cross_betas.push((4..k).map(|c| b[(c, 0)]).collect());
        ses.push(se.column(0).iter().copied().collect());
    }
    Ok((
        HarCoefficients::HarKs {
            mode,
            equations,
            cross_betas,
        },
        ses,
    ))
}

/// D^{-1/2} A D^{-1/2} with row-sum degrees.
pub fn symmetric_normalized(adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::Shape("adjacency must be square".into()));
    }
    let deg: Vec<f64> = (0..n).map(|i| adjacency.row(i).sum()).collect();
    if let Some(i) = deg.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::InvalidInput(format!("node {i} has zero degree")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| adjacency[(i, j)] / (deg[i] * deg[j]).sqrt()))
}

/// Pooled GHAR with per-market intercepts and graph-smoothed regressors.
pub fn fit_ghar(data: &DMatrix<f64>, adjacency: &DMatrix<f64>) -> Result<HarCoefficients> {
    let n = data.ncols();
    if adjacency.shape() != (n, n) {
        return Err(Error::Shape("adjacency does not match panel width".into()));
    }
    let prop = symmetric_normalized(adjacency)?;
    let feats = all_features(data, WindowMode::NonOverlapping)?;
    let rows = data.nrows().saturating_sub(HAR_LOOKBACK);
    if rows * n < n + 6 || rows < MIN_HAR_ROWS {
        return Err(Error::InsufficientObservations(format!("{rows} usable rows for GHAR")));
    }
    let mut design = DMatrix::zeros(rows * n, n + 6);
    let mut y = DMatrix::zeros(rows * n, 1);
    for r in 0..rows {
        let own = DMatrix::from_fn(n, 3, |i, k| feats[i][r].as_array()[k]);
        let neigh = &prop * &own;
        for i in 0..n {
            let row = r * n + i;
            design[(row, i)] = 1.0;
            for k in 0..3 {
                design[(row, n + k)] = own[(i, k)];
                design[(row, n + 3 + k)] = neigh[(i, k)];
            }
            y[(row, 0)] = data[(r + HAR_LOOKBACK, i)];
        }
    }
    let fit = ols_or_collinear(&design, &y, "GHAR")?;
    let b = &fit.coefficients;
    let se = &fit.std_errors;
    Ok(HarCoefficients::Ghar {
        alpha: (0..n).map(|i| b[(i, 0)]).collect(),
        beta: [b[(n, 0)], b[(n + 1, 0)], b[(n + 2, 0)]],
        gamma: [b[(n + 3, 0)], b[(n + 4, 0)], b[(n + 5, 0)]],
        propagation: to_rows(&prop),
        std_errors: std::array::from_fn(|k| se[(n + k, 0)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_examples() {
        let c = vec![0.7; 30];
        for mode in [WindowMode::Overlapping, WindowMode::NonOverlapping] {
            let f = har_features(&c, 25, mode).unwrap();
            assert!((f.daily - 0.7).abs() < 1e-15);
            assert!((f.weekly - 0.7).abs() < 1e-15);
            assert!((f.monthly - 0.7).abs() < 1e-15);
        }
        let s: Vec<f64> = (1..=23).map(f64::from).collect();
        let f = har_features(&s, 22, WindowMode::Overlapping).unwrap();
        assert_eq!((f.daily, f.weekly, f.monthly), (22.0, 20.0, 11.5));
        let g = har_features(&s, 22, WindowMode::NonOverlapping).unwrap();
        assert_eq!(g.daily, 22.0);
        assert_eq!(g.weekly, (18.0 + 19.0 + 20.0 + 21.0) / 4.0);
        assert_eq!(g.monthly, (1..=17).map(f64::from).sum::<f64>() / 17.0);

        assert!(har_features(&s, 21, WindowMode::Overlapping).is_err());
        let mut holes = s.clone();
        holes[10] = f64::NAN;
        assert!(har_features(&holes, 22, WindowMode::Overlapping).is_err());
    }

    #[test]
    fn constant_series_is_collinear() {
        let e = fit_har(&[0.3; 120], WindowMode::Overlapping).unwrap_err();
        assert!(e.to_string().contains("collinear"), "{e}");
    }

    #[test]
    fn intercept_only_model_forecasts_constant() {
        let eq = HarEquation {
            mode: WindowMode::Overlapping,
            alpha: 0.42,
            beta_d: 0.0,
            beta_w: 0.0,
            beta_m: 0.0,
            std_errors: [0.0; 4],
        };
        let hist: Vec<f64> = (0..40).map(|i| (i as f64).sin().abs()).collect();
        assert_eq!(forecast_har(&eq, &hist).unwrap(), 0.42);
    }

    #[test]
    fn ghar_identity_graph_is_collinear() {
        let data = DMatrix::from_fn(120, 2, |r, c| ((r * 7 + c * 3) as f64 * 0.37).sin().abs() + 0.1);
        let e = fit_ghar(&data, &DMatrix::identity(2, 2)).unwrap_err();
        assert!(e.to_string().contains("collinear"), "{e}");
        let zero_row = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert!(fit_ghar(&data, &zero_row).is_err());
    }

    #[test]
    fn vhar_needs_rows() {
        let data = DMatrix::from_fn(30, 3, |r, c| ((r * 5 + c) as f64).cos().abs());
        assert!(fit_vhar(&data, WindowMode::Overlapping).is_err());
    }
}
