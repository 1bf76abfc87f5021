//! Volatility spillover graphs from VAR variance decompositions.
//!
//! Pipeline: [`fit_var`] → [`gfevd`] → [`sparsify`]. The row-standardized
//! generalized decomposition is used directly as a weighted, directed
//! adjacency matrix: `theta[(i, j)]` is the share of market i's H-step
//! forecast-error variance attributed to shocks in market j.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{companion, least_squares, spectral_radius};
use crate::panel::RvPanel;

/// Estimated VAR(p) with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub p: usize,
    /// Φ_1..Φ_p, each N × N; row = equation, column = lagged variable.
    pub coefficients: Vec<DMatrix<f64>>,
    pub intercept: DVector<f64>,
    /// Σ_ε, symmetric.
    pub residual_cov: DMatrix<f64>,
    pub spectral_radius: f64,
    pub stable: bool,
    pub ridge: f64,
    /// Effective (post-lag) sample rows.
    pub n_obs: usize,
}

impl VarModel {
    pub fn n_vars(&self) -> usize {
        self.intercept.len()
    }

    /// Builds a model from known parameters (used by simulators and tests).
    pub fn from_parts(coefficients: Vec<DMatrix<f64>>, residual_cov: DMatrix<f64>) -> Result<Self> {
        let p = coefficients.len();
        let n = residual_cov.nrows();
        if residual_cov.ncols() != n || coefficients.iter().any(|c| c.shape() != (n, n)) {
            return Err(Error::Shape("VAR parts must all be N x N".into()));
        }
        let radius = if p == 0 {
            0.0
        } else {
            spectral_radius(&companion(&coefficients))
        };
        Ok(Self {
            p,
            coefficients,
            intercept: DVector::zeros(n),
            residual_cov,
            spectral_radius: radius,
            stable: radius < 1.0,
            ridge: 0.0,
            n_obs: 0,
        })
    }

    pub fn summary(&self) -> VarSummary {
        VarSummary {
            p: self.p,
            n_obs: self.n_obs,
            ridge: self.ridge,
            spectral_radius: self.spectral_radius,
            stable: self.stable,
        }
    }
}

/// Provenance carried by a [`SpilloverGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarSummary {
    pub p: usize,
    pub n_obs: usize,
    pub ridge: f64,
    pub spectral_radius: f64,
    pub stable: bool,
}

/// Minimum rows a VAR(p) on N variables needs.
pub fn var_min_rows(n: usize, p: usize) -> usize {
    n * p + p + 10
}

/// Equation-by-equation least squares for a VAR(p) with intercept.
pub fn fit_var(window: &DMatrix<f64>, p: usize, ridge: f64) -> Result<VarModel> {
    let (t, n) = window.shape();
    if p == 0 {
        return Err(Error::InvalidInput("VAR lag order must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("VAR needs at least one variable".into()));
    }
    if t < var_min_rows(n, p) {
        return Err(Error::InsufficientObservations(format!(
            "{t} rows for a VAR({p}) on {n} variables; need {}",
            var_min_rows(n, p)
        )));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("VAR window".into()));
    }

    let rows = t - p;
    let k = 1 + n * p;
    let mut design = DMatrix::<f64>::zeros(rows, k);
    let mut targets = DMatrix::<f64>::zeros(rows, n);
    for r in 0..rows {
        let now = r + p;
        design[(r, 0)] = 1.0;
        for lag in 1..=p {
            for v in 0..n {
                design[(r, 1 + (lag - 1) * n + v)] = window[(now - lag, v)];
            }
        }
        targets.row_mut(r).copy_from(&window.row(now));
    }

    let fit = least_squares(&design, &targets, ridge)?;

    let intercept = fit.coefficients.row(0).transpose();
    let coefficients: Vec<DMatrix<f64>> = (0..p)
        .map(|lag| DMatrix::from_fn(n, n, |eq, var| fit.coefficients[(1 + lag * n + var, eq)]))
        .collect();

    let dof = (rows - k).max(1) as f64;
    let raw = fit.residuals.transpose() * &fit.residuals / dof;
    let cov = (&raw + raw.transpose()) * 0.5;

    let radius = spectral_radius(&companion(&coefficients));
    Ok(VarModel {
        p,
        coefficients,
        intercept,
        residual_cov: cov,
        spectral_radius: radius,
        stable: radius < 1.0,
        ridge,
        n_obs: rows,
    })
}

/// Moving-average matrices B_0..B_{n_terms-1} with B_0 = I and
/// B_i = Σ_j Φ_j B_{i−j}.
pub fn ma_coefficients(var: &VarModel, n_terms: usize) -> Vec<DMatrix<f64>> {
    let n = var.n_vars();
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(n_terms);
    for i in 0..n_terms {
        if i == 0 {
            out.push(DMatrix::identity(n, n));
            continue;
        }
        let mut b = DMatrix::zeros(n, n);
        for j in 1..=var.p.min(i) {
            b += &var.coefficients[j - 1] * &out[i - j];
        }
        out.push(b);
    }
    out
}

/// Row-standardized generalized FEVD used as a spillover adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpilloverGraph {
    pub indices: Vec<String>,
    pub theta: DMatrix<f64>,
    pub horizon: usize,
    pub var: VarSummary,
    pub sparsified: bool,
    pub keep_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    indices: Vec<String>,
    horizon: usize,
    p: usize,
    keep_fraction: f64,
    theta: Vec<Vec<f64>>,
    sparsified: bool,
    var: VarSummary,
}

impl SpilloverGraph {
    pub fn n_nodes(&self) -> usize {
        self.theta.nrows()
    }

    pub fn with_indices(mut self, indices: &[String]) -> Self {
        self.indices = indices.to_vec();
        self
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = GraphDoc {
            indices: self.indices.clone(),
            horizon: self.horizon,
            p: self.var.p,
            keep_fraction: self.keep_fraction,
            theta: (0..self.n_nodes())
                .map(|i| self.theta.row(i).iter().copied().collect())
                .collect(),
            sparsified: self.sparsified,
            var: self.var,
        };
        serde_json::to_value(doc).expect("plain struct")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_value(value.clone())?;
        let n = doc.theta.len();
        if doc.theta.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("theta must be square".into()));
        }
        let flat: Vec<f64> = doc.theta.into_iter().flatten().collect();
        Ok(Self {
            indices: doc.indices,
            theta: DMatrix::from_row_slice(n, n, &flat),
            horizon: doc.horizon,
            var: doc.var,
            sparsified: doc.sparsified,
            keep_fraction: doc.keep_fraction,
        })
    }

    /// `src,dst,weight` for every nonzero entry; `src` is the transmitting
    /// market (column of theta), `dst` the receiving one (row).
    pub fn write_edge_list<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["src", "dst", "weight"])?;
        for i in 0..self.n_nodes() {
            for j in 0..self.n_nodes() {
                let v = self.theta[(i, j)];
                if v != 0.0 {
                    w.write_record([self.indices[j].clone(), self.indices[i].clone(), format!("{v}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

/// Generalized H-step forecast-error variance decomposition, row-normalized.
pub fn gfevd(var: &VarModel, horizon: usize) -> Result<SpilloverGraph> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be >= 1".into()));
    }
    let n = var.n_vars();
    let sigma = &var.residual_cov;
    for j in 0..n {
        if !(sigma[(j, j)] > 0.0) {
            return Err(Error::InvalidInput(format!(
                "residual variance of variable {j} is not positive"
            )));
        }
    }
    let bs = ma_coefficients(var, horizon);
    let mut num = DMatrix::<f64>::zeros(n, n);
    let mut den = DVector::<f64>::zeros(n);
    for b in &bs {
        let b_sigma = b * sigma;
        let quad = &b_sigma * b.transpose();
        for i in 0..n {
            den[i] += quad[(i, i)];
            for j in 0..n {
                num[(i, j)] += b_sigma[(i, j)].powi(2);
            }
        }
    }
    let mut theta = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            theta[(i, j)] = num[(i, j)] / (sigma[(j, j)] * den[i]);
        }
        let row_sum: f64 = theta.row(i).sum();
        if !(row_sum.is_finite() && row_sum > 0.0) {
            return Err(Error::NonFinite(format!("decomposition row {i}")));
        }
        theta.row_mut(i).scale_mut(1.0 / row_sum);
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decomposition".into()));
    }
    Ok(SpilloverGraph {
        indices: default_names(n),
        theta,
        horizon,
        var: var.summary(),
        sparsified: false,
        keep_fraction: 1.0,
    })
}

/// Keeps the `ceil(keep_fraction · N(N−1))` largest off-diagonal weights and
/// every diagonal entry. Rows are not renormalized.
pub fn sparsify(graph: &SpilloverGraph, keep_fraction: f64) -> Result<SpilloverGraph> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::InvalidInput(format!("keep_fraction {keep_fraction} outside [0, 1]")));
    }
    if graph.sparsified {
        return Err(Error::InvalidInput("graph is already sparsified".into()));
    }
    let n = graph.n_nodes();
    let mut cells: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cells.push((graph.theta[(i, j)], i, j));
            }
        }
    }
    let keep = (keep_fraction * cells.len() as f64).ceil() as usize;
    // descending weight; ties keep the lexicographically first cell
    cells.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut out = graph.clone();
    for &(_, i, j) in cells.iter().skip(keep) {
        out.theta[(i, j)] = 0.0;
    }
    out.sparsified = true;
    out.keep_fraction = keep_fraction;
    Ok(out)
}

/// Estimation settings for per-window graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpilloverSettings {
    pub p: usize,
    pub horizon: usize,
    pub keep_fraction: f64,
    /// Minimum common rows; `None` means `ceil(5 (N p + 1) / N)`.
    pub min_rows: Option<usize>,
    pub ridge: f64,
}

impl Default for SpilloverSettings {
    fn default() -> Self {
        Self {
            p: 3,
            horizon: 10,
            keep_fraction: 0.5,
            min_rows: None,
            ridge: 1e-8,
        }
    }
}

impl SpilloverSettings {
    pub fn default_min_rows(n: usize, p: usize) -> usize {
        (5 * (n * p + 1)).div_ceil(n)
    }

    /// Rows actually required: the configured minimum, never below what the
    /// VAR itself needs.
    pub fn required_rows(&self, n: usize) -> usize {
        let configured = self.min_rows.unwrap_or_else(|| Self::default_min_rows(n, self.p));
        configured.max(var_min_rows(n, self.p))
    }
}

/// Result of a per-window estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphEstimate {
    Graph(SpilloverGraph),
    /// Not enough common rows (or the VAR could not be fitted); the caller
    /// substitutes a previously valid graph.
    Fallback { common_rows: usize, reason: String },
}

impl GraphEstimate {
    pub fn graph(self) -> Option<SpilloverGraph> {
        match self {
            GraphEstimate::Graph(g) => Some(g),
            GraphEstimate::Fallback { .. } => None,
        }
    }

    fn with_indices(self, indices: &[String]) -> Self {
        match self {
            GraphEstimate::Graph(g) => GraphEstimate::Graph(g.with_indices(indices)),
            other => other,
        }
    }
}

/// Spillover graph from the rows of `rows` on which every market is observed.
pub fn batch_adjacency(panel: &RvPanel, rows: Range<usize>, settings: &SpilloverSettings) -> Result<GraphEstimate> {
    if rows.end > panel.n_rows() {
        return Err(Error::InvalidInput(format!(
            "rows {rows:?} outside panel of {} rows",
            panel.n_rows()
        )));
    }
    let values = panel.values().rows(rows.start, rows.len()).into_owned();
    let complete: Vec<bool> = rows.map(|r| panel.row_complete(r)).collect();
    Ok(block_adjacency(&values, &complete, settings)?.with_indices(panel.indices()))
}

/// Same as [`batch_adjacency`] on a raw `rows × N` block; only rows flagged
/// in `complete` enter the VAR.
pub fn block_adjacency(values: &DMatrix<f64>, complete: &[bool], settings: &SpilloverSettings) -> Result<GraphEstimate> {
    if complete.len() != values.nrows() {
        return Err(Error::Shape("completeness flags do not match block rows".into()));
    }
    let n = values.ncols();
    let common: Vec<usize> = (0..values.nrows()).filter(|&r| complete[r]).collect();
    let need = settings.required_rows(n);
    if common.len() < need {
        return Ok(GraphEstimate::Fallback {
            common_rows: common.len(),
            reason: format!("{} common rows, need {need}", common.len()),
        });
    }
    let window = DMatrix::from_fn(common.len(), n, |r, c| values[(common[r], c)]);
    let fallback = |e: Error| GraphEstimate::Fallback {
        common_rows: common.len(),
        reason: e.to_string(),
    };
    let var = match fit_var(&window, settings.p, settings.ridge) {
        Ok(v) => v,
        Err(e) => return Ok(fallback(e)),
    };
    let graph = match gfevd(&var, settings.horizon) {
        Ok(g) => g,
        Err(e) => return Ok(fallback(e)),
    };
    Ok(GraphEstimate::Graph(sparsify(&graph, settings.keep_fraction)?))
}

pub fn panel_spillover(panel: &RvPanel, settings: &SpilloverSettings) -> Result<SpilloverGraph> {
    let n = panel.n_indices();
    let common: Vec<usize> = (0..panel.n_rows()).filter(|&r| panel.row_complete(r)).collect();
    let window = DMatrix::from_fn(common.len(), n, |r, c| panel.values()[(common[r], c)]);
    let var = fit_var(&window, settings.p, settings.ridge)?;
    Ok(gfevd(&var, settings.horizon)?.with_indices(panel.indices()))
}

/// Net directional spillover per market in percentage points:
/// transmitted (column sum off the diagonal) minus received (row sum).
pub fn net_spillover(graph: &SpilloverGraph) -> Vec<f64> {
    let n = graph.n_nodes();
    (0..n)
        .map(|i| {
            let mut to_others = 0.0;
            let mut from_others = 0.0;
            for j in 0..n {
                if j != i {
                    to_others += graph.theta[(j, i)];
                    from_others += graph.theta[(i, j)];
                }
            }
            100.0 * (to_others - from_others)
        })
        .collect()
}

/// Per-market rate of being inactive on days when at least `active_threshold`
/// other markets trade.
pub fn omega(panel: &RvPanel, active_threshold: usize) -> Result<Vec<f64>> {
    let n = panel.n_indices();
    let mut out = Vec::with_capacity(n);
    for m in 0..n {
        let mut qualifying = 0usize;
        let mut inactive = 0usize;
        for r in 0..panel.n_rows() {
            let others = (0..n).filter(|&c| c != m && panel.is_observed(r, c)).count();
            if others >= active_threshold {
                qualifying += 1;
                if !panel.is_observed(r, m) {
                    inactive += 1;
                }
            }
        }
        if qualifying == 0 {
            return Err(Error::ThresholdNeverMet(format!(
                "no day with {active_threshold} other markets active for {}",
                panel.indices()[m]
            )));
        }
        out.push(inactive as f64 / qualifying as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn graph_from(theta: DMatrix<f64>) -> SpilloverGraph {
        let n = theta.nrows();
        SpilloverGraph {
            indices: default_names(n),
            theta,
            horizon: 1,
            var: VarSummary {
                p: 1,
                n_obs: 0,
                ridge: 0.0,
                spectral_radius: 0.0,
                stable: true,
            },
            sparsified: false,
            keep_fraction: 1.0,
        }
    }

    #[test]
    fn ar1_coefficient_recovered() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut x = DMatrix::zeros(5000, 1);
        for t in 1..5000 {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[(t, 0)] = 0.5 * x[(t - 1, 0)] + e;
        }
        let var = fit_var(&x, 1, 0.0).unwrap();
        let phi = var.coefficients[0][(0, 0)];
        assert!((0.45..=0.55).contains(&phi), "{phi}");
        assert!(var.stable);
    }

    #[test]
    fn constant_column_is_singular() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(200, 2, |_, c| {
            if c == 0 {
                3.0
            } else {
                StandardNormal.sample(&mut rng)
            }
        });
        let e = fit_var(&x, 1, 0.0).unwrap_err();
        assert!(e.to_string().contains("singular regressors"), "{e}");
        assert!(fit_var(&x, 1, 1e-8).is_ok());
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_fn(6, 2, |r, c| (r * 2 + c) as f64);
        let e = fit_var(&x, 3, 0.0).unwrap_err();
        assert!(e.to_string().contains("insufficient observations"), "{e}");
    }

    #[test]
    fn ma_examples() {
        let var = VarModel::from_parts(vec![DMatrix::from_element(1, 1, 0.5)], DMatrix::identity(1, 1)).unwrap();
        let bs = ma_coefficients(&var, 6);
        for (k, b) in bs.iter().enumerate() {
            assert!((b[(0, 0)] - 0.5f64.powi(k as i32)).abs() < 1e-15);
        }
        let zero = VarModel::from_parts(vec![DMatrix::zeros(2, 2); 2], DMatrix::identity(2, 2)).unwrap();
        let bs = ma_coefficients(&zero, 4);
        assert_eq!(bs[0], DMatrix::identity(2, 2));
        assert!(bs[1..].iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gfevd_examples() {
        let one = VarModel::from_parts(vec![DMatrix::from_element(1, 1, 0.3)], DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(gfevd(&one, 5).unwrap().theta, DMatrix::from_element(1, 1, 1.0));

        let diag = VarModel::from_parts(vec![DMatrix::zeros(2, 2)], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        assert_eq!(gfevd(&diag, 1).unwrap().theta, DMatrix::identity(2, 2));

        let corr = VarModel::from_parts(vec![DMatrix::zeros(2, 2)], DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        let g = gfevd(&corr, 1).unwrap();
        assert!((g.theta[(0, 0)] - 0.8).abs() < 1e-15);
        assert!((g.theta[(0, 1)] - 0.2).abs() < 1e-15);

        let bad = VarModel::from_parts(vec![DMatrix::zeros(2, 2)], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert!(gfevd(&bad, 1).is_err());
    }

    #[test]
    fn sparsify_examples() {
        let g = graph_from(DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.1, 0.9]));
        assert_eq!(sparsify(&g, 1.0).unwrap().theta, g.theta);
        assert_eq!(
            sparsify(&g, 0.0).unwrap().theta,
            DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.9])
        );
        assert_eq!(
            sparsify(&g, 0.5).unwrap().theta,
            DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.0, 0.9])
        );
        // tie at 0.2: (0,1) precedes (1,0)
        let tie = graph_from(DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.8]));
        assert_eq!(
            sparsify(&tie, 0.5).unwrap().theta,
            DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.0, 0.8])
        );
        assert!(sparsify(&sparsify(&g, 0.5).unwrap(), 0.5).is_err());
    }

    #[test]
    fn net_examples() {
        let sym = graph_from(DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5]));
        assert!(net_spillover(&sym).iter().all(|v| v.abs() < 1e-12));
        let asym = graph_from(DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.1, 0.9]));
        let net = net_spillover(&asym);
        assert!((net[0] - (-30.0)).abs() < 1e-12);
        assert!((net[1] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn default_min_rows_formula() {
        assert_eq!(SpilloverSettings::default_min_rows(8, 3), 16);
        assert_eq!(SpilloverSettings::default_min_rows(2, 1), 8);
    }
}
