//! Synthetic panels with known generating structure.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{companion, spectral_radius};
use crate::panel::RvPanel;
use crate::spillover::{panel_spillover, SpilloverSettings};

/// Floor added after the positivity transform.
pub const RV_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positivity {
    /// `scale · |y| + floor`
    #[default]
    Absolute,
    /// `scale · exp(y) + floor`
    Exponential,
}

/// VAR coefficients from row `start` onward, replacing the base `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regime {
    pub start: usize,
    pub phi: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub t: usize,
    /// Lag matrices Φ_1..Φ_p, each given as N rows.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Innovation covariance, N rows. Empty means the identity.
    #[serde(default)]
    pub sigma: Vec<Vec<f64>>,
    #[serde(default)]
    pub intercept: Option<Vec<f64>>,
    #[serde(default)]
    pub transform: Positivity,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub holiday_prob: Option<Vec<f64>>,
    #[serde(default)]
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_scale() -> f64 {
    0.01
}

fn default_burn_in() -> usize {
    200
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("{what} must be {n}x{n}")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(m)
}

fn lag_matrices(phi: &[Vec<Vec<f64>>], n: usize) -> Result<Vec<DMatrix<f64>>> {
    let mats = phi.iter().map(|m| matrix(m, n, "phi")).collect::<Result<Vec<_>>>()?;
    if !mats.is_empty() {
        let radius = spectral_radius(&companion(&mats));
        if radius >= 1.0 {
            return Err(Error::Unstable(radius));
        }
    }
    Ok(mats)
}

impl SynthSpec {
    /// A spec with diagonal unit-variance innovations and the given lag matrices.
    pub fn new(n: usize, t: usize, phi: Vec<DMatrix<f64>>, seed: u64) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Self {
            n,
            t,
            phi: phi.iter().map(rows).collect(),
            sigma: rows(&DMatrix::identity(n, n)),
            intercept: None,
            transform: Positivity::Absolute,
            scale: default_scale(),
            holiday_prob: None,
            regimes: Vec::new(),
            seed,
            burn_in: default_burn_in(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        if self.sigma.is_empty() {
            Ok(DMatrix::identity(self.n, self.n))
        } else {
            matrix(&self.sigma, self.n, "sigma")
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::Config("n and t must be positive".into()));
        }
        lag_matrices(&self.phi, self.n)?;
        for r in &self.regimes {
            if r.phi.len() != self.phi.len() {
                return Err(Error::Config("every regime needs the same lag order as phi".into()));
            }
            lag_matrices(&r.phi, self.n)?;
        }
        let sigma = self.sigma_matrix()?;
        if (&sigma - sigma.transpose()).abs().max() > 1e-12 || sigma.clone().cholesky().is_none() {
            return Err(Error::Config("sigma must be symmetric positive definite".into()));
        }
        if let Some(c) = &self.intercept {
            if c.len() != self.n {
                return Err(Error::Shape("intercept length must be n".into()));
            }
        }
        if let Some(p) = &self.holiday_prob {
            validate_probabilities(p, self.n)?;
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config("scale must be positive".into()));
        }
        Ok(())
    }
}

fn validate_probabilities(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::Shape(format!("{} holiday probabilities for {n} indices", p.len())));
    }
    if p.iter().any(|v| !(0.0..=0.3).contains(v)) {
        return Err(Error::Config("holiday probabilities must lie in [0, 0.3]".into()));
    }
    Ok(())
}

/// Weekdays starting 2000-01-03.
pub fn business_days(count: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Index names `I0, I1, …`.
pub fn index_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("I{i}")).collect()
}

/// Simulates the VAR (after burn-in), applies the positivity transform and,
/// when the spec carries holiday probabilities, the holiday mask.
pub fn gen_var_panel(spec: &SynthSpec) -> Result<RvPanel> {
    spec.validate()?;
    let n = spec.n;
    let base = lag_matrices(&spec.phi, n)?;
    let mut regimes: Vec<(usize, Vec<DMatrix<f64>>)> =
        spec.regimes.iter().map(|r| Ok((r.start, lag_matrices(&r.phi, n)?))).collect::<Result<_>>()?;
    regimes.sort_by_key(|r| r.0);
    let chol = spec.sigma_matrix()?.cholesky().expect("validated").l();
    let c = spec.intercept.as_ref().map_or_else(|| DVector::zeros(n), |v| DVector::from_column_slice(v));
    let p = base.len();

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let total = spec.burn_in + spec.t;
    let mut y: Vec<DVector<f64>> = Vec::with_capacity(total);
    for step in 0..total {
        let row = step.saturating_sub(spec.burn_in);
        let phi = regimes.iter().rev().find(|r| step >= spec.burn_in && row >= r.0).map_or(&base, |r| &r.1);
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut next = &c + &chol * z;
        for (lag, m) in phi.iter().enumerate().take(p) {
            if step > lag {
                next += m * &y[step - 1 - lag];
            }
        }
        y.push(next);
    }
    let values = DMatrix::from_fn(spec.t, n, |t, i| {
        let v = y[spec.burn_in + t][i];
        match spec.transform {
            Positivity::Absolute => spec.scale * v.abs() + RV_FLOOR,
            Positivity::Exponential => spec.scale * v.exp() + RV_FLOOR,
        }
    });
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simulated panel".into()));
    }
    let panel = RvPanel::complete(business_days(spec.t), index_names(n), values)?;
    match &spec.holiday_prob {
        Some(probs) => apply_holidays(&panel, probs, spec.seed.wrapping_add(1)),
        None => Ok(panel),
    }
}

/// Marks each cell inactive with its index's probability and drops rows that
/// end up with no active market.
pub fn apply_holidays(panel: &RvPanel, probabilities: &[f64], seed: u64) -> Result<RvPanel> {
    let n = panel.n_indices();
    validate_probabilities(probabilities, n)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut observed = Vec::with_capacity(panel.n_rows() * n);
    for r in 0..panel.n_rows() {
        for (c, &p) in probabilities.iter().enumerate() {
            let holiday = rng.gen::<f64>() < p;
            observed.push(panel.is_observed(r, c) && !holiday);
        }
    }
    let keep: Vec<usize> = (0..panel.n_rows()).filter(|&r| observed[r * n..(r + 1) * n].iter().any(|&o| o)).collect();
    let mut obs = Vec::with_capacity(keep.len() * n);
    for &r in &keep {
        obs.extend_from_slice(&observed[r * n..(r + 1) * n]);
    }
    RvPanel::new(
        keep.iter().map(|&r| panel.dates()[r]).collect(),
        panel.indices().to_vec(),
        DMatrix::from_fn(keep.len(), n, |i, c| panel.values()[(keep[i], c)]),
        obs,
    )
}

/// Block label per node: connected components of the off-diagonal pattern of Φ.
pub fn blocks_from_phi(phi: &[DMatrix<f64>], n: usize) -> Vec<usize> {
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for m in phi {
        for i in 0..n {
            for j in 0..n {
                if i != j && m[(i, j)] != 0.0 {
                    let (a, b) = (root(&mut label, i), root(&mut label, j));
                    label[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..n).map(|i| root(&mut label, i)).collect()
}

/// Fraction of the top-k estimated off-diagonal shares that fall inside the
/// planted blocks, where k is the number of within-block ordered pairs.
pub fn planted_graph_recovery(spec: &SynthSpec, blocks: &[usize], settings: &SpilloverSettings) -> Result<f64> {
    if blocks.len() != spec.n {
        return Err(Error::Shape("one block label per index required".into()));
    }
    let panel = gen_var_panel(spec)?;
    let graph = panel_spillover(&panel, settings)?;
    let n = spec.n;
    let mut edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let planted = edges.iter().filter(|&&(i, j)| blocks[i] == blocks[j]).count();
    if planted == 0 {
        return Err(Error::InvalidInput("planted structure has no within-block edges".into()));
    }
    edges.sort_by(|a, b| graph.theta[*b].total_cmp(&graph.theta[*a]).then(a.cmp(b)));
    let hits = edges[..planted].iter().filter(|&&(i, j)| blocks[i] == blocks[j]).count();
    Ok(hits as f64 / planted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(6);
        assert_eq!(d[4].weekday(), Weekday::Fri);
        assert_eq!(d[5].weekday(), Weekday::Mon);
    }

    #[test]
    fn blocks_follow_coupling() {
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 1)] = 0.2;
        m[(3, 2)] = 0.1;
        assert_eq!(blocks_from_phi(&[m], 4), vec![0, 0, 2, 2]);
    }

    #[test]
    fn unstable_spec_rejected() {
        let spec = SynthSpec::new(1, 10, vec![DMatrix::from_element(1, 1, 1.01)], 0);
        assert!(matches!(gen_var_panel(&spec), Err(Error::Unstable(_))));
    }
}
