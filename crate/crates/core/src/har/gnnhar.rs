use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{all_features, from_rows, symmetric_normalized, to_rows, HarCoefficients, WindowMode, HAR_LOOKBACK, MIN_HAR_ROWS};
use crate::error::{Error, Result};
use crate::linalg::least_squares;

/// GNNHAR parameters. `alpha` is in the data's own units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnharParams {
    pub alpha: Vec<f64>,
    pub beta: [f64; 3],
    pub gamma: [f64; 3],
    /// One 3 × 3 weight matrix per graph-convolution layer, row-major.
    pub thetas: Vec<[[f64; 3]; 3]>,
    /// Normalized symmetrized adjacency, row-major.
    pub propagation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnharConfig {
    pub layers: usize,
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for GnnharConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            epochs: 200,
            step_size: 0.05,
            seed: 0,
        }
    }
}

fn theta_matrix(t: &[[f64; 3]; 3]) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| t[i][j])
}

struct Trace {
    /// P H_k for each layer
    propagated: Vec<DMatrix<f64>>,
    pre_activation: Vec<DMatrix<f64>>,
    last: DMatrix<f64>,
    output: DVector<f64>,
}

impl GnnharParams {
    fn trace(&self, prop: &DMatrix<f64>, own: &DMatrix<f64>) -> Trace {
        let n = own.nrows();
        let mut h = own.clone();
        let mut propagated = Vec::with_capacity(self.thetas.len());
        let mut pre_activation = Vec::with_capacity(self.thetas.len());
        for t in &self.thetas {
            let ph = prop * &h;
            let z = &ph * theta_matrix(t);
            h = z.map(|v| v.max(0.0));
            propagated.push(ph);
            pre_activation.push(z);
        }
        let output = DVector::from_fn(n, |i, _| {
            self.alpha[i] + (0..3).map(|k| self.beta[k] * own[(i, k)] + self.gamma[k] * h[(i, k)]).sum::<f64>()
        });
        Trace {
            propagated,
            pre_activation,
            last: h,
            output,
        }
    }

    /// One-step forecast given the N × 3 non-overlapping regressors.
    pub fn predict(&self, own: &DMatrix<f64>) -> DVector<f64> {
        self.trace(&from_rows(&self.propagation), own).output
    }

    fn zeros_like(&self) -> Self {
        Self {
            alpha: vec![0.0; self.alpha.len()],
            beta: [0.0; 3],
            gamma: [0.0; 3],
            thetas: vec![[[0.0; 3]; 3]; self.thetas.len()],
            propagation: self.propagation.clone(),
        }
    }

    /// Flat view of the trainable values (alpha, beta, gamma, thetas).
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma);
        for t in &self.thetas {
            for row in t {
                v.extend_from_slice(row);
            }
        }
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let n = self.alpha.len();
        self.alpha.copy_from_slice(&v[..n]);
        self.beta.copy_from_slice(&v[n..n + 3]);
        self.gamma.copy_from_slice(&v[n + 3..n + 6]);
        let mut at = n + 6;
        for t in &mut self.thetas {
            for row in t.iter_mut() {
                row.copy_from_slice(&v[at..at + 3]);
                at += 3;
            }
        }
    }
}

/// Mean squared error over all (sample, node) pairs and its exact gradient.
///
/// `samples` pairs N × 3 regressors with the N-vector of targets.
pub fn gnnhar_loss_and_grad(params: &GnnharParams, samples: &[(DMatrix<f64>, DVector<f64>)]) -> (f64, GnnharParams) {
    let prop = from_rows(&params.propagation);
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    let count: usize = samples.iter().map(|(_, y)| y.len()).sum();
    let denom = count.max(1) as f64;
    for (own, y) in samples {
        let tr = params.trace(&prop, own);
        let resid = &tr.output - y;
        loss += resid.norm_squared() / denom;
        let dout = resid * (2.0 / denom);
        for (i, d) in dout.iter().enumerate() {
            grad.alpha[i] += d;
        }
        for k in 0..3 {
            grad.beta[k] += own.column(k).dot(&dout);
            grad.gamma[k] += tr.last.column(k).dot(&dout);
        }
        let gamma = DVector::from_row_slice(&params.gamma);
        let mut dh = &dout * gamma.transpose();
        for layer in (0..params.thetas.len()).rev() {
            let z = &tr.pre_activation[layer];
            let dz = dh.zip_map(z, |g, zv| if zv > 0.0 { g } else { 0.0 });
            let dtheta = tr.propagated[layer].transpose() * &dz;
            for i in 0..3 {
                for j in 0..3 {
                    grad.thetas[layer][i][j] += dtheta[(i, j)];
                }
            }
            dh = prop.transpose() * &dz * theta_matrix(&params.thetas[layer]).transpose();
        }
    }
    (loss, grad)
}

/// Result of a GNNHAR fit.
#[derive(Debug, Clone)]
pub struct GnnharFit {
    pub coefficients: HarCoefficients,
    /// Training loss (on the internally rescaled data) before each epoch.
    pub loss_history: Vec<f64>,
}

/// Full-batch gradient descent on the mean squared one-step error.
///
/// The linear part starts from its pooled least-squares solution, the graph
/// weights from a seeded uniform draw and `gamma` from zero. Training runs on
/// data divided by its overall mean; `alpha` is rescaled afterwards, which is
/// exact because every other term is positively homogeneous.
pub fn fit_gnnhar(data: &DMatrix<f64>, adjacency: &DMatrix<f64>, config: &GnnharConfig) -> Result<GnnharFit> {
    let n = data.ncols();
    if config.layers == 0 {
        return Err(Error::InvalidInput("GNNHAR needs at least one layer".into()));
    }
    if adjacency.shape() != (n, n) {
        return Err(Error::Shape("adjacency does not match panel width".into()));
    }
    let sym = (adjacency + adjacency.transpose()) * 0.5;
    let prop = symmetric_normalized(&sym)?;
    let scale = data.mean();
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("GNNHAR needs positive data".into()));
    }
    let scaled = data / scale;
    let feats = all_features(&scaled, WindowMode::NonOverlapping)?;
    let rows = data.nrows().saturating_sub(HAR_LOOKBACK);
    if rows < MIN_HAR_ROWS {
        return Err(Error::InsufficientObservations(format!("{rows} usable rows for GNNHAR")));
    }
    let samples: Vec<(DMatrix<f64>, DVector<f64>)> = (0..rows)
        .map(|r| {
            (
                DMatrix::from_fn(n, 3, |i, k| feats[i][r].as_array()[k]),
                DVector::from_fn(n, |i, _| scaled[(r + HAR_LOOKBACK, i)]),
            )
        })
        .collect();

    // pooled linear start
    let mut design = DMatrix::zeros(rows * n, n + 3);
    let mut y = DMatrix::zeros(rows * n, 1);
    for (r, (own, target)) in samples.iter().enumerate() {
        for i in 0..n {
            design[(r * n + i, i)] = 1.0;
            for k in 0..3 {
                design[(r * n + i, n + k)] = own[(i, k)];
            }
            y[(r * n + i, 0)] = target[i];
        }
    }
    let lin = least_squares(&design, &y, 0.0).map_err(|e| match e {
        Error::SingularRegressors(m) => Error::Collinear(format!("GNNHAR linear part: {m}")),
        other => other,
    })?;

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let bound = 1.0 / 3f64.sqrt();
    let mut params = GnnharParams {
        alpha: (0..n).map(|i| lin.coefficients[(i, 0)]).collect(),
        beta: [lin.coefficients[(n, 0)], lin.coefficients[(n + 1, 0)], lin.coefficients[(n + 2, 0)]],
        gamma: [0.0; 3],
        thetas: (0..config.layers)
            .map(|_| std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-bound..=bound))))
            .collect(),
        propagation: to_rows(&prop),
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut last_finite = f64::NAN;
    for _ in 0..config.epochs {
        let (loss, grad) = gnnhar_loss_and_grad(&params, &samples);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                last_finite_loss: last_finite,
            });
        }
        last_finite = loss;
        history.push(loss);
        let mut flat = params.flat();
        for (p, g) in flat.iter_mut().zip(grad.flat()) {
            *p -= config.step_size * g;
        }
        params.set_flat(&flat);
    }
    let (final_loss, _) = gnnhar_loss_and_grad(&params, &samples);
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            last_finite_loss: last_finite,
        });
    }
    for a in &mut params.alpha {
        *a *= scale;
    }
    Ok(GnnharFit {
        coefficients: HarCoefficients::Gnnhar(params),
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (GnnharParams, Vec<(DMatrix<f64>, DVector<f64>)>) {
        let adj = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.2, 0.5, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let params = GnnharParams {
            alpha: vec![0.1, -0.2, 0.05],
            beta: [0.4, 0.3, 0.2],
            gamma: [0.3, -0.2, 0.5],
            thetas: vec![
                [[0.5, -0.3, 0.2], [0.1, 0.6, -0.4], [-0.2, 0.3, 0.7]],
                [[0.4, 0.2, -0.1], [-0.3, 0.5, 0.2], [0.2, -0.1, 0.6]],
            ],
            propagation: to_rows(&symmetric_normalized(&adj).unwrap()),
        };
        let samples = (0..6)
            .map(|s| {
                let own = DMatrix::from_fn(3, 3, |i, k| 0.5 + ((s * 9 + i * 3 + k) as f64 * 0.71).sin());
                let y = DVector::from_fn(3, |i, _| 1.0 + ((s * 3 + i) as f64 * 1.3).cos());
                (own, y)
            })
            .collect();
        (params, samples)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (params, samples) = toy();
        let (_, grad) = gnnhar_loss_and_grad(&params, &samples);
        let base = params.flat();
        let analytic = grad.flat();
        let h = 1e-6;
        for k in 0..base.len() {
            let mut plus = params.clone();
            let mut v = base.clone();
            v[k] += h;
            plus.set_flat(&v);
            let mut minus = params.clone();
            v[k] -= 2.0 * h;
            minus.set_flat(&v);
            let fd = (gnnhar_loss_and_grad(&plus, &samples).0 - gnnhar_loss_and_grad(&minus, &samples).0) / (2.0 * h);
            let rel = (fd - analytic[k]).abs() / analytic[k].abs().max(1.0);
            assert!(rel < 1e-4, "param {k}: analytic {} fd {fd}", analytic[k]);
        }
    }

    #[test]
    fn zero_graph_terms_reduce_to_linear_part() {
        let (mut params, samples) = toy();
        params.gamma = [0.0; 3];
        for t in &mut params.thetas {
            *t = [[0.0; 3]; 3];
        }
        let own = &samples[0].0;
        let out = params.predict(own);
        for i in 0..3 {
            let lin = params.alpha[i] + (0..3).map(|k| params.beta[k] * own[(i, k)]).sum::<f64>();
            assert_eq!(out[i], lin);
        }
    }
}
