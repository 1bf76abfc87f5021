//! Diffusion-convolutional GRU cell with an explicit backward pass.

use nalgebra::{DMatrix, RowDVector};

use super::diffusion::{diffusion_stack, diffusion_stack_backward, DiffusionFilter};
use crate::error::{Error, Result};

/// One DCGRU layer: gate filter (reset ‖ update) and candidate filter, both
/// over the concatenated `[input ‖ hidden]` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `(K · (input + hidden)) × (2 · hidden)`; reset gate first.
    pub gates: DiffusionFilter,
    pub gate_bias: RowDVector<f64>,
    /// `(K · (input + hidden)) × hidden`
    pub candidate: DiffusionFilter,
    pub candidate_bias: RowDVector<f64>,
}

impl CellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, k_max: usize) -> Self {
        let c = input_dim + hidden_dim;
        Self {
            input_dim,
            hidden_dim,
            gates: DiffusionFilter::zeros(k_max, c, 2 * hidden_dim),
            gate_bias: RowDVector::zeros(2 * hidden_dim),
            candidate: DiffusionFilter::zeros(k_max, c, hidden_dim),
            candidate_bias: RowDVector::zeros(hidden_dim),
        }
    }

    pub fn k_max(&self) -> usize {
        self.gates.k_max
    }

    pub fn n_params(&self) -> usize {
        self.gates.weights.len() + self.gate_bias.len() + self.candidate.weights.len() + self.candidate_bias.len()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Values kept from a forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    transition: DMatrix<f64>,
    h_prev: DMatrix<f64>,
    gate_stack: DMatrix<f64>,
    cand_stack: DMatrix<f64>,
    r: DMatrix<f64>,
    u: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn concat(x: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, x.ncols() + h.ncols());
    out.columns_mut(0, x.ncols()).copy_from(x);
    out.columns_mut(x.ncols(), h.ncols()).copy_from(h);
    out
}

fn add_row(m: &mut DMatrix<f64>, row: &RowDVector<f64>) {
    for mut r in m.row_iter_mut() {
        r += row;
    }
}

/// Forward step given a precomputed transition matrix; returns `h_t` and the cache.
pub fn step_forward(params: &CellParams, x: &DMatrix<f64>, h_prev: &DMatrix<f64>, transition: &DMatrix<f64>) -> (DMatrix<f64>, StepCache) {
    let hd = params.hidden_dim;
    let k = params.k_max();
    let xh = concat(x, h_prev);
    let gate_stack = diffusion_stack(transition, &xh, k);
    let mut g = &gate_stack * &params.gates.weights;
    add_row(&mut g, &params.gate_bias);
    g.apply(|v| *v = sigmoid(*v));
    let r = g.columns(0, hd).into_owned();
    let u = g.columns(hd, hd).into_owned();

    let xrh = concat(x, &r.component_mul(h_prev));
    let cand_stack = diffusion_stack(transition, &xrh, k);
    let mut c = &cand_stack * &params.candidate.weights;
    add_row(&mut c, &params.candidate_bias);
    c.apply(|v| *v = v.tanh());

    let h = u.component_mul(h_prev) + (u.map(|v| 1.0 - v)).component_mul(&c);
    (
        h,
        StepCache {
            transition: transition.clone(),
            h_prev: h_prev.clone(),
            gate_stack,
            cand_stack,
            r,
            u,
            c,
        },
    )
}

/// One DCGRU update on an already-masked adjacency.
pub fn dcgru_step(x: &DMatrix<f64>, h_prev: &DMatrix<f64>, params: &CellParams, adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if x.ncols() != params.input_dim || h_prev.shape() != (n, params.hidden_dim) || adjacency.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "x {:?}, h {:?}, adjacency {:?} inconsistent with cell ({} in, {} hidden)",
            x.shape(),
            h_prev.shape(),
            adjacency.shape(),
            params.input_dim,
            params.hidden_dim
        )));
    }
    let p = super::diffusion::transition_matrix(adjacency)?;
    let (h, _) = step_forward(params, x, h_prev, &p);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("DCGRU hidden state".into()));
    }
    Ok(h)
}

/// Backward through one step. Accumulates parameter gradients into `grads`
/// and returns `(dx, dh_prev)`.
pub fn step_backward(params: &CellParams, cache: &StepCache, dh: &DMatrix<f64>, grads: &mut CellParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let hd = params.hidden_dim;
    let cin = params.input_dim;
    let cc = cin + hd;
    let k = params.k_max();
    let StepCache {
        transition,
        h_prev,
        gate_stack,
        cand_stack,
        r,
        u,
        c,
    } = cache;

    let du = dh.component_mul(&(h_prev - c));
    let dc = dh.component_mul(&u.map(|v| 1.0 - v));
    let mut dh_prev = dh.component_mul(u);

    let dc_pre = dc.zip_map(c, |g, cv| g * (1.0 - cv * cv));
    grads.candidate.weights += cand_stack.transpose() * &dc_pre;
    grads.candidate_bias += dc_pre.row_sum();
    let d_cand_stack = &dc_pre * params.candidate.weights.transpose();
    let dxrh = diffusion_stack_backward(transition, &d_cand_stack, k, cc);
    let mut dx = dxrh.columns(0, cin).into_owned();
    let d_rh = dxrh.columns(cin, hd);
    let dr = d_rh.component_mul(h_prev);
    dh_prev += d_rh.component_mul(r);

    let n = dh.nrows();
    let mut dg = DMatrix::zeros(n, 2 * hd);
    dg.columns_mut(0, hd).copy_from(&dr.zip_map(r, |g, s| g * s * (1.0 - s)));
    dg.columns_mut(hd, hd).copy_from(&du.zip_map(u, |g, s| g * s * (1.0 - s)));
    grads.gates.weights += gate_stack.transpose() * &dg;
    grads.gate_bias += dg.row_sum();
    let d_gate_stack = &dg * params.gates.weights.transpose();
    let dxh = diffusion_stack_backward(transition, &d_gate_stack, k, cc);
    dx += dxh.columns(0, cin);
    dh_prev += dxh.columns(cin, hd);
    (dx, dh_prev)
}
