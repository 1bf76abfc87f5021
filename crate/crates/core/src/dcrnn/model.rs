//! Seq2Seq DCGRU encoder–decoder, masked MAE loss and exact gradients.

use std::borrow::Borrow;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::cell::{step_backward, step_forward, CellParams, StepCache};
use super::diffusion::transition_matrix;
use crate::error::{Error, Result};
use crate::panel::MaskedWindowPair;

pub const MODEL_FORMAT: &str = "volnet-dcgru";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcgruConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for DcgruConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 32,
            k_max: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcgruModel {
    pub config: DcgruConfig,
    pub encoder: Vec<CellParams>,
    pub decoder: Vec<CellParams>,
    /// Hidden → 1 projection shared by all nodes.
    pub proj_weight: DVector<f64>,
    pub proj_bias: f64,
}

fn uniform_fill(m: &mut DMatrix<f64>, scale: f64, rng: &mut ChaCha20Rng) {
    // Row-major fill so the draw order matches the serialized layout.
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = rng.gen_range(-scale..=scale);
        }
    }
}

impl DcgruModel {
    /// Zero-parameter model with the configured shapes.
    pub fn zeros(config: DcgruConfig) -> Result<Self> {
        if config.num_layers == 0 || config.hidden_dim == 0 || config.k_max == 0 {
            return Err(Error::Config("num_layers, hidden_dim and k_max must all be >= 1".into()));
        }
        let h = config.hidden_dim;
        let stack = |_| {
            (0..config.num_layers)
                .map(|l| CellParams::zeros(if l == 0 { 1 } else { h }, h, config.k_max))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            config,
            encoder: stack(()),
            decoder: stack(()),
            proj_weight: DVector::zeros(h),
            proj_bias: 0.0,
        })
    }

    /// Uniform(±fan_in^{-1/2}) weights, zero biases, seeded from `config.seed`.
    pub fn init(config: DcgruConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        for cell in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
            let s = (cell.gates.weights.nrows() as f64).powf(-0.5);
            uniform_fill(&mut cell.gates.weights, s, &mut rng);
            let s = (cell.candidate.weights.nrows() as f64).powf(-0.5);
            uniform_fill(&mut cell.candidate.weights, s, &mut rng);
        }
        let s = (config.hidden_dim as f64).powf(-0.5);
        for w in model.proj_weight.iter_mut() {
            *w = rng.gen_range(-s..=s);
        }
        Ok(model)
    }

    pub fn n_params(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(CellParams::n_params).sum::<usize>() + self.proj_weight.len() + 1
    }

    /// Every coefficient in a fixed order (column-major within each block).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for c in self.encoder.iter().chain(&self.decoder) {
            out.extend(c.gates.weights.iter());
            out.extend(c.gate_bias.iter());
            out.extend(c.candidate.weights.iter());
            out.extend(c.candidate_bias.iter());
        }
        out.extend(self.proj_weight.iter());
        out.push(self.proj_bias);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.n_params(), flat.len())));
        }
        let mut it = flat.iter().copied();
        for c in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            c.gates.weights.iter_mut().for_each(|v| *v = it.next().unwrap());
            c.gate_bias.iter_mut().for_each(|v| *v = it.next().unwrap());
            c.candidate.weights.iter_mut().for_each(|v| *v = it.next().unwrap());
            c.candidate_bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        self.proj_weight.iter_mut().for_each(|v| *v = it.next().unwrap());
        self.proj_bias = it.next().unwrap();
        Ok(())
    }

    /// Name of the parameter block holding flat position `idx`, for diagnostics.
    pub fn param_name(&self, mut idx: usize) -> String {
        for (part, cells) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (l, c) in cells.iter().enumerate() {
                for (name, len) in [
                    ("gate_weights", c.gates.weights.len()),
                    ("gate_bias", c.gate_bias.len()),
                    ("candidate_weights", c.candidate.weights.len()),
                    ("candidate_bias", c.candidate_bias.len()),
                ] {
                    if idx < len {
                        return format!("{part}[{l}].{name}[{idx}]");
                    }
                    idx -= len;
                }
            }
        }
        if idx < self.proj_weight.len() {
            return format!("projection.weight[{idx}]");
        }
        "projection.bias".into()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = ModelDoc {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config,
            encoder: self.encoder.iter().map(LayerDoc::from_cell).collect(),
            decoder: self.decoder.iter().map(LayerDoc::from_cell).collect(),
            projection_weight: self.proj_weight.iter().copied().collect(),
            projection_bias: self.proj_bias,
        };
        serde_json::to_value(doc).expect("model document serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_value(value.clone())?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unknown model format {:?}", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Parse(format!("unsupported model version {}", doc.version)));
        }
        let mut model = Self::zeros(doc.config)?;
        if doc.encoder.len() != model.encoder.len() || doc.decoder.len() != model.decoder.len() {
            return Err(Error::Shape("layer count does not match config".into()));
        }
        for (cell, layer) in model.encoder.iter_mut().zip(&doc.encoder).chain(model.decoder.iter_mut().zip(&doc.decoder)) {
            layer.fill(cell)?;
        }
        if doc.projection_weight.len() != doc.config.hidden_dim {
            return Err(Error::Shape("projection weight length does not match hidden_dim".into()));
        }
        model.proj_weight = DVector::from_vec(doc.projection_weight);
        model.proj_bias = doc.projection_bias;
        if model.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixDoc {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }

    fn fill(&self, target: &mut DMatrix<f64>) -> Result<()> {
        if (self.rows, self.cols) != target.shape() || self.data.len() != self.rows * self.cols {
            return Err(Error::Shape(format!(
                "matrix is {}x{}, expected {:?}",
                self.rows,
                self.cols,
                target.shape()
            )));
        }
        *target = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    input_dim: usize,
    gate_weights: MatrixDoc,
    gate_bias: Vec<f64>,
    candidate_weights: MatrixDoc,
    candidate_bias: Vec<f64>,
}

impl LayerDoc {
    fn from_cell(c: &CellParams) -> Self {
        Self {
            input_dim: c.input_dim,
            gate_weights: MatrixDoc::from_matrix(&c.gates.weights),
            gate_bias: c.gate_bias.iter().copied().collect(),
            candidate_weights: MatrixDoc::from_matrix(&c.candidate.weights),
            candidate_bias: c.candidate_bias.iter().copied().collect(),
        }
    }

    fn fill(&self, cell: &mut CellParams) -> Result<()> {
        if self.input_dim != cell.input_dim
            || self.gate_bias.len() != cell.gate_bias.len()
            || self.candidate_bias.len() != cell.candidate_bias.len()
        {
            return Err(Error::Shape("layer shape does not match config".into()));
        }
        self.gate_weights.fill(&mut cell.gates.weights)?;
        self.candidate_weights.fill(&mut cell.candidate.weights)?;
        cell.gate_bias = RowDVector::from_row_slice(&self.gate_bias);
        cell.candidate_bias = RowDVector::from_row_slice(&self.candidate_bias);
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    config: DcgruConfig,
    encoder: Vec<LayerDoc>,
    decoder: Vec<LayerDoc>,
    projection_weight: Vec<f64>,
    projection_bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    /// T_Y × N, standardized scale.
    pub y_hat: DMatrix<f64>,
    /// Top-layer hidden state after each decoder step.
    pub hidden_trace: Option<Vec<DMatrix<f64>>>,
}

/// A window with its per-day transition matrices precomputed.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    /// T_X × N masked inputs.
    pub x: DMatrix<f64>,
    /// T_Y × N masked targets.
    pub y: DMatrix<f64>,
    pub ey: DMatrix<f64>,
    /// One per day, T_X + T_Y in total.
    pub transitions: Vec<DMatrix<f64>>,
}

impl PreparedWindow {
    /// `graphs` are the masked adjacencies Ã_t for every day of the window.
    pub fn new(window: &MaskedWindowPair, graphs: &[DMatrix<f64>]) -> Result<Self> {
        let n = window.n_nodes();
        if graphs.len() != window.t_x() + window.t_y() {
            return Err(Error::Shape(format!(
                "expected {} graphs, got {}",
                window.t_x() + window.t_y(),
                graphs.len()
            )));
        }
        let transitions = graphs
            .iter()
            .map(|g| {
                if g.shape() != (n, n) {
                    return Err(Error::Shape(format!("graph is {:?}, expected {n}x{n}", g.shape())));
                }
                transition_matrix(g)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x: window.x.clone(),
            y: window.y.clone(),
            ey: window.ey.clone(),
            transitions,
        })
    }

    pub fn t_x(&self) -> usize {
        self.x.nrows()
    }

    pub fn t_y(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.x.ncols()
    }
}

struct Tape {
    encoder: Vec<Vec<StepCache>>,
    decoder: Vec<Vec<StepCache>>,
    top: Vec<DMatrix<f64>>,
}

fn column(m: &DMatrix<f64>, row: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(m.ncols(), 1, m.row(row).iter().copied())
}

fn run(model: &DcgruModel, w: &PreparedWindow, keep: bool) -> (DMatrix<f64>, Option<Tape>) {
    let n = w.n_nodes();
    let (tx, ty) = (w.t_x(), w.t_y());
    let hd = model.config.hidden_dim;
    let mut h: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, hd); model.config.num_layers];
    let mut tape = Tape {
        encoder: Vec::new(),
        decoder: Vec::new(),
        top: Vec::new(),
    };

    for t in 0..tx {
        let mut input = column(&w.x, t);
        let mut caches = Vec::new();
        for (l, cell) in model.encoder.iter().enumerate() {
            let (next, cache) = step_forward(cell, &input, &h[l], &w.transitions[t]);
            if keep {
                caches.push(cache);
            }
            input = next.clone();
            h[l] = next;
        }
        if keep {
            tape.encoder.push(caches);
        }
    }

    let mut y_hat = DMatrix::zeros(ty, n);
    let mut input = DMatrix::zeros(n, 1);
    for s in 0..ty {
        let mut caches = Vec::new();
        for (l, cell) in model.decoder.iter().enumerate() {
            let (next, cache) = step_forward(cell, &input, &h[l], &w.transitions[tx + s]);
            if keep {
                caches.push(cache);
            }
            input = next.clone();
            h[l] = next;
        }
        let top = h.last().unwrap();
        let out = top * &model.proj_weight;
        for i in 0..n {
            y_hat[(s, i)] = out[i] + model.proj_bias;
        }
        if keep {
            tape.decoder.push(caches);
            tape.top.push(top.clone());
        }
        input = column(&y_hat, s);
    }
    (y_hat, keep.then_some(tape))
}

/// Full encoder–decoder pass over one masked window.
pub fn seq2seq_forward(model: &DcgruModel, window: &MaskedWindowPair, graphs: &[DMatrix<f64>]) -> Result<ForecastOutput> {
    let prepared = PreparedWindow::new(window, graphs)?;
    forecast_prepared(model, &prepared, true)
}

pub fn forecast_prepared(model: &DcgruModel, window: &PreparedWindow, trace: bool) -> Result<ForecastOutput> {
    let (y_hat, tape) = run(model, window, trace);
    if y_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forecast".into()));
    }
    Ok(ForecastOutput {
        y_hat,
        hidden_trace: tape.map(|t| t.top),
    })
}

/// Σ|ỹ − ey⊙ŷ| / Σ ey.
pub fn masked_mae(y_hat: &DMatrix<f64>, y_tilde: &DMatrix<f64>, ey: &DMatrix<f64>) -> Result<f64> {
    if y_hat.shape() != y_tilde.shape() || ey.shape() != y_tilde.shape() {
        return Err(Error::Shape("prediction, target and mask shapes differ".into()));
    }
    let den: f64 = ey.sum();
    if den <= 0.0 {
        return Err(Error::NoActiveTargets);
    }
    let num: f64 = y_tilde.iter().zip(ey.iter()).zip(y_hat.iter()).map(|((y, e), p)| (y - e * p).abs()).sum();
    Ok(num / den)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of a loss with respect to ŷ back to every parameter, accumulated
/// into `grads`.
fn backward(model: &DcgruModel, w: &PreparedWindow, tape: &Tape, d_yhat: &DMatrix<f64>, grads: &mut DcgruModel) {
    let n = w.n_nodes();
    let hd = model.config.hidden_dim;
    let layers = model.config.num_layers;
    let mut dh: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, hd); layers];
    let mut d_feedback = DMatrix::zeros(n, 1);

    for s in (0..w.t_y()).rev() {
        let dy = column(d_yhat, s) + &d_feedback;
        grads.proj_weight += tape.top[s].transpose() * &dy;
        grads.proj_bias += dy.sum();
        dh[layers - 1] += &dy * model.proj_weight.transpose();
        for l in (0..layers).rev() {
            let (dx, dprev) = step_backward(&model.decoder[l], &tape.decoder[s][l], &dh[l], &mut grads.decoder[l]);
            dh[l] = dprev;
            if l > 0 {
                dh[l - 1] += dx;
            } else {
                d_feedback = dx;
            }
        }
    }
    for t in (0..w.t_x()).rev() {
        for l in (0..layers).rev() {
            let (dx, dprev) = step_backward(&model.encoder[l], &tape.encoder[t][l], &dh[l], &mut grads.encoder[l]);
            dh[l] = dprev;
            if l > 0 {
                dh[l - 1] += dx;
            }
        }
    }
}

/// Pooled masked MAE over a batch (Σ numerators / Σ ey) and its exact gradient.
pub fn loss_and_gradients<W: Borrow<PreparedWindow>>(model: &DcgruModel, batch: &[W]) -> Result<(f64, DcgruModel)> {
    let den: f64 = batch.iter().map(|w| w.borrow().ey.sum()).sum();
    if den <= 0.0 {
        return Err(Error::NoActiveTargets);
    }
    let mut grads = DcgruModel::zeros(model.config)?;
    let mut num = 0.0;
    for w in batch {
        let w = w.borrow();
        let (y_hat, tape) = run(model, w, true);
        let mut d = DMatrix::zeros(w.t_y(), w.n_nodes());
        for i in 0..w.t_y() {
            for j in 0..w.n_nodes() {
                let e = w.ey[(i, j)];
                let r = w.y[(i, j)] - e * y_hat[(i, j)];
                num += r.abs();
                d[(i, j)] = -e * sign(r) / den;
            }
        }
        backward(model, w, tape.as_ref().unwrap(), &d, &mut grads);
    }
    if let Some(idx) = grads.to_flat().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", model.param_name(idx))));
    }
    Ok((num / den, grads))
}

/// Pooled masked MAE without gradients.
pub fn batch_loss<W: Borrow<PreparedWindow>>(model: &DcgruModel, batch: &[W]) -> Result<f64> {
    let den: f64 = batch.iter().map(|w| w.borrow().ey.sum()).sum();
    if den <= 0.0 {
        return Err(Error::NoActiveTargets);
    }
    let mut num = 0.0;
    for w in batch {
        let w = w.borrow();
        let (y_hat, _) = run(model, w, false);
        num += w.y.iter().zip(w.ey.iter()).zip(y_hat.iter()).map(|((y, e), p)| (y - e * p).abs()).sum::<f64>();
    }
    let loss = num / den;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(loss)
}
