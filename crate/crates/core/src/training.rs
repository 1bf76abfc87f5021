//! Windowing, per-window graphs, and the optimization loop for the
//! dynamic-graph forecaster and its static-graph ablation.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dcrnn::{batch_loss, loss_and_gradients, DcgruConfig, DcgruModel, PreparedWindow};
use crate::error::{Error, Result};
use crate::panel::{build_window_pair_at, fit_standardizer, MaskedWindowPair, RvPanel, StandardizerStats};
use crate::spillover::{batch_adjacency, panel_spillover, sparsify, GraphEstimate, SpilloverGraph, SpilloverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalendarMode {
    Union,
    Intersection,
}

impl FromStr for GraphMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(Self::Dynamic),
            "static" => Ok(Self::Static),
            other => Err(Error::Config(format!("unknown graph mode {other:?}"))),
        }
    }
}

impl FromStr for CalendarMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(Self::Union),
            "intersection" => Ok(Self::Intersection),
            other => Err(Error::Config(format!("unknown calendar mode {other:?}"))),
        }
    }
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dynamic => "dynamic",
            Self::Static => "static",
        })
    }
}

impl fmt::Display for CalendarMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Union => "union",
            Self::Intersection => "intersection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub look_back: usize,
    pub horizon: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub step_size: f64,
    /// Epochs without validation improvement before the step size is halved.
    pub plateau: usize,
    /// Chronological train/validation/test fractions.
    pub split: [f64; 3],
    pub graph_mode: GraphMode,
    pub calendar_mode: CalendarMode,
    pub spillover: SpilloverSettings,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub diffusion_k: usize,
    pub seed: u64,
    /// Panel CSV used by the command line when `--input` is not given.
    pub input: Option<std::path::PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            look_back: 100,
            horizon: 1,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            step_size: 1e-2,
            plateau: 5,
            split: [0.7, 0.1, 0.2],
            graph_mode: GraphMode::Dynamic,
            calendar_mode: CalendarMode::Union,
            spillover: SpilloverSettings::default(),
            num_layers: 2,
            hidden_dim: 32,
            diffusion_k: 2,
            seed: 0,
            input: None,
        }
    }
}

impl TrainConfig {
    /// The static-graph, intersection-calendar baseline with otherwise equal settings.
    pub fn baseline(&self) -> Self {
        Self {
            graph_mode: GraphMode::Static,
            calendar_mode: CalendarMode::Intersection,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.look_back < 25 {
            return Err(Error::Config(format!("look_back must be >= 25, got {}", self.look_back)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("step_size must be positive".into()));
        }
        if self.split.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {:?} must be in [0,1] and sum to 1", self.split)));
        }
        if !(0.0..=1.0).contains(&self.spillover.keep_fraction) {
            return Err(Error::Config("keep_fraction must lie in [0, 1]".into()));
        }
        if self.spillover.p == 0 || self.spillover.horizon == 0 {
            return Err(Error::Config("spillover p and horizon must be >= 1".into()));
        }
        self.model_config().map(|_| ())
    }

    pub fn model_config(&self) -> Result<DcgruConfig> {
        if self.num_layers == 0 || self.hidden_dim == 0 || self.diffusion_k == 0 {
            return Err(Error::Config("num_layers, hidden_dim and diffusion_k must be >= 1".into()));
        }
        Ok(DcgruConfig {
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            k_max: self.diffusion_k,
            seed: self.seed,
        })
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        };
        config.validate()?;
        Ok(config)
    }
}

/// Chronological date ranges (end-exclusive) for the three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDates {
    pub train: Range<NaiveDate>,
    pub val: Range<NaiveDate>,
    pub test: Range<NaiveDate>,
}

/// Splits the rows of `panel` by fraction and returns the matching date ranges,
/// so that different calendars of the same data share split boundaries.
pub fn split_dates(panel: &RvPanel, fractions: [f64; 3]) -> Result<SplitDates> {
    let t = panel.n_rows();
    let n_train = (fractions[0] * t as f64).round() as usize;
    let n_val = (fractions[1] * t as f64).round() as usize;
    if n_train == 0 || n_train + n_val >= t {
        return Err(Error::PanelTooShort(format!("{t} rows cannot be split as {fractions:?}")));
    }
    let d = panel.dates();
    let end = d[t - 1].checked_add_days(Days::new(1)).expect("date in range");
    Ok(SplitDates {
        train: d[0]..d[n_train],
        val: d[n_train]..d[n_train + n_val],
        test: d[n_train + n_val]..end,
    })
}

/// The panel seen by a model under the given calendar.
pub fn calendar_panel(panel: &RvPanel, mode: CalendarMode) -> Result<RvPanel> {
    match mode {
        CalendarMode::Union => Ok(panel.clone()),
        CalendarMode::Intersection => panel.intersection(),
    }
}

/// Stride-1 windows over `rows` of the panel.
pub fn windows_in(panel: &RvPanel, stats: &StandardizerStats, rows: Range<usize>, l: usize, h: usize) -> Result<Vec<MaskedWindowPair>> {
    if rows.len() < l + h {
        return Err(Error::PanelTooShort(format!(
            "{} rows, need look_back + horizon = {}",
            rows.len(),
            l + h
        )));
    }
    (rows.start..=rows.end - l - h)
        .map(|s| build_window_pair_at(panel, stats, s, l, h))
        .collect()
}

/// All stride-1 windows of the panel; intersection mode first drops rows
/// where any market is missing.
pub fn make_windows(panel: &RvPanel, stats: &StandardizerStats, l: usize, h: usize, mode: CalendarMode) -> Result<Vec<MaskedWindowPair>> {
    let p = calendar_panel(panel, mode)?;
    windows_in(&p, stats, 0..p.n_rows(), l, h)
}

/// `θ ⊙ (e_t e_tᵀ)` for each day of the window.
pub fn masked_graphs(theta: &DMatrix<f64>, window: &MaskedWindowPair) -> Vec<DMatrix<f64>> {
    (0..window.t_x() + window.t_y())
        .map(|t| theta.component_mul(&window.adjacency_mask(t)))
        .collect()
}

/// Supplies the adjacency for each window: per-window estimates in dynamic
/// mode (falling back to the most recent valid graph, then the training
/// graph), the training graph in static mode.
#[derive(Debug, Clone)]
pub struct GraphSource {
    pub mode: GraphMode,
    pub settings: SpilloverSettings,
    pub training_graph: SpilloverGraph,
    last_valid: Option<DMatrix<f64>>,
    pub fallbacks: usize,
}

impl GraphSource {
    pub fn new(mode: GraphMode, settings: SpilloverSettings, training_graph: SpilloverGraph) -> Self {
        Self {
            mode,
            settings,
            training_graph,
            last_valid: None,
            fallbacks: 0,
        }
    }

    /// Fits the whole-training-range graph (sparsified) on `panel`'s rows in `train`.
    pub fn fit(mode: GraphMode, settings: SpilloverSettings, panel: &RvPanel, train: &Range<NaiveDate>) -> Result<Self> {
        let rows = panel.rows_in(train);
        let sub = panel.slice_rows(rows)?;
        let graph = sparsify(&panel_spillover(&sub, &settings)?, settings.keep_fraction)?;
        Ok(Self::new(mode, settings, graph))
    }

    fn resolve(&mut self, estimate: GraphEstimate) -> DMatrix<f64> {
        match estimate {
            GraphEstimate::Graph(g) => {
                self.last_valid = Some(g.theta.clone());
                g.theta
            }
            GraphEstimate::Fallback { .. } => {
                self.fallbacks += 1;
                self.last_valid.clone().unwrap_or_else(|| self.training_graph.theta.clone())
            }
        }
    }

    /// Graph for a window whose inputs are `rows` of `panel`.
    pub fn for_rows(&mut self, panel: &RvPanel, rows: Range<usize>) -> Result<DMatrix<f64>> {
        match self.mode {
            GraphMode::Static => Ok(self.training_graph.theta.clone()),
            GraphMode::Dynamic => {
                let est = batch_adjacency(panel, rows, &self.settings)?;
                Ok(self.resolve(est))
            }
        }
    }

    /// Graph for a raw look-back block (rows × N) with per-row completeness.
    pub fn for_block(&mut self, values: &DMatrix<f64>, complete: &[bool]) -> Result<DMatrix<f64>> {
        match self.mode {
            GraphMode::Static => Ok(self.training_graph.theta.clone()),
            GraphMode::Dynamic => {
                let est = crate::spillover::block_adjacency(values, complete, &self.settings)?;
                Ok(self.resolve(est))
            }
        }
    }
}

/// Windows with their per-day masked graphs, in chronological order.
pub fn prepare_windows(panel: &RvPanel, windows: &[MaskedWindowPair], source: &mut GraphSource) -> Result<Vec<PreparedWindow>> {
    windows
        .iter()
        .map(|w| {
            let theta = source.for_rows(panel, w.start_row..w.start_row + w.t_x())?;
            PreparedWindow::new(w, &masked_graphs(&theta, w))
        })
        .collect()
}

/// Adam state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, step_size: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, optimizer state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient {i}")));
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= step_size * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Patience-based early stopping on a validation series.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records one epoch's validation loss; `true` means stop now.
    pub fn update(&mut self, epoch: usize, val: f64) -> bool {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.since_best >= self.patience
        }
    }

    pub fn improved(&self) -> bool {
        self.since_best == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub adjacency_fallbacks: usize,
    /// Excluded from the written summary so reruns produce identical files.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            w.write_record([(i + 1).to_string(), t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("history serializes")
    }
}

/// Everything needed to forecast with a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub model: DcgruModel,
    pub stats: StandardizerStats,
    pub training_graph: SpilloverGraph,
    pub split: SplitDates,
}

impl TrainedModel {
    pub fn indices(&self) -> &[String] {
        &self.stats.indices
    }

    pub fn graph_source(&self) -> GraphSource {
        GraphSource::new(self.config.graph_mode, self.config.spillover, self.training_graph.clone())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": serde_json::to_value(&self.config).expect("config serializes"),
            "split": serde_json::to_value(&self.split).expect("split serializes"),
            "standardizer": self.stats.to_json(),
            "training_graph": self.training_graph.to_json(),
            "model": self.model.to_json(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let field = |k: &str| value.get(k).ok_or_else(|| Error::Parse(format!("trained model is missing {k:?}")));
        let config: TrainConfig = serde_json::from_value(field("config")?.clone())?;
        let split: SplitDates = serde_json::from_value(field("split")?.clone())?;
        let training_graph = SpilloverGraph::from_json(field("training_graph")?)?;
        let stats = StandardizerStats::from_json(field("standardizer")?, &training_graph.indices)?;
        let model = DcgruModel::from_json(field("model")?)?;
        Ok(Self {
            config,
            model,
            stats,
            training_graph,
            split,
        })
    }
}

/// Trains on the chronological training split, early-stopping on validation.
pub fn train(config: &TrainConfig, panel: &RvPanel) -> Result<(TrainedModel, TrainHistory)> {
    config.validate()?;
    let started = Instant::now();
    let split = split_dates(panel, config.split)?;
    let cal = calendar_panel(panel, config.calendar_mode)?;
    let (l, h) = (config.look_back, config.horizon);

    let train_rows = cal.rows_in(&split.train);
    let val_rows = cal.rows_in(&split.val);
    for (name, rows) in [("training", &train_rows), ("validation", &val_rows)] {
        if rows.len() < l + h {
            return Err(Error::PanelTooShort(format!(
                "{name} split has {} rows, need look_back + horizon = {}",
                rows.len(),
                l + h
            )));
        }
    }
    let stats = fit_standardizer(&cal, split.train.clone())?;
    let mut source = GraphSource::fit(config.graph_mode, config.spillover, &cal, &split.train)?;
    let train_w = windows_in(&cal, &stats, train_rows, l, h)?;
    let val_w = windows_in(&cal, &stats, val_rows, l, h)?;
    let train_set = prepare_windows(&cal, &train_w, &mut source)?;
    let val_set = prepare_windows(&cal, &val_w, &mut source)?;

    let mut model = DcgruModel::init(config.model_config()?)?;
    let mut params = model.to_flat();
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience.max(1));
    let mut best = model.clone();
    let mut step = config.step_size;
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        adjacency_fallbacks: source.fallbacks,
        wall_clock_secs: 0.0,
    };
    let mut last_finite = f64::NAN;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut num, mut den) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedWindow> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch_den: f64 = batch.iter().map(|w| w.ey.sum()).sum();
            if batch_den == 0.0 {
                continue;
            }
            let (loss, grads) = match loss_and_gradients(&model, &batch) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { last_finite_loss: last_finite }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Divergence { last_finite_loss: last_finite });
            }
            last_finite = loss;
            num += loss * batch_den;
            den += batch_den;
            optimizer_step(&mut params, &grads.to_flat(), &mut adam, step)?;
            model.set_flat(&params)?;
        }
        let val = match batch_loss(&model, &val_set) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { last_finite_loss: last_finite }),
            Err(e) => return Err(e),
        };
        history.train_loss.push(if den > 0.0 { num / den } else { f64::NAN });
        history.val_loss.push(val);
        let stop = stopper.update(epoch, val);
        if stopper.improved() {
            best = model.clone();
        } else if config.plateau > 0 && stopper.since_best % config.plateau == 0 {
            step *= 0.5;
        }
        if stop {
            history.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch;
    history.adjacency_fallbacks = source.fallbacks;
    history.wall_clock_secs = started.elapsed().as_secs_f64();
    let trained = TrainedModel {
        config: config.clone(),
        model: best,
        stats,
        training_graph: source.training_graph,
        split,
    };
    Ok((trained, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_step_size() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        optimizer_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        assert!((1.0 - p[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.3, -2.0];
        let mut s = AdamState::new(2);
        optimizer_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![0.3, -2.0]);
        assert!(optimizer_step(&mut p, &[f64::NAN, 0.0], &mut s, 0.1).is_err());
    }

    #[test]
    fn early_stopping_with_patience_two() {
        let mut e = EarlyStopping::new(2);
        assert!(!e.update(1, 1.0));
        assert!(!e.update(2, 1.1));
        assert!(e.update(3, 1.2));
        assert_eq!(e.best_epoch, 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            look_back: 10,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            split: [0.5, 0.1, 0.1],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let toml_text = "look_back = 50\nhorizon = 5\ngraph_mode = \"static\"\n[spillover]\np = 2\n";
        let c: TrainConfig = toml::from_str(toml_text).unwrap();
        assert_eq!((c.look_back, c.horizon, c.graph_mode, c.spillover.p), (50, 5, GraphMode::Static, 2));
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
    }
}
