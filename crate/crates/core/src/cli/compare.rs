//! The multi-model comparison behind `volnet compare --config`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    default_block_length, dm_test, iterated_forecast, mafe_on_dates, mcs_test, write_forecast_csv, DcrnnForecaster,
    DmRow, EvalReport, HarForecaster, IteratedForecast, McsRow, Protocol,
};
use crate::har::{fit_gnnhar, fit_ghar, fit_har_ks, fit_har_panel, fit_vhar, GnnharConfig, WindowMode};
use crate::panel::RvPanel;
use crate::spillover::{panel_spillover, sparsify};
use crate::training::{calendar_panel, split_dates, train, CalendarMode, GraphMode, TrainConfig};

pub const MODEL_NAMES: [&str; 7] = ["dcrnn-rv", "stg-spillover", "har", "vhar", "har-ks", "ghar", "gnnhar"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub input: Option<PathBuf>,
    /// The first model is the reference in the DM tables.
    pub models: Vec<String>,
    /// `(look_back, horizon)` pairs.
    pub grid: Vec<(usize, usize)>,
    pub protocol: Protocol,
    pub confidence: f64,
    pub replications: usize,
    pub block_length: Option<usize>,
    pub gnnhar_layers: usize,
    pub gnnhar_epochs: usize,
    pub train: TrainConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            input: None,
            models: vec!["dcrnn-rv".into(), "stg-spillover".into()],
            grid: vec![(100, 1)],
            protocol: Protocol::Recursive,
            confidence: 0.9,
            replications: 1000,
            block_length: None,
            gnnhar_layers: 2,
            gnnhar_epochs: 200,
            train: TrainConfig::default(),
        }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models".into()));
        }
        if let Some(m) = self.models.iter().find(|m| !MODEL_NAMES.contains(&m.as_str())) {
            return Err(Error::Config(format!("unknown model {m:?}; expected one of {MODEL_NAMES:?}")));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("empty (look_back, horizon) grid".into()));
        }
        for &(l, h) in &self.grid {
            TrainConfig {
                look_back: l,
                horizon: h,
                ..self.train.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        };
        config.validate()?;
        Ok(config)
    }
}

fn test_segment(panel: &RvPanel, calendar: CalendarMode, config: &TrainConfig) -> Result<RvPanel> {
    let split = split_dates(panel, config.split)?;
    let cal = calendar_panel(panel, calendar)?;
    cal.slice_rows(cal.rows_in(&split.test))
}

/// Iterated test-split forecasts of one model at one `(l, h)`.
fn run_model(name: &str, config: &CompareConfig, panel: &RvPanel, l: usize, h: usize) -> Result<IteratedForecast> {
    let base = TrainConfig {
        look_back: l,
        horizon: h,
        ..config.train.clone()
    };
    match name {
        "dcrnn-rv" | "stg-spillover" => {
            let cfg = if name == "dcrnn-rv" {
                TrainConfig {
                    graph_mode: GraphMode::Dynamic,
                    calendar_mode: CalendarMode::Union,
                    ..base
                }
            } else {
                base.baseline()
            };
            let (trained, _) = train(&cfg, panel)?;
            let segment = test_segment(panel, cfg.calendar_mode, &cfg)?;
            iterated_forecast(&mut DcrnnForecaster::new(&trained), &segment, h, config.protocol)
        }
        _ => {
            // Linear and graph HAR baselines need complete rows.
            let split = split_dates(panel, base.split)?;
            let cal = calendar_panel(panel, CalendarMode::Intersection)?;
            let train_rows = cal.rows_in(&split.train);
            let data = cal.values().rows(train_rows.start, train_rows.len()).into_owned();
            let graph = || -> Result<DMatrix<f64>> {
                let sub = cal.slice_rows(train_rows.clone())?;
                Ok(sparsify(&panel_spillover(&sub, &base.spillover)?, base.spillover.keep_fraction)?.theta)
            };
            let coefficients = match name {
                "har" => fit_har_panel(&data, WindowMode::Overlapping)?,
                "vhar" => fit_vhar(&data, WindowMode::Overlapping)?,
                "har-ks" => fit_har_ks(&data, WindowMode::Overlapping)?,
                "ghar" => fit_ghar(&data, &graph()?)?,
                "gnnhar" => {
                    let gc = GnnharConfig {
                        layers: config.gnnhar_layers,
                        epochs: config.gnnhar_epochs,
                        seed: base.seed,
                        ..Default::default()
                    };
                    fit_gnnhar(&data, &graph()?, &gc)?.coefficients
                }
                other => return Err(Error::Config(format!("unknown model {other:?}"))),
            };
            let segment = cal.slice_rows(cal.rows_in(&split.test))?;
            let mut f = HarForecaster {
                coefficients: &coefficients,
                look_back: l,
            };
            iterated_forecast(&mut f, &segment, h, config.protocol)
        }
    }
}

fn common_dates(series: &[IteratedForecast]) -> Vec<NaiveDate> {
    let mut dates = series[0].dates.clone();
    for s in &series[1..] {
        dates.retain(|d| s.dates.binary_search(d).is_ok());
    }
    dates
}

fn report(config: &CompareConfig, panel: &RvPanel, l: usize, h: usize, series: &[IteratedForecast]) -> Result<EvalReport> {
    let dates = common_dates(series);
    if dates.is_empty() {
        return Err(Error::InsufficientObservations(format!("models share no test dates at l={l}, h={h}")));
    }
    let names = &config.models;
    let indices = panel.indices().to_vec();
    let per_model: Vec<_> = series.iter().map(|s| mafe_on_dates(s, &dates)).collect::<Result<_>>()?;
    let mafe = (0..indices.len()).map(|i| per_model.iter().map(|m| m[i]).collect()).collect();

    let mut dm = Vec::new();
    let mut mcs = Vec::new();
    for (c, index) in indices.iter().enumerate() {
        // Errors on common dates where this index is active.
        let rows: Vec<Vec<usize>> = series
            .iter()
            .map(|s| dates.iter().map(|d| s.dates.binary_search(d).expect("common date")).collect())
            .collect();
        let active: Vec<usize> = (0..dates.len()).filter(|&k| series[0].active[(rows[0][k], c)] > 0.0).collect();
        let errors: Vec<Vec<f64>> = series
            .iter()
            .zip(&rows)
            .map(|(s, r)| active.iter().map(|&k| s.forecasts[(r[k], c)] - s.truth[(r[k], c)]).collect())
            .collect();
        for m in 1..series.len() {
            let (statistic, p_value) = match dm_test(&errors[m], &errors[0], h) {
                Ok(r) => (r.statistic, r.p_value),
                Err(Error::Degenerate(_)) => (0.0, 0.5),
                Err(e) => return Err(e),
            };
            dm.push(DmRow {
                index: index.clone(),
                model0: names[m].clone(),
                model1: names[0].clone(),
                statistic,
                p_value,
                significant_5: p_value < 0.05,
                significant_10: p_value < 0.10,
            });
        }
        if series.len() >= 2 && active.len() >= 30 {
            let losses = DMatrix::from_fn(active.len(), series.len(), |k, m| errors[m][k].abs());
            let block = config.block_length.unwrap_or_else(|| default_block_length(active.len()));
            let r = mcs_test(&losses, config.confidence, config.replications, block, config.train.seed)?;
            for (m, name) in names.iter().enumerate() {
                mcs.push(McsRow {
                    index: index.clone(),
                    model: name.clone(),
                    p_value: r.p_values[m],
                    in_set: r.survivors.contains(&m),
                });
            }
        }
    }
    Ok(EvalReport {
        look_back: l,
        horizon: h,
        protocol: config.protocol,
        models: names.clone(),
        indices,
        mafe,
        dm,
        mcs,
    })
}

/// Trains or fits every model for every grid cell, writes one report
/// directory per cell, and returns the written files.
pub fn compare_pipeline(config: &CompareConfig, panel: &RvPanel, out: &Path, jobs: usize) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> = (0..config.grid.len())
        .flat_map(|g| (0..config.models.len()).map(move |m| (g, m)))
        .collect();
    let results: Vec<Mutex<Option<Result<IteratedForecast>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(tasks.len()).max(1) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(g, m)) = tasks.get(k) else { break };
                let (l, h) = config.grid[g];
                let r = run_model(&config.models[m], config, panel, l, h);
                *results[k].lock().expect("result slot") = Some(r);
            });
        }
    });
    let mut results: Vec<Result<IteratedForecast>> = results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("task ran"))
        .collect();

    let mut written = Vec::new();
    let n_models = config.models.len();
    for &(l, h) in &config.grid {
        let series = results
            .drain(..n_models)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::InvalidInput(format!("l={l}, h={h}: {e}")))?;
        let dir = out.join(format!("l{l}_h{h}"));
        let rep = report(config, panel, l, h, &series)?;
        rep.write_dir(&dir)?;
        for f in ["report.json", "mafe.csv", "dm.csv", "mcs.csv"] {
            written.push(dir.join(f));
        }
        for (name, s) in config.models.iter().zip(&series) {
            let p = dir.join(format!("forecasts_{name}.csv"));
            write_forecast_csv(s, panel.indices(), std::io::BufWriter::new(std::fs::File::create(&p)?))?;
            written.push(p);
        }
    }
    Ok(written)
}
