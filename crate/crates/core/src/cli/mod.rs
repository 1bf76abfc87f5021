//! Command-line entry point.

mod compare;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    adf_test, default_block_length, descriptive_stats, dm_test, iterated_forecast, mafe, mcs_test, read_series,
    write_forecast_csv, DcrnnForecaster, Protocol,
};
use crate::panel::{load_panel, RvPanel, ValueKind};
use crate::spillover::{net_spillover, omega, panel_spillover, sparsify, SpilloverSettings};
use crate::synth::{gen_var_panel, SynthSpec};
use crate::training::{calendar_panel, train, CalendarMode, GraphMode, TrainConfig, TrainedModel};

pub use compare::{compare_pipeline, CompareConfig, MODEL_NAMES};

pub const SEED_ENV: &str = "VOLNET_SEED";

#[derive(Debug, Parser)]
#[command(name = "volnet", version, about = "Dynamic spillover-graph realized-volatility forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Seed override (takes precedence over VOLNET_SEED and config files).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `compare`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Descriptive statistics, ADF tests and inactivity rates per index.
    Stats(StatsArgs),
    /// Whole-sample spillover graph, edge list and net spillovers.
    Spillover(SpilloverArgs),
    /// Train the diffusion-convolutional forecaster.
    Train(TrainArgs),
    /// Iterated forecasts from a trained model.
    Forecast(ForecastArgs),
    /// Iterated forecasts plus per-index MAFE.
    Evaluate(ForecastArgs),
    /// Pairwise tests on loss files, or the full model comparison.
    Compare(CompareArgs),
    /// Generate a synthetic panel.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "stats")]
    pub out: PathBuf,
    /// Input cells hold realized variance instead of its square root.
    #[arg(long)]
    pub variance: bool,
    #[arg(long)]
    pub max_lags: Option<usize>,
    /// Other markets that must be active for a day to count towards ω.
    #[arg(long, default_value_t = 5)]
    pub threshold: usize,
}

#[derive(Debug, Args)]
pub struct SpilloverArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub variance: bool,
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0.5)]
    pub keep: f64,
    #[arg(long, default_value = "graph.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub variance: bool,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub graph_mode: Option<GraphModeArg>,
    #[arg(long, value_enum)]
    pub calendar: Option<CalendarArg>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// Trained model document written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub variance: bool,
    #[arg(long, default_value = "forecast")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "recursive")]
    pub protocol: ProtocolArg,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Loss or forecast-error files (one value per row, last column).
    #[arg(long, num_args = 1..)]
    pub losses: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub test: Option<TestArg>,
    /// Forecast horizon for the DM long-run variance.
    #[arg(long, default_value_t = 1)]
    pub h: usize,
    #[arg(long, default_value_t = 0.9)]
    pub confidence: f64,
    #[arg(long, default_value_t = 1000)]
    pub replications: usize,
    #[arg(long)]
    pub block_length: Option<usize>,
    /// Comparison config (models, grid, training settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub variance: bool,
    #[arg(long, default_value = "compare")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "panel.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphModeArg {
    Dynamic,
    Static,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CalendarArg {
    Union,
    Intersection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    Recursive,
    RollingOrigin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TestArg {
    Dm,
    Mcs,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Recursive => Protocol::Recursive,
            ProtocolArg::RollingOrigin => Protocol::RollingOrigin,
        }
    }
}

/// Digest of one file, as recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector; re-running it reproduces the outputs.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_secs: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Collects what a run read and wrote, then writes the manifest.
struct Run {
    command: &'static str,
    argv: Vec<String>,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
    seed: Option<u64>,
}

impl Run {
    fn new(command: &'static str, argv: &[String]) -> Self {
        Self {
            command,
            argv: argv.to_vec(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
        }
    }

    fn finish(self, dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.into(),
            argv: self.argv,
            config: self.config,
            inputs: digests(&self.inputs)?,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            outputs: digests(&self.outputs)?,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(&dir.join(MANIFEST_FILE), &serde_json::to_value(manifest)?)
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `--out` naming a file (has an extension) or a directory.
fn out_target(out: &Path, default_file: &str) -> Result<(PathBuf, PathBuf)> {
    let (dir, file) = if out.extension().is_some() {
        let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        (dir, out.to_path_buf())
    } else {
        (out.to_path_buf(), out.join(default_file))
    };
    std::fs::create_dir_all(&dir)?;
    Ok((dir, file))
}

fn out_dir(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_panel(path: &Path, variance: bool) -> Result<RvPanel> {
    let kind = if variance { ValueKind::Variance } else { ValueKind::Rooted };
    load_panel(open(path)?, kind)
}

/// Flag, then environment, then config.
fn resolve_seed(flag: Option<u64>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(config),
    }
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            1
        }
    }
}

pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Stats(a) => cmd_stats(&a, argv),
        Command::Spillover(a) => cmd_spillover(&a, argv),
        Command::Train(a) => cmd_train(&a, seed, argv),
        Command::Forecast(a) => cmd_forecast(&a, false, argv),
        Command::Evaluate(a) => cmd_forecast(&a, true, argv),
        Command::Compare(a) => cmd_compare(&a, seed, cli.jobs, argv),
        Command::Synth(a) => cmd_synth(&a, seed, argv),
    }
}

#[derive(Serialize)]
struct StatsRow {
    index: String,
    observed: usize,
    mean: f64,
    std_dev: f64,
    skewness: f64,
    excess_kurtosis: f64,
    adf_statistic: f64,
    adf_p_value: f64,
    adf_lags: usize,
    omega: f64,
}

fn cmd_stats(a: &StatsArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("stats", argv);
    let panel = read_panel(&a.input, a.variance)?;
    run.inputs.push(a.input.clone());
    let dir = out_dir(&a.out)?;
    let omegas = omega(&panel, a.threshold)?;
    let mut rows = Vec::new();
    for (c, name) in panel.indices().iter().enumerate() {
        let series: Vec<f64> = (0..panel.n_rows()).filter_map(|r| panel.value(r, c)).collect();
        let d = descriptive_stats(&series)?;
        let adf = adf_test(&series, a.max_lags)?;
        rows.push(StatsRow {
            index: name.clone(),
            observed: series.len(),
            mean: d.mean,
            std_dev: d.std_dev,
            skewness: d.skewness,
            excess_kurtosis: d.excess_kurtosis,
            adf_statistic: adf.statistic,
            adf_p_value: adf.p_value,
            adf_lags: adf.lags,
            omega: omegas[c],
        });
    }
    let csv_path = dir.join("stats.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let json_path = dir.join("stats.json");
    write_json(&json_path, &serde_json::to_value(&rows)?)?;
    run.outputs = vec![csv_path, json_path];
    run.config = serde_json::json!({ "max_lags": a.max_lags, "threshold": a.threshold, "variance": a.variance });
    run.finish(&dir)
}

fn cmd_spillover(a: &SpilloverArgs, argv: &[String]) -> Result<()> {
    let mut run = Run::new("spillover", argv);
    if !(0.0..=1.0).contains(&a.keep) {
        return Err(Error::Config(format!("--keep {} outside [0, 1]", a.keep)));
    }
    let panel = read_panel(&a.input, a.variance)?;
    run.inputs.push(a.input.clone());
    let settings = SpilloverSettings {
        p: a.p,
        horizon: a.horizon,
        keep_fraction: a.keep,
        ..Default::default()
    };
    let full = panel_spillover(&panel, &settings)?;
    let sparse = sparsify(&full, a.keep)?;
    let (dir, file) = out_target(&a.out, "graph.json")?;
    let mut doc = full.to_json();
    doc["keep_fraction"] = serde_json::json!(a.keep);
    doc["adjacency"] = serde_json::to_value(
        (0..sparse.n_nodes())
            .map(|i| sparse.theta.row(i).iter().copied().collect::<Vec<f64>>())
            .collect::<Vec<_>>(),
    )?;
    doc["net_spillover"] = serde_json::to_value(net_spillover(&full))?;
    write_json(&file, &doc)?;
    let edges = dir.join("edges.csv");
    sparse.write_edge_list(BufWriter::new(File::create(&edges)?))?;
    run.outputs = vec![file, edges];
    run.config = serde_json::to_value(settings)?;
    run.finish(&dir)
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>, argv: &[String]) -> Result<()> {
    let mut run = Run::new("train", argv);
    let mut config = match &a.config {
        Some(p) => {
            run.inputs.push(p.clone());
            TrainConfig::from_path(p)?
        }
        None => TrainConfig::default(),
    };
    config.seed = resolve_seed(seed, config.seed)?;
    if let Some(g) = a.graph_mode {
        config.graph_mode = match g {
            GraphModeArg::Dynamic => GraphMode::Dynamic,
            GraphModeArg::Static => GraphMode::Static,
        };
    }
    if let Some(c) = a.calendar {
        config.calendar_mode = match c {
            CalendarArg::Union => CalendarMode::Union,
            CalendarArg::Intersection => CalendarMode::Intersection,
        };
    }
    let input = a
        .input
        .clone()
        .or_else(|| config.input.clone())
        .ok_or_else(|| Error::Config("no input panel: pass --input or set `input` in the config".into()))?;
    let panel = read_panel(&input, a.variance)?;
    run.inputs.push(input);
    let (trained, history) = train(&config, &panel)?;
    let dir = out_dir(&a.out)?;
    let model_path = dir.join("model.json");
    write_json(&model_path, &trained.to_json())?;
    let hist_csv = dir.join("history.csv");
    history.write_csv(BufWriter::new(File::create(&hist_csv)?))?;
    let hist_json = dir.join("history.json");
    write_json(&hist_json, &history.to_json())?;
    run.outputs = vec![model_path, hist_csv, hist_json];
    run.seed = Some(config.seed);
    run.config = serde_json::to_value(&config)?;
    run.finish(&dir)
}

fn cmd_forecast(a: &ForecastArgs, with_mafe: bool, argv: &[String]) -> Result<()> {
    let mut run = Run::new(if with_mafe { "evaluate" } else { "forecast" }, argv);
    let doc: serde_json::Value = serde_json::from_reader(open(&a.model)?)?;
    let trained = TrainedModel::from_json(&doc)?;
    run.inputs.push(a.model.clone());
    let panel = read_panel(&a.input, a.variance)?;
    run.inputs.push(a.input.clone());
    if panel.indices() != trained.indices() {
        return Err(Error::InvalidInput("panel indices differ from the model's".into()));
    }
    let cal = calendar_panel(&panel, trained.config.calendar_mode)?;
    let rows = cal.rows_in(&trained.split.test);
    if rows.is_empty() {
        return Err(Error::PanelTooShort("no rows in the model's test range".into()));
    }
    let segment = cal.slice_rows(rows)?;
    let protocol: Protocol = a.protocol.into();
    let mut forecaster = DcrnnForecaster::new(&trained);
    let series = iterated_forecast(&mut forecaster, &segment, trained.config.horizon, protocol)?;
    let dir = out_dir(&a.out)?;
    let fc_path = dir.join("forecasts.csv");
    write_forecast_csv(&series, trained.indices(), BufWriter::new(File::create(&fc_path)?))?;
    run.outputs.push(fc_path);
    if with_mafe {
        let mut w = csv::Writer::from_path(dir.join("mafe.csv"))?;
        w.write_record(["index", "mafe"])?;
        let mut values = serde_json::Map::new();
        for (c, name) in trained.indices().iter().enumerate() {
            let fc: Vec<f64> = series.forecasts.column(c).iter().copied().collect();
            let tr: Vec<f64> = series.truth.column(c).iter().copied().collect();
            let ac: Vec<bool> = series.active.column(c).iter().map(|&v| v > 0.0).collect();
            let m = mafe(&fc, &tr, &ac)?;
            w.write_record([name.clone(), m.to_string()])?;
            values.insert(name.clone(), serde_json::json!(m));
        }
        w.flush()?;
        let json_path = dir.join("evaluate.json");
        write_json(
            &json_path,
            &serde_json::json!({
                "protocol": protocol,
                "horizon": trained.config.horizon,
                "look_back": trained.config.look_back,
                "forecasts": series.dates.len(),
                "adjacency_fallbacks": forecaster.fallbacks(),
                "mafe": values,
            }),
        )?;
        run.outputs.push(dir.join("mafe.csv"));
        run.outputs.push(json_path);
    }
    run.config = serde_json::json!({ "protocol": protocol });
    run.seed = Some(trained.config.seed);
    run.finish(&dir)
}

fn cmd_compare(a: &CompareArgs, seed: Option<u64>, jobs: usize, argv: &[String]) -> Result<()> {
    let mut run = Run::new("compare", argv);
    if let Some(cfg_path) = &a.config {
        let mut config = CompareConfig::from_path(cfg_path)?;
        run.inputs.push(cfg_path.clone());
        config.train.seed = resolve_seed(seed, config.train.seed)?;
        let input = a
            .input
            .clone()
            .or_else(|| config.input.clone())
            .ok_or_else(|| Error::Config("no input panel: pass --input or set `input` in the config".into()))?;
        let panel = read_panel(&input, a.variance)?;
        run.inputs.push(input);
        let dir = out_dir(&a.out)?;
        run.outputs = compare_pipeline(&config, &panel, &dir, jobs.max(1))?;
        run.seed = Some(config.train.seed);
        run.config = serde_json::to_value(&config)?;
        return run.finish(&dir);
    }

    let test = a
        .test
        .ok_or_else(|| Error::Config("compare needs --config, or --losses with --test".into()))?;
    let series = a
        .losses
        .iter()
        .map(|p| read_series(open(p)?))
        .collect::<Result<Vec<_>>>()?;
    run.inputs = a.losses.clone();
    let (dir, file) = out_target(&a.out, "compare.json")?;
    let doc = match test {
        TestArg::Dm => {
            if series.len() != 2 {
                return Err(Error::Config(format!("dm test takes exactly two loss files, got {}", series.len())));
            }
            let r = dm_test(&series[0], &series[1], a.h)?;
            serde_json::json!({ "test": "dm", "files": a.losses, "result": r, "two_sided_p_value": r.two_sided_p() })
        }
        TestArg::Mcs => {
            if series.len() < 2 || series.iter().any(|s| s.len() != series[0].len()) {
                return Err(Error::Config("mcs needs at least two loss files of equal length".into()));
            }
            let t = series[0].len();
            let m = nalgebra::DMatrix::from_fn(t, series.len(), |r, c| series[c][r]);
            let block = a.block_length.unwrap_or_else(|| default_block_length(t));
            let s = resolve_seed(seed, 0)?;
            run.seed = Some(s);
            let r = mcs_test(&m, a.confidence, a.replications, block, s)?;
            serde_json::json!({ "test": "mcs", "files": a.losses, "result": r })
        }
    };
    write_json(&file, &doc)?;
    run.outputs.push(file);
    run.config = serde_json::json!({
        "h": a.h, "confidence": a.confidence, "replications": a.replications, "block_length": a.block_length,
    });
    run.finish(&dir)
}

fn cmd_synth(a: &SynthArgs, seed: Option<u64>, argv: &[String]) -> Result<()> {
    let mut run = Run::new("synth", argv);
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", a.config.display()))))?;
    let mut spec = SynthSpec::from_json(&text)?;
    run.inputs.push(a.config.clone());
    spec.seed = resolve_seed(seed, spec.seed)?;
    let panel = gen_var_panel(&spec)?;
    let (dir, file) = out_target(&a.out, "panel.csv")?;
    let mut w = BufWriter::new(File::create(&file)?);
    panel.write_csv(&mut w)?;
    w.flush()?;
    drop(w);
    run.outputs.push(file);
    run.seed = Some(spec.seed);
    run.config = serde_json::to_value(&spec)?;
    run.finish(&dir)
}
