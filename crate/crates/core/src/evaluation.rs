//! Iterated forecasts, forecast-accuracy metrics, DM and MCS tests, and
//! dataset diagnostics.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dcrnn::{forecast_prepared, PreparedWindow};
use crate::error::{Error, Result};
use crate::har::HarCoefficients;
use crate::linalg::least_squares;
use crate::panel::{MaskedWindowPair, RvPanel};
use crate::training::{masked_graphs, GraphSource, TrainedModel};

/// How the look-back block is refreshed between forecast origins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Each origin's one-step forecast is appended to the look-back; after
    /// the first `l` origins the inputs are entirely model output.
    #[default]
    Recursive,
    /// The look-back is always the real data preceding the origin; only the
    /// decoder's own h-step recursion feeds forecasts back.
    RollingOrigin,
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(Self::Recursive),
            "rolling-origin" => Ok(Self::RollingOrigin),
            other => Err(Error::Config(format!("unknown forecast protocol {other:?}"))),
        }
    }
}

/// Look-back block handed to a forecaster, on the original scale.
#[derive(Debug, Clone)]
pub struct LookBack {
    pub start_date: NaiveDate,
    /// l × N; entries at unobserved positions are ignored.
    pub values: DMatrix<f64>,
    /// l × N activity flags (1 = active).
    pub observed: DMatrix<f64>,
}

pub trait Forecaster {
    fn look_back(&self) -> usize;

    /// `future` is the h × N activity mask of the days to forecast; returns
    /// h × N forecasts on the original scale.
    fn forecast(&mut self, block: &LookBack, future: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// Adapter for a trained diffusion-convolutional network.
pub struct DcrnnForecaster<'a> {
    trained: &'a TrainedModel,
    source: GraphSource,
}

impl<'a> DcrnnForecaster<'a> {
    pub fn new(trained: &'a TrainedModel) -> Self {
        Self {
            trained,
            source: trained.graph_source(),
        }
    }

    pub fn fallbacks(&self) -> usize {
        self.source.fallbacks
    }
}

impl Forecaster for DcrnnForecaster<'_> {
    fn look_back(&self) -> usize {
        self.trained.config.look_back
    }

    fn forecast(&mut self, block: &LookBack, future: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let stats = &self.trained.stats;
        let (l, n) = block.values.shape();
        let x = DMatrix::from_fn(l, n, |t, c| {
            if block.observed[(t, c)] > 0.0 {
                stats.standardize(c, block.values[(t, c)])
            } else {
                0.0
            }
        });
        let complete: Vec<bool> = (0..l).map(|t| block.observed.row(t).iter().all(|&v| v > 0.0)).collect();
        let theta = self.source.for_block(&block.values, &complete)?;
        let window = MaskedWindowPair {
            x,
            y: DMatrix::zeros(future.nrows(), n),
            ex: block.observed.clone(),
            ey: future.clone(),
            window_start: block.start_date,
            start_row: 0,
        };
        let prepared = PreparedWindow::new(&window, &masked_graphs(&theta, &window))?;
        let out = forecast_prepared(&self.trained.model, &prepared, false)?.y_hat;
        Ok(DMatrix::from_fn(out.nrows(), n, |s, c| stats.destandardize(c, out[(s, c)])))
    }
}

/// Adapter for the HAR family; the look-back must be fully observed.
pub struct HarForecaster<'a> {
    pub coefficients: &'a HarCoefficients,
    pub look_back: usize,
}

impl Forecaster for HarForecaster<'_> {
    fn look_back(&self) -> usize {
        self.look_back
    }

    fn forecast(&mut self, block: &LookBack, future: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let path = self.coefficients.forecast_path(&block.values, future.nrows())?;
        Ok(DMatrix::from_fn(path.len(), block.values.ncols(), |s, c| path[s][c]))
    }
}

/// Forecast series aligned to target dates.
#[derive(Debug, Clone, PartialEq)]
pub struct IteratedForecast {
    pub horizon: usize,
    pub protocol: Protocol,
    pub dates: Vec<NaiveDate>,
    /// rows = target dates, original scale; zero where the target is inactive.
    pub forecasts: DMatrix<f64>,
    pub truth: DMatrix<f64>,
    pub active: DMatrix<f64>,
}

fn activity(panel: &RvPanel, rows: std::ops::Range<usize>) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), panel.n_indices(), |t, c| if panel.is_observed(rows.start + t, c) { 1.0 } else { 0.0 })
}

/// Forecasts every stride-1 origin of `segment`, recording the h-th step.
/// The first origin uses the segment's first `l` rows as real look-back.
pub fn iterated_forecast<F: Forecaster>(forecaster: &mut F, segment: &RvPanel, h: usize, protocol: Protocol) -> Result<IteratedForecast> {
    let l = forecaster.look_back();
    let t = segment.n_rows();
    let n = segment.n_indices();
    if h == 0 {
        return Err(Error::InvalidInput("horizon must be >= 1".into()));
    }
    if t < l + h {
        return Err(Error::PanelTooShort(format!("segment has {t} rows, need look_back + horizon = {}", l + h)));
    }
    let mut values = segment.values().rows(0, l).into_owned();
    let mut observed = activity(segment, 0..l);
    let count = t - l - h + 1;
    let mut forecasts = DMatrix::zeros(count, n);
    let mut dates = Vec::with_capacity(count);
    for (k, origin) in (l..=t - h).enumerate() {
        if protocol == Protocol::RollingOrigin {
            values = segment.values().rows(origin - l, l).into_owned();
            observed = activity(segment, origin - l..origin);
        }
        let future = activity(segment, origin..origin + h);
        let block = LookBack {
            start_date: segment.dates()[origin - l],
            values: values.clone(),
            observed: observed.clone(),
        };
        let f = forecaster.forecast(&block, &future)?;
        if f.shape() != (h, n) || f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forecast at origin {}", segment.dates()[origin])));
        }
        for c in 0..n {
            forecasts[(k, c)] = future[(h - 1, c)] * f[(h - 1, c)];
        }
        dates.push(segment.dates()[origin + h - 1]);
        if protocol == Protocol::Recursive {
            values = values.remove_row(0).insert_row(l - 1, 0.0);
            observed = observed.remove_row(0).insert_row(l - 1, 0.0);
            for c in 0..n {
                if future[(0, c)] > 0.0 {
                    values[(l - 1, c)] = f[(0, c)];
                    observed[(l - 1, c)] = 1.0;
                }
            }
        }
    }
    let rows = l + h - 1..t;
    let active = activity(segment, rows.clone());
    let truth = segment.values().rows(rows.start, rows.len()).component_mul(&active);
    Ok(IteratedForecast {
        horizon: h,
        protocol,
        dates,
        forecasts,
        truth,
        active,
    })
}

/// Mean |ŝ − s| over active positions.
pub fn mafe(forecast: &[f64], truth: &[f64], active: &[bool]) -> Result<f64> {
    if forecast.len() != truth.len() || truth.len() != active.len() {
        return Err(Error::Shape("forecast, truth and activity lengths differ".into()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((f, s), &a) in forecast.iter().zip(truth).zip(active) {
        if a {
            sum += (f - s).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoActiveTargets);
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    /// One-sided: small values favour model 1 being more accurate.
    pub p_value: f64,
    pub mean_differential: f64,
    pub long_run_variance: f64,
    pub horizon: usize,
    pub small_sample_adjusted: bool,
    /// True when the lag-truncated variance was negative and only the
    /// lag-0 autocovariance was used.
    pub variance_fallback: bool,
}

impl DmResult {
    /// Two-sided p-value for equal accuracy.
    pub fn two_sided_p(&self) -> f64 {
        2.0 * self.p_value.min(1.0 - self.p_value)
    }
}

/// Diebold–Mariano test on absolute-error differentials `|e0| − |e1|`, with
/// uniform weights to lag h−1 and the small-sample correction.
pub fn dm_test(e0: &[f64], e1: &[f64], h: usize) -> Result<DmResult> {
    if e0.len() != e1.len() {
        return Err(Error::Shape(format!("error series lengths {} and {}", e0.len(), e1.len())));
    }
    let t = e0.len();
    if t < 10 {
        return Err(Error::InsufficientObservations(format!("{t} forecast errors, need 10")));
    }
    if h == 0 || h >= t {
        return Err(Error::InvalidInput(format!("horizon {h} invalid for {t} observations")));
    }
    let d: Vec<f64> = e0.iter().zip(e1).map(|(a, b)| a.abs() - b.abs()).collect();
    let tf = t as f64;
    let mean = d.iter().sum::<f64>() / tf;
    let autocov = |k: usize| (k..t).map(|i| (d[i] - mean) * (d[i - k] - mean)).sum::<f64>() / tf;
    let gamma0 = autocov(0);
    let mut lrv = gamma0 + 2.0 * (1..h).map(autocov).sum::<f64>();
    let mut variance_fallback = false;
    if lrv <= 0.0 && gamma0 > 0.0 {
        lrv = gamma0;
        variance_fallback = true;
    }
    if !(lrv > 0.0) {
        return Err(Error::Degenerate("loss differential is constant".into()));
    }
    let v_d = lrv / tf;
    let hf = h as f64;
    let correction = ((tf + 1.0 - 2.0 * hf + hf * (hf - 1.0) / tf) / tf).sqrt();
    let statistic = correction * mean / v_d.sqrt();
    let dist = StudentsT::new(0.0, 1.0, tf - 1.0).expect("valid degrees of freedom");
    Ok(DmResult {
        statistic,
        p_value: 1.0 - dist.cdf(statistic),
        mean_differential: mean,
        long_run_variance: v_d,
        horizon: h,
        small_sample_adjusted: true,
        variance_fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    /// Column indices of surviving models, ascending.
    pub survivors: Vec<usize>,
    /// MCS p-value per model (column order).
    pub p_values: Vec<f64>,
    pub confidence: f64,
    pub replications: usize,
    pub block_length: usize,
}

pub fn default_block_length(t: usize) -> usize {
    ((t as f64).cbrt().ceil() as usize).max(1)
}

/// Model confidence set with the range statistic and a moving-block bootstrap.
/// `confidence` is the set's coverage level (e.g. 0.9 eliminates at 10%).
pub fn mcs_test(losses: &DMatrix<f64>, confidence: f64, replications: usize, block_length: usize, seed: u64) -> Result<McsResult> {
    let (t, m) = losses.shape();
    if m < 2 {
        return Err(Error::InvalidInput("MCS needs at least two models".into()));
    }
    if t < 30 {
        return Err(Error::InsufficientObservations(format!("{t} loss rows, need 30")));
    }
    if !(0.0 < confidence && confidence < 1.0) || replications == 0 || block_length == 0 || block_length > t {
        return Err(Error::InvalidInput("confidence in (0,1), replications >= 1, 1 <= block_length <= T required".into()));
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss matrix".into()));
    }
    let alpha = 1.0 - confidence;
    let means: Vec<f64> = (0..m).map(|j| losses.column(j).mean()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_blocks = t.div_ceil(block_length);
    let mut boot = DMatrix::zeros(replications, m);
    for b in 0..replications {
        let mut rows = Vec::with_capacity(n_blocks * block_length);
        for _ in 0..n_blocks {
            let s = rng.gen_range(0..=t - block_length);
            rows.extend(s..s + block_length);
        }
        rows.truncate(t);
        for j in 0..m {
            boot[(b, j)] = rows.iter().map(|&r| losses[(r, j)]).sum::<f64>() / t as f64;
        }
    }

    let mut alive: Vec<usize> = (0..m).collect();
    let mut p_values = vec![1.0; m];
    let mut running = 0.0f64;
    while alive.len() > 1 {
        let k = alive.len();
        let mut t_stat = DMatrix::zeros(k, k);
        let mut scale = DMatrix::zeros(k, k);
        for a in 0..k {
            for c in 0..k {
                if a == c {
                    continue;
                }
                let (i, j) = (alive[a], alive[c]);
                let d = means[i] - means[j];
                let var = (0..replications).map(|b| (boot[(b, i)] - boot[(b, j)] - d).powi(2)).sum::<f64>() / replications as f64;
                scale[(a, c)] = var.sqrt();
                t_stat[(a, c)] = if var > 0.0 {
                    d / var.sqrt()
                } else if d == 0.0 {
                    0.0
                } else {
                    d.signum() * f64::INFINITY
                };
            }
        }
        let observed = t_stat.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut exceed = 0usize;
        for b in 0..replications {
            let mut stat = 0.0f64;
            for a in 0..k {
                for c in 0..k {
                    if a != c && scale[(a, c)] > 0.0 {
                        let (i, j) = (alive[a], alive[c]);
                        let centred = boot[(b, i)] - boot[(b, j)] - (means[i] - means[j]);
                        stat = stat.max((centred / scale[(a, c)]).abs());
                    }
                }
            }
            if stat >= observed {
                exceed += 1;
            }
        }
        let p = exceed as f64 / replications as f64;
        running = running.max(p);
        if p >= alpha {
            break;
        }
        let worst = (0..k)
            .max_by(|&a, &b| {
                let ra = t_stat.row(a).iter().fold(f64::NEG_INFINITY, |x, &v| x.max(v));
                let rb = t_stat.row(b).iter().fold(f64::NEG_INFINITY, |x, &v| x.max(v));
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .expect("nonempty set");
        p_values[alive[worst]] = running;
        alive.remove(worst);
    }
    let last = if alive.len() == 1 { 1.0 } else { running };
    for &i in &alive {
        p_values[i] = last;
    }
    Ok(McsResult {
        survivors: alive,
        p_values,
        confidence,
        replications,
        block_length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub p_value: f64,
    pub lags: usize,
    pub n_obs: usize,
}

/// Response-surface p-value for the constant-only Dickey–Fuller statistic.
pub fn mackinnon_p(stat: f64) -> f64 {
    const TAU_MAX: f64 = 2.74;
    const TAU_MIN: f64 = -18.83;
    const TAU_STAR: f64 = -1.61;
    const SMALL: [f64; 3] = [2.1659, 1.4412, 0.038269];
    const LARGE: [f64; 4] = [1.7339, 0.93202, -0.12745, -0.010368];
    if stat > TAU_MAX {
        return 1.0;
    }
    if stat < TAU_MIN {
        return 0.0;
    }
    let coefs: &[f64] = if stat <= TAU_STAR { &SMALL } else { &LARGE };
    let z = coefs.iter().rev().fold(0.0, |acc, c| acc * stat + c);
    Normal::new(0.0, 1.0).expect("standard normal").cdf(z)
}

fn adf_design(series: &[f64], lags: usize, n_obs: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = series.len();
    let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let first = diff.len() - n_obs;
    let design = DMatrix::from_fn(n_obs, 2 + lags, |r, c| {
        let i = first + r;
        match c {
            0 => 1.0,
            1 => series[i],
            k => diff[i - (k - 1)],
        }
    });
    let target = DMatrix::from_fn(n_obs, 1, |r, _| diff[first + r]);
    debug_assert!(first + n_obs <= t - 1);
    (design, target)
}

/// Augmented Dickey–Fuller test with a constant; lag order by AIC up to
/// `max_lags` (default `ceil(12 (T/100)^{1/4})`).
pub fn adf_test(series: &[f64], max_lags: Option<usize>) -> Result<AdfResult> {
    let t = series.len();
    if t < 30 {
        return Err(Error::InsufficientObservations(format!("{t} observations, need 30")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ADF series".into()));
    }
    if series.iter().all(|&v| v == series[0]) {
        return Err(Error::ZeroVariance("ADF series is constant".into()));
    }
    let default = (12.0 * (t as f64 / 100.0).powf(0.25)).ceil() as usize;
    let max_lags = max_lags.unwrap_or(default).min(t / 2 - 2);
    let common = t - 1 - max_lags;
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..=max_lags {
        let (x, y) = adf_design(series, k, common);
        let fit = least_squares(&x, &y, 0.0)?;
        let rss = fit.residuals.norm_squared();
        let n = common as f64;
        let aic = n * (rss / n).ln() + 2.0 * (k + 2) as f64;
        if aic < best.0 {
            best = (aic, k);
        }
    }
    let lags = best.1;
    let n_obs = t - 1 - lags;
    let (x, y) = adf_design(series, lags, n_obs);
    let fit = least_squares(&x, &y, 0.0)?;
    let statistic = fit.coefficients[(1, 0)] / fit.std_errors[(1, 0)];
    Ok(AdfResult {
        statistic,
        p_value: mackinnon_p(statistic),
        lags,
        n_obs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std_dev: f64,
    /// m3 / m2^{3/2}
    pub skewness: f64,
    /// m4 / m2² − 3
    pub excess_kurtosis: f64,
}

pub fn descriptive_stats(series: &[f64]) -> Result<Descriptive> {
    let n = series.len();
    if n < 3 {
        return Err(Error::InsufficientObservations(format!("{n} observations, need 3")));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let moment = |p: i32| series.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / nf;
    let m2 = moment(2);
    if m2 == 0.0 {
        return Err(Error::ZeroVariance("skewness and kurtosis undefined for a constant series".into()));
    }
    Ok(Descriptive {
        n,
        mean,
        std_dev: (m2 * nf / (nf - 1.0)).sqrt(),
        skewness: moment(3) / m2.powf(1.5),
        excess_kurtosis: moment(4) / (m2 * m2) - 3.0,
    })
}

/// One (look-back, horizon) cell of a model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub look_back: usize,
    pub horizon: usize,
    pub protocol: Protocol,
    pub models: Vec<String>,
    pub indices: Vec<String>,
    /// `mafe[i][m]`: index i, model m (original scale).
    pub mafe: Vec<Vec<f64>>,
    pub dm: Vec<DmRow>,
    pub mcs: Vec<McsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmRow {
    pub index: String,
    pub model0: String,
    pub model1: String,
    pub statistic: f64,
    pub p_value: f64,
    pub significant_5: bool,
    pub significant_10: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsRow {
    pub index: String,
    pub model: String,
    pub p_value: f64,
    pub in_set: bool,
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(value.clone())?)
    }

    pub fn write_mafe_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["index".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for (idx, row) in self.indices.iter().zip(&self.mafe) {
            let mut rec = vec![idx.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_dm_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.dm)
    }

    pub fn write_mcs_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_rows(writer, &self.mcs)
    }

    /// Writes `report.json`, `mafe.csv`, `dm.csv` and `mcs.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        self.write_mafe_csv(std::fs::File::create(dir.join("mafe.csv"))?)?;
        self.write_dm_csv(std::fs::File::create(dir.join("dm.csv"))?)?;
        self.write_mcs_csv(std::fs::File::create(dir.join("mcs.csv"))?)?;
        Ok(())
    }
}

fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a MAFE table written by [`EvalReport::write_mafe_csv`].
pub fn read_mafe_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(reader);
    let models: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        indices.push(rec.get(0).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("MAFE value {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok((models, indices, values))
}

pub fn read_dm_csv<R: Read>(reader: R) -> Result<Vec<DmRow>> {
    read_rows(reader)
}

pub fn read_mcs_csv<R: Read>(reader: R) -> Result<Vec<McsRow>> {
    read_rows(reader)
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Reads a one-column (or last-column) numeric series from CSV with a header.
pub fn read_series<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cell = rec.iter().last().ok_or_else(|| Error::Parse("empty row".into()))?;
        out.push(
            cell.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("value {cell:?}: {e}")))?,
        );
    }
    Ok(out)
}

/// Writes `date,IDX...` rows of forecasts; inactive targets are empty cells.
pub fn write_forecast_csv<W: Write>(f: &IteratedForecast, indices: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(indices.iter().cloned());
    w.write_record(&header)?;
    for (r, d) in f.dates.iter().enumerate() {
        let mut rec = vec![d.format("%Y-%m-%d").to_string()];
        for c in 0..f.forecasts.ncols() {
            rec.push(if f.active[(r, c)] > 0.0 { f.forecasts[(r, c)].to_string() } else { String::new() });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Convenience: per-index MAFE of an iterated forecast restricted to `dates`.
pub fn mafe_on_dates(f: &IteratedForecast, dates: &[NaiveDate]) -> Result<DVector<f64>> {
    let n = f.forecasts.ncols();
    let rows: Vec<usize> = dates
        .iter()
        .map(|d| {
            f.dates
                .binary_search(d)
                .map_err(|_| Error::InvalidInput(format!("date {d} not in forecast series")))
        })
        .collect::<Result<_>>()?;
    let mut out = DVector::zeros(n);
    for c in 0..n {
        let fc: Vec<f64> = rows.iter().map(|&r| f.forecasts[(r, c)]).collect();
        let tr: Vec<f64> = rows.iter().map(|&r| f.truth[(r, c)]).collect();
        let ac: Vec<bool> = rows.iter().map(|&r| f.active[(r, c)] > 0.0).collect();
        out[c] = mafe(&fc, &tr, &ac)?;
    }
    Ok(out)
}
