//! Realized-volatility panels on the union trading calendar.
//!
//! A panel row exists for every date on which at least one market traded.
//! Missingness is carried by explicit flags; a stored value of `0.0` at an
//! unobserved cell carries no information and is never read as data.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum of squared intraday returns for one day (realized variance).
///
/// The panel stores the square root of this quantity.
pub fn compute_rv(intraday_returns: &[f64]) -> Result<f64> {
    if intraday_returns.is_empty() {
        return Err(Error::InvalidInput("empty intraday return list".into()));
    }
    let mut acc = 0.0;
    for (m, r) in intraday_returns.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("intraday return {m}")));
        }
        acc += r * r;
    }
    Ok(acc)
}

/// How values in a panel CSV are to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    /// Cells already hold RV^{1/2}.
    #[default]
    Rooted,
    /// Cells hold realized variance; the loader takes the square root.
    Variance,
}

/// Dated T×N matrix of RV^{1/2} with per-cell observed flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RvPanel {
    dates: Vec<NaiveDate>,
    indices: Vec<String>,
    values: DMatrix<f64>,
    observed: Vec<bool>,
}

impl RvPanel {
    /// Builds a panel and checks every invariant. Unobserved cells are
    /// normalised to `0.0`.
    pub fn new(
        dates: Vec<NaiveDate>,
        indices: Vec<String>,
        mut values: DMatrix<f64>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        let t = dates.len();
        let n = indices.len();
        if n == 0 {
            return Err(Error::InvalidInput("panel needs at least one index".into()));
        }
        if t == 0 {
            return Err(Error::InvalidInput("panel needs at least one row".into()));
        }
        if values.shape() != (t, n) || observed.len() != t * n {
            return Err(Error::Shape(format!(
                "values {:?} / observed {} do not match {t}x{n}",
                values.shape(),
                observed.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &indices {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate index name {name}")));
            }
        }
        for w in 0..t {
            if w > 0 {
                if dates[w] == dates[w - 1] {
                    return Err(Error::DuplicateDate(dates[w].to_string()));
                }
                if dates[w] < dates[w - 1] {
                    return Err(Error::NonIncreasingDates(dates[w].to_string()));
                }
            }
            let mut any = false;
            for c in 0..n {
                if observed[w * n + c] {
                    any = true;
                    let v = values[(w, c)];
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("{} {}", dates[w], indices[c])));
                    }
                    if v < 0.0 {
                        return Err(Error::NegativeRv {
                            date: dates[w].to_string(),
                            column: indices[c].clone(),
                            value: v,
                        });
                    }
                } else {
                    values[(w, c)] = 0.0;
                }
            }
            if !any {
                return Err(Error::EmptyRow(dates[w].to_string()));
            }
        }
        for c in 0..n {
            if !(0..t).any(|w| observed[w * n + c]) {
                return Err(Error::InsufficientObservations(format!(
                    "index {} is never observed",
                    indices[c]
                )));
            }
        }
        Ok(Self {
            dates,
            indices,
            values,
            observed,
        })
    }

    /// Fully observed panel.
    pub fn complete(dates: Vec<NaiveDate>, indices: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(dates, indices, values, vec![true; len])
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_indices(&self) -> usize {
        self.indices.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn indices(&self) -> &[String] {
        &self.indices
    }

    /// Raw value matrix; unobserved cells are `0.0`.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.indices.len() + col]
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        self.is_observed(row, col).then(|| self.values[(row, col)])
    }

    /// True when every market is observed on `row`.
    pub fn row_complete(&self, row: usize) -> bool {
        (0..self.n_indices()).all(|c| self.is_observed(row, c))
    }

    pub fn observed_count(&self, col: usize) -> usize {
        (0..self.n_rows()).filter(|&r| self.is_observed(r, col)).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    /// Row index of `date`, if present.
    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Rows whose dates fall in the half-open interval.
    pub fn rows_in(&self, range: &Range<NaiveDate>) -> Range<usize> {
        let lo = self.dates.partition_point(|d| *d < range.start);
        let hi = self.dates.partition_point(|d| *d < range.end);
        lo..hi.max(lo)
    }

    /// Contiguous sub-panel. Columns that end up fully unobserved make this fail.
    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.end > self.n_rows() || rows.start >= rows.end {
            return Err(Error::InvalidInput(format!(
                "row range {rows:?} outside panel of {} rows",
                self.n_rows()
            )));
        }
        let n = self.n_indices();
        Self::new(
            self.dates[rows.clone()].to_vec(),
            self.indices.clone(),
            self.values.rows(rows.start, rows.len()).into_owned(),
            self.observed[rows.start * n..rows.end * n].to_vec(),
        )
    }

    /// Keeps only rows on which every market is observed.
    pub fn intersection(&self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n_rows()).filter(|&r| self.row_complete(r)).collect();
        self.select_rows(&keep)
    }

    pub(crate) fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientObservations("no rows selected".into()));
        }
        let n = self.n_indices();
        let mut values = DMatrix::zeros(rows.len(), n);
        let mut observed = Vec::with_capacity(rows.len() * n);
        for (i, &r) in rows.iter().enumerate() {
            values.row_mut(i).copy_from(&self.values.row(r));
            observed.extend_from_slice(&self.observed[r * n..(r + 1) * n]);
        }
        Self::new(
            rows.iter().map(|&r| self.dates[r]).collect(),
            self.indices.clone(),
            values,
            observed,
        )
    }

    /// Writes the panel CSV format: header `date,IDX...`, empty cell = inactive.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.indices.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = Vec::with_capacity(self.n_indices() + 1);
            rec.push(self.dates[r].format("%Y-%m-%d").to_string());
            for c in 0..self.n_indices() {
                rec.push(match self.value(r, c) {
                    Some(v) => format!("{v}"),
                    None => String::new(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a panel CSV. Row order is preserved and validated.
pub fn load_panel<R: Read>(source: R, kind: ValueKind) -> Result<RvPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "date" {
        return Err(Error::Parse("header must be `date,<idx1>,...`".into()));
    }
    let indices: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = indices.len();

    let mut dates = Vec::new();
    let mut flat = Vec::new();
    let mut observed = Vec::new();
    let mut seen = HashSet::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, found {}",
                line + 2,
                n + 1,
                rec.len()
            )));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| Error::Parse(format!("line {}: bad date {:?}: {e}", line + 2, &rec[0])))?;
        if !seen.insert(date) {
            return Err(Error::DuplicateDate(date.to_string()));
        }
        if let Some(last) = dates.last() {
            if date < *last {
                return Err(Error::NonIncreasingDates(date.to_string()));
            }
        }
        let mut any = false;
        for (c, cell) in rec.iter().skip(1).enumerate() {
            if cell.is_empty() {
                flat.push(0.0);
                observed.push(false);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number {cell:?}", line + 2)))?;
            if v < 0.0 {
                return Err(Error::NegativeRv {
                    date: date.to_string(),
                    column: indices[c].clone(),
                    value: v,
                });
            }
            flat.push(match kind {
                ValueKind::Rooted => v,
                ValueKind::Variance => v.sqrt(),
            });
            observed.push(true);
            any = true;
        }
        if !any {
            return Err(Error::EmptyRow(date.to_string()));
        }
        dates.push(date);
    }
    let t = dates.len();
    RvPanel::new(dates, indices, DMatrix::from_row_slice(t, n, &flat), observed)
}

/// Per-index location and scale from observed training entries.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizerStats {
    pub indices: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeanStd {
    mean: f64,
    std: f64,
}

impl StandardizerStats {
    pub fn standardize(&self, col: usize, v: f64) -> f64 {
        (v - self.mean[col]) / self.std[col]
    }

    pub fn destandardize(&self, col: usize, z: f64) -> f64 {
        z * self.std[col] + self.mean[col]
    }

    /// `{index: {mean, std}}` in index order.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (i, name) in self.indices.iter().enumerate() {
            map.insert(
                name.clone(),
                serde_json::to_value(MeanStd {
                    mean: self.mean[i],
                    std: self.std[i],
                })
                .expect("plain struct"),
            );
        }
        serde_json::Value::Object(map)
    }

    /// Reads the JSON object back, ordering entries by `indices`.
    pub fn from_json(value: &serde_json::Value, indices: &[String]) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Parse("standardizer stats must be a JSON object".into()))?;
        let mut mean = Vec::with_capacity(indices.len());
        let mut std = Vec::with_capacity(indices.len());
        for name in indices {
            let entry = obj
                .get(name)
                .ok_or_else(|| Error::Parse(format!("missing stats for {name}")))?;
            let ms: MeanStd = serde_json::from_value(entry.clone())?;
            if !(ms.std > 0.0) {
                return Err(Error::ZeroVariance(name.clone()));
            }
            mean.push(ms.mean);
            std.push(ms.std);
        }
        Ok(Self {
            indices: indices.to_vec(),
            mean,
            std,
        })
    }
}

/// Mean and sample standard deviation per index over observed cells whose
/// dates fall in `date_range`.
pub fn fit_standardizer(panel: &RvPanel, date_range: Range<NaiveDate>) -> Result<StandardizerStats> {
    let rows = panel.rows_in(&date_range);
    let mut mean = Vec::with_capacity(panel.n_indices());
    let mut std = Vec::with_capacity(panel.n_indices());
    for c in 0..panel.n_indices() {
        let obs: Vec<f64> = rows.clone().filter_map(|r| panel.value(r, c)).collect();
        if obs.len() < 2 {
            return Err(Error::InsufficientObservations(format!(
                "index {} has {} observed entries in range",
                panel.indices()[c],
                obs.len()
            )));
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (obs.len() - 1) as f64;
        let s = var.sqrt();
        if !(s > 1e-300) || s <= 1e-14 * m.abs() {
            return Err(Error::ZeroVariance(panel.indices()[c].clone()));
        }
        mean.push(m);
        std.push(s);
    }
    Ok(StandardizerStats {
        indices: panel.indices().to_vec(),
        mean,
        std,
    })
}

/// One training sample with its masks.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedWindowPair {
    /// T_X × N standardized inputs, exactly zero where `ex == 0`.
    pub x: DMatrix<f64>,
    /// T_Y × N standardized targets, exactly zero where `ey == 0`.
    pub y: DMatrix<f64>,
    pub ex: DMatrix<f64>,
    pub ey: DMatrix<f64>,
    pub window_start: NaiveDate,
    /// Panel row of the first input day.
    pub start_row: usize,
}

impl MaskedWindowPair {
    pub fn t_x(&self) -> usize {
        self.x.nrows()
    }

    pub fn t_y(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.x.ncols()
    }

    /// Activity flags of day `t` (0-based over the concatenated T_X + T_Y days).
    pub fn day_activity(&self, t: usize) -> Vec<bool> {
        let row = if t < self.t_x() {
            self.ex.row(t)
        } else {
            self.ey.row(t - self.t_x())
        };
        row.iter().map(|&v| v != 0.0).collect()
    }

    /// E^{A_t}: row and column n are zero when market n is inactive on day t.
    pub fn adjacency_mask(&self, t: usize) -> DMatrix<f64> {
        adjacency_mask_from(&self.day_activity(t))
    }

    /// All T_X + T_Y adjacency masks, input days first.
    pub fn adjacency_masks(&self) -> Vec<DMatrix<f64>> {
        (0..self.t_x() + self.t_y()).map(|t| self.adjacency_mask(t)).collect()
    }
}

/// Outer product of the activity indicator with itself.
pub fn adjacency_mask_from(active: &[bool]) -> DMatrix<f64> {
    let n = active.len();
    DMatrix::from_fn(n, n, |i, j| if active[i] && active[j] { 1.0 } else { 0.0 })
}

/// Standardized, masked sample from `t_x + t_y` consecutive panel rows
/// starting at `start_row`.
pub fn build_window_pair_at(
    panel: &RvPanel,
    stats: &StandardizerStats,
    start_row: usize,
    t_x: usize,
    t_y: usize,
) -> Result<MaskedWindowPair> {
    if t_x == 0 || t_y == 0 {
        return Err(Error::InvalidInput("t_x and t_y must be positive".into()));
    }
    if stats.mean.len() != panel.n_indices() {
        return Err(Error::Shape("standardizer does not match panel".into()));
    }
    if start_row + t_x + t_y > panel.n_rows() {
        return Err(Error::PanelTooShort(format!(
            "window of {} rows from row {start_row} exceeds panel of {} rows",
            t_x + t_y,
            panel.n_rows()
        )));
    }
    let n = panel.n_indices();
    let fill = |first: usize, len: usize| {
        let mut vals = DMatrix::zeros(len, n);
        let mut mask = DMatrix::zeros(len, n);
        for t in 0..len {
            for c in 0..n {
                if let Some(v) = panel.value(first + t, c) {
                    vals[(t, c)] = stats.standardize(c, v);
                    mask[(t, c)] = 1.0;
                }
            }
        }
        (vals, mask)
    };
    let (x, ex) = fill(start_row, t_x);
    let (y, ey) = fill(start_row + t_x, t_y);
    Ok(MaskedWindowPair {
        x,
        y,
        ex,
        ey,
        window_start: panel.dates()[start_row],
        start_row,
    })
}

/// Date-addressed form of [`build_window_pair_at`].
pub fn build_window_pair(
    panel: &RvPanel,
    stats: &StandardizerStats,
    start: NaiveDate,
    t_x: usize,
    t_y: usize,
) -> Result<MaskedWindowPair> {
    let row = panel
        .position(start)
        .ok_or_else(|| Error::InvalidInput(format!("date {start} not in panel")))?;
    build_window_pair_at(panel, stats, row, t_x, t_y)
}
