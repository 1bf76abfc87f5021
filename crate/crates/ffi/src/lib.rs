//! C ABI over volnet-core.
//!
//! Objects cross the boundary as opaque handles created by the load and
//! build functions and released with the matching `*_free`. Every fallible
//! call returns a [`VolnetStatus`]; on failure the message is available from
//! [`volnet_last_error`] until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use volnet::evaluation::{dm_test, iterated_forecast, mafe_on_dates, DcrnnForecaster, Protocol};
use volnet::panel::{load_panel, RvPanel, ValueKind};
use volnet::spillover::{net_spillover, panel_spillover, sparsify, SpilloverGraph, SpilloverSettings};
use volnet::training::{calendar_panel, TrainedModel};
use volnet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidInput = 4,
    Numerical = 5,
    PanelTooShort = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolnetProtocol {
    Recursive = 0,
    RollingOrigin = 1,
}

/// Realized-volatility panel.
pub struct VolnetPanel(RvPanel);

/// Spillover graph, full and sparsified.
pub struct VolnetGraph {
    full: SpilloverGraph,
    sparse: SpilloverGraph,
}

/// Trained forecaster.
pub struct VolnetModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> VolnetStatus {
    match e {
        Error::Io(_) => VolnetStatus::Io,
        Error::PanelTooShort(_) => VolnetStatus::PanelTooShort,
        Error::NonFinite(_)
        | Error::Unstable(_)
        | Error::SingularRegressors(_)
        | Error::Collinear(_)
        | Error::ZeroVariance(_)
        | Error::Degenerate(_)
        | Error::Divergence { .. } => VolnetStatus::Numerical,
        _ => VolnetStatus::InvalidInput,
    }
}

struct Fail(VolnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VolnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VolnetStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VolnetStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(VolnetStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VolnetStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a>(buf: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Fail> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < needed {
        return Err(Fail(VolnetStatus::BufferTooSmall, format!("buffer holds {len} values, {needed} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(buf, needed))
}

fn open(path: &str) -> Result<BufReader<File>, Fail> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Fail(VolnetStatus::Io, format!("{path}: {e}")))
}

/// Message of the last failure on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn volnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn volnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a wide CSV panel (`date` column then one column per index; empty
/// cells are inactive days). `variance != 0` means cells hold realized
/// variance rather than its square root.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn volnet_panel_load_csv(path: *const c_char, variance: i32, out: *mut *mut VolnetPanel) -> VolnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind = if variance != 0 { ValueKind::Variance } else { ValueKind::Rooted };
        let panel = load_panel(open(path_arg(path)?)?, kind)?;
        *out = Box::into_raw(Box::new(VolnetPanel(panel)));
        Ok(())
    })
}

/// # Safety
/// `panel` must come from `volnet_panel_load_csv` or be null.
#[no_mangle]
pub unsafe extern "C" fn volnet_panel_free(panel: *mut VolnetPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live handle; `rows` and `indices` writable.
#[no_mangle]
pub unsafe extern "C" fn volnet_panel_shape(panel: *const VolnetPanel, rows: *mut usize, indices: *mut usize) -> VolnetStatus {
    guard(|| {
        let p = &handle(panel, "panel")?.0;
        if rows.is_null() || indices.is_null() {
            return Err(null("out"));
        }
        *rows = p.n_rows();
        *indices = p.n_indices();
        Ok(())
    })
}

/// Whole-sample spillover graph: VAR(`p`), generalized decomposition at
/// `horizon`, then the top `keep` fraction of off-diagonal edges.
///
/// # Safety
/// `panel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn volnet_spillover(panel: *const VolnetPanel, p: usize, horizon: usize, keep: f64, out: *mut *mut VolnetGraph) -> VolnetStatus {
    guard(|| {
        let panel = &handle(panel, "panel")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let settings = SpilloverSettings {
            p,
            horizon,
            keep_fraction: keep,
            ..Default::default()
        };
        let full = panel_spillover(panel, &settings)?;
        let sparse = sparsify(&full, keep)?;
        *out = Box::into_raw(Box::new(VolnetGraph { full, sparse }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from `volnet_spillover` or be null.
#[no_mangle]
pub unsafe extern "C" fn volnet_graph_free(graph: *mut VolnetGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn volnet_graph_nodes(graph: *const VolnetGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.full.n_nodes())
}

/// Copies the N × N adjacency row-major into `buf`. `sparse != 0` selects
/// the sparsified matrix.
///
/// # Safety
/// `graph` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn volnet_graph_adjacency(graph: *const VolnetGraph, sparse: i32, buf: *mut f64, len: usize) -> VolnetStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let theta = if sparse != 0 { &g.sparse.theta } else { &g.full.theta };
        let n = theta.nrows();
        let out = out_slice(buf, len, n * n)?;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = theta[(i, j)];
            }
        }
        Ok(())
    })
}

/// Net spillover per index of the full graph.
///
/// # Safety
/// `graph` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn volnet_graph_net(graph: *const VolnetGraph, buf: *mut f64, len: usize) -> VolnetStatus {
    guard(|| {
        let g = handle(graph, "graph")?;
        let net = net_spillover(&g.full);
        out_slice(buf, len, net.len())?.copy_from_slice(&net);
        Ok(())
    })
}

/// Loads a `model.json` written by `volnet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn volnet_model_load(path: *const c_char, out: *mut *mut VolnetModel) -> VolnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let doc: serde_json::Value = serde_json::from_reader(open(path_arg(path)?)?).map_err(Error::from)?;
        let model = TrainedModel::from_json(&doc)?;
        *out = Box::into_raw(Box::new(VolnetModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `volnet_model_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn volnet_model_free(model: *mut VolnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Iterated forecasts over the model's test dates of `panel`, reduced to
/// one MAFE per index (original scale).
///
/// # Safety
/// Handles must be live and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn volnet_model_mafe(
    model: *const VolnetModel,
    panel: *const VolnetPanel,
    protocol: VolnetProtocol,
    buf: *mut f64,
    len: usize,
) -> VolnetStatus {
    guard(|| {
        let trained = &handle(model, "model")?.0;
        let panel = &handle(panel, "panel")?.0;
        if panel.indices() != trained.indices() {
            return Err(Fail(VolnetStatus::InvalidInput, "panel indices differ from the model's".into()));
        }
        let out = out_slice(buf, len, panel.n_indices())?;
        let cal = calendar_panel(panel, trained.config.calendar_mode)?;
        let rows = cal.rows_in(&trained.split.test);
        if rows.is_empty() {
            return Err(Error::PanelTooShort("no rows in the model's test range".into()).into());
        }
        let segment = cal.slice_rows(rows)?;
        let protocol = match protocol {
            VolnetProtocol::Recursive => Protocol::Recursive,
            VolnetProtocol::RollingOrigin => Protocol::RollingOrigin,
        };
        let series = iterated_forecast(&mut DcrnnForecaster::new(trained), &segment, trained.config.horizon, protocol)?;
        let m = mafe_on_dates(&series, &series.dates)?;
        out.copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// Diebold–Mariano test on two forecast-error series of length `len`.
/// Writes the statistic and the one-sided p-value (small favours model 1).
///
/// # Safety
/// `e0` and `e1` must be valid for `len` doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn volnet_dm_test(
    e0: *const f64,
    e1: *const f64,
    len: usize,
    horizon: usize,
    statistic: *mut f64,
    p_value: *mut f64,
) -> VolnetStatus {
    guard(|| {
        if e0.is_null() || e1.is_null() || statistic.is_null() || p_value.is_null() {
            return Err(null("argument"));
        }
        let a = std::slice::from_raw_parts(e0, len);
        let b = std::slice::from_raw_parts(e1, len);
        let r = dm_test(a, b, horizon)?;
        *statistic = r.statistic;
        *p_value = r.p_value;
        Ok(())
    })
}
