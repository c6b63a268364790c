//! C ABI for clustevo.
//!
//! Every function returns a [`ClustevoStatus`]. On failure the message is kept
//! per thread and can be copied out with [`clustevo_last_error`]. Handles are
//! opaque and must be released with their `_free` function. Labels are
//! 1-based; cluster 1 holds the largest values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use clustevo::config::{RunConfig, Series};
use clustevo::ingest::CountPanel;
use clustevo::matrices::MatrixKind;
use clustevo::offsets::{consistency_offset, series_evolution_offset, Normalization, ScanRange};
use clustevo::pipeline::{dual_analysis, load_panels, DualRun};
use clustevo::{cluster, kselect, Error};
use ndarray::Array2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClustevoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    DataError = 4,
    ComputationError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Series selector for handle accessors.
pub const CLUSTEVO_SERIES_X: u32 = 0;
pub const CLUSTEVO_SERIES_Y: u32 = 1;

pub struct ClustevoConfig(RunConfig);

pub struct ClustevoPanel(CountPanel);

pub struct ClustevoDualRun(DualRun);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Fail(ClustevoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            2 => ClustevoStatus::ConfigError,
            3 => ClustevoStatus::DataError,
            _ => ClustevoStatus::ComputationError,
        };
        Fail(status, e.to_string())
    }
}

fn fail(status: ClustevoStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClustevoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ClustevoStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClustevoStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(ClustevoStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(ClustevoStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| fail(ClustevoStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| fail(ClustevoStatus::NullPointer, format!("{name} is null")))
}

unsafe fn string(p: *const c_char, name: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(fail(ClustevoStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(ClustevoStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// Copies `s` with a trailing NUL into `buf` when it fits; always stores the
/// required size (including the NUL) in `needed`.
unsafe fn copy_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), Fail> {
    *out(needed, "needed")? = s.len() + 1;
    if buf.is_null() || len < s.len() + 1 {
        return Err(fail(
            ClustevoStatus::BufferTooSmall,
            format!("need {} bytes", s.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

fn series_of(code: u32) -> Result<Series, Fail> {
    match code {
        CLUSTEVO_SERIES_X => Ok(Series::X),
        CLUSTEVO_SERIES_Y => Ok(Series::Y),
        other => Err(fail(ClustevoStatus::InvalidArgument, format!("unknown series {other}"))),
    }
}

/// Copies the calling thread's last error message.
///
/// # Safety
/// `buf` must have room for `len` bytes or be null; `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> ClustevoStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match catch_unwind(AssertUnwindSafe(|| copy_str(&msg, buf, len, needed))) {
        Ok(Ok(())) => ClustevoStatus::Ok,
        Ok(Err(Fail(s, _))) => s,
        Err(_) => ClustevoStatus::Panic,
    }
}

/// Optimal univariate k-means. Writes `n` labels in `1..=k` and the WCSS.
///
/// # Safety
/// `values` must hold `n` doubles and `labels_out` room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn clustevo_ckmeans_1d(
    values: *const f64,
    n: usize,
    k: usize,
    labels_out: *mut u32,
    wcss_out: *mut f64,
) -> ClustevoStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        let labels = slice_mut(labels_out, n, "labels_out")?;
        let wcss = out(wcss_out, "wcss_out")?;
        let p = cluster::ckmeans_1d(v, k)?;
        for (o, l) in labels.iter_mut().zip(&p.labels) {
            *o = *l as u32;
        }
        *wcss = p.wcss;
        Ok(())
    })
}

/// Exponential smoothing of raw cluster counts with integer rounding.
///
/// # Safety
/// `raw` must hold `n` doubles; both outputs need room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn clustevo_smooth_k(
    raw: *const f64,
    n: usize,
    alpha: f64,
    smoothed_out: *mut f64,
    k_hat_out: *mut u32,
) -> ClustevoStatus {
    guard(|| {
        let r = slice(raw, n, "raw")?;
        let s_out = slice_mut(smoothed_out, n, "smoothed_out")?;
        let k_out = slice_mut(k_hat_out, n, "k_hat_out")?;
        let s = kselect::smooth_k(r, alpha)?;
        s_out.copy_from_slice(&s.smoothed);
        for (o, k) in k_out.iter_mut().zip(&s.k_hat) {
            *o = *k as u32;
        }
        Ok(())
    })
}

/// Shift minimizing the L1 gap between `kx(t)` and `ky(t + offset)`.
/// A positive offset means `ky` trails `kx`.
///
/// # Safety
/// `kx` and `ky` must hold `n` doubles; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_series_evolution_offset(
    kx: *const f64,
    ky: *const f64,
    n: usize,
    scan_min: i64,
    scan_max: i64,
    normalized: bool,
    offset_out: *mut i64,
    objective_out: *mut f64,
) -> ClustevoStatus {
    guard(|| {
        let (a, b) = (slice(kx, n, "kx")?, slice(ky, n, "ky")?);
        let (o, obj) = (out(offset_out, "offset_out")?, out(objective_out, "objective_out")?);
        let mode = if normalized {
            Normalization::Normalized
        } else {
            Normalization::Unnormalized
        };
        let r = series_evolution_offset(a, b, ScanRange::new(scan_min, scan_max)?, mode)?;
        *o = r.offset;
        *obj = r.objective_min;
        Ok(())
    })
}

/// Lag minimizing the mean Frobenius difference between two sequences of
/// `t_len` row-major `n x n` matrices stored back to back.
///
/// # Safety
/// `mx` and `my` must each hold `t_len * n * n` doubles; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_consistency_offset(
    mx: *const f64,
    my: *const f64,
    t_len: usize,
    n: usize,
    scan_min: i64,
    scan_max: i64,
    offset_out: *mut i64,
    objective_out: *mut f64,
) -> ClustevoStatus {
    guard(|| {
        let size = t_len
            .checked_mul(n)
            .and_then(|v| v.checked_mul(n))
            .ok_or_else(|| fail(ClustevoStatus::InvalidArgument, "matrix sizes overflow"))?;
        let (a, b) = (slice(mx, size, "mx")?, slice(my, size, "my")?);
        let (o, obj) = (out(offset_out, "offset_out")?, out(objective_out, "objective_out")?);
        let split = |v: &[f64]| -> Vec<Array2<f64>> {
            v.chunks_exact((n * n).max(1))
                .take(t_len)
                .map(|c| Array2::from_shape_vec((n, n), c.to_vec()).expect("n * n chunk"))
                .collect()
        };
        let r = consistency_offset(
            &split(a),
            &split(b),
            ScanRange::new(scan_min, scan_max)?,
            MatrixKind::Affinity,
        )?;
        *o = r.offset;
        *obj = r.objective_min;
        Ok(())
    })
}

/// Default configuration; set at least the input path before loading data.
///
/// # Safety
/// `out_cfg` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn clustevo_config_new(out_cfg: *mut *mut ClustevoConfig) -> ClustevoStatus {
    guard(|| {
        *out(out_cfg, "out_cfg")? = Box::into_raw(Box::new(ClustevoConfig(RunConfig::default())));
        Ok(())
    })
}

/// Parses a TOML configuration. A relative input path is kept as given.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out_cfg` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn clustevo_config_from_toml(
    toml: *const c_char,
    out_cfg: *mut *mut ClustevoConfig,
) -> ClustevoStatus {
    guard(|| {
        let text = string(toml, "toml")?;
        let slot = out(out_cfg, "out_cfg")?;
        *slot = Box::into_raw(Box::new(ClustevoConfig(RunConfig::from_toml_str(&text)?)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn clustevo_config_set_input(cfg: *mut ClustevoConfig, path: *const c_char) -> ClustevoStatus {
    guard(|| {
        let p = string(path, "path")?;
        let c = out(cfg, "cfg")?;
        c.0.input = PathBuf::from(p);
        Ok(())
    })
}

/// Lowest entity count on the filter date for the anomaly stage.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn clustevo_config_set_threshold(cfg: *mut ClustevoConfig, threshold: f64) -> ClustevoStatus {
    guard(|| {
        out(cfg, "cfg")?.0.threshold = threshold;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn clustevo_config_free(cfg: *mut ClustevoConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Loads one series of the configured CSV.
///
/// # Safety
/// `cfg` must come from this library; `out_panel` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn clustevo_panel_load(
    cfg: *const ClustevoConfig,
    series: u32,
    out_panel: *mut *mut ClustevoPanel,
) -> ClustevoStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        let s = series_of(series)?;
        let slot = out(out_panel, "out_panel")?;
        let panel = clustevo::pipeline::load_series(&c.0, s)?;
        *slot = Box::into_raw(Box::new(ClustevoPanel(panel)));
        Ok(())
    })
}

/// # Safety
/// `panel` must come from this library; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_panel_shape(
    panel: *const ClustevoPanel,
    n_entities: *mut usize,
    n_dates: *mut usize,
) -> ClustevoStatus {
    guard(|| {
        let p = handle(panel, "panel")?;
        *out(n_entities, "n_entities")? = p.0.n_entities();
        *out(n_dates, "n_dates")? = p.0.n_dates();
        Ok(())
    })
}

/// Copies the preprocessed counts, row-major entities by dates.
///
/// # Safety
/// `values_out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn clustevo_panel_values(
    panel: *const ClustevoPanel,
    values_out: *mut f64,
    len: usize,
) -> ClustevoStatus {
    guard(|| {
        let p = handle(panel, "panel")?;
        let need = p.0.n_entities() * p.0.n_dates();
        if len < need {
            return Err(fail(ClustevoStatus::BufferTooSmall, format!("need {need} values")));
        }
        let dst = slice_mut(values_out, need, "values_out")?;
        for (d, v) in dst.iter_mut().zip(p.0.values().iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Copies an entity name; see [`clustevo_last_error`] for the buffer protocol.
///
/// # Safety
/// `buf` must have room for `len` bytes or be null; `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_panel_entity(
    panel: *const ClustevoPanel,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> ClustevoStatus {
    guard(|| {
        let p = handle(panel, "panel")?;
        let name =
            p.0.entities()
                .get(index)
                .ok_or_else(|| fail(ClustevoStatus::InvalidArgument, format!("entity {index} out of range")))?;
        copy_str(name, buf, len, needed)
    })
}

/// # Safety
/// `panel` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn clustevo_panel_free(panel: *mut ClustevoPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Runs both series, the offset grid and the anomaly stage in memory.
///
/// # Safety
/// `cfg` must come from this library; `out_run` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_run(
    cfg: *const ClustevoConfig,
    out_run: *mut *mut ClustevoDualRun,
) -> ClustevoStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        let slot = out(out_run, "out_run")?;
        c.0.validate()?;
        let (px, py) = load_panels(&c.0)?;
        let run = dual_analysis(px, py, &c.0)?;
        *slot = Box::into_raw(Box::new(ClustevoDualRun(run)));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_shape(
    run: *const ClustevoDualRun,
    n_entities: *mut usize,
    n_dates: *mut usize,
) -> ClustevoStatus {
    guard(|| {
        let r = handle(run, "run")?;
        *out(n_entities, "n_entities")? = r.0.x.entities().len();
        *out(n_dates, "n_dates")? = r.0.x.dates().len();
        Ok(())
    })
}

/// Smoothed cluster counts of one series, one per date.
///
/// # Safety
/// `k_out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_k_hat(
    run: *const ClustevoDualRun,
    series: u32,
    k_out: *mut u32,
    len: usize,
) -> ClustevoStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let s = match series_of(series)? {
            Series::X => &r.0.x,
            Series::Y => &r.0.y,
        };
        let k = &s.smoothed.k_hat;
        if len < k.len() {
            return Err(fail(ClustevoStatus::BufferTooSmall, format!("need {} values", k.len())));
        }
        for (o, v) in slice_mut(k_out, k.len(), "k_out")?.iter_mut().zip(k) {
            *o = *v as u32;
        }
        Ok(())
    })
}

/// Cluster labels of one series on one date.
///
/// # Safety
/// `labels_out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_labels(
    run: *const ClustevoDualRun,
    series: u32,
    date_index: usize,
    labels_out: *mut u32,
    len: usize,
) -> ClustevoStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let s = match series_of(series)? {
            Series::X => &r.0.x,
            Series::Y => &r.0.y,
        };
        let l = s.labels.get(date_index).ok_or_else(|| {
            fail(
                ClustevoStatus::InvalidArgument,
                format!("date {date_index} out of range"),
            )
        })?;
        if len < l.len() {
            return Err(fail(ClustevoStatus::BufferTooSmall, format!("need {} values", l.len())));
        }
        for (o, v) in slice_mut(labels_out, l.len(), "labels_out")?.iter_mut().zip(l) {
            *o = *v as u32;
        }
        Ok(())
    })
}

/// Series evolution offset of the first start date.
///
/// # Safety
/// `run` must come from this library; `offset_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_series_offset(
    run: *const ClustevoDualRun,
    offset_out: *mut i64,
) -> ClustevoStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let row =
            r.0.offsets
                .first()
                .ok_or_else(|| fail(ClustevoStatus::ComputationError, "no offsets"))?;
        *out(offset_out, "offset_out")? = row.series_evolution.offset;
        Ok(())
    })
}

/// Consistency offset of the first start date for a matrix kind tag
/// (1 affinity, 2 adjacency, `0x100 | m` Gaussian with sharpness `m`).
///
/// # Safety
/// `run` must come from this library; `offset_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_consistency_offset(
    run: *const ClustevoDualRun,
    kind_tag: u32,
    offset_out: *mut i64,
) -> ClustevoStatus {
    guard(|| {
        let r = handle(run, "run")?;
        let kind = MatrixKind::from_tag(kind_tag).map_err(|e| fail(ClustevoStatus::InvalidArgument, e.to_string()))?;
        let row =
            r.0.offsets
                .first()
                .ok_or_else(|| fail(ClustevoStatus::ComputationError, "no offsets"))?;
        let res = row.consistency_for(kind).ok_or_else(|| {
            fail(
                ClustevoStatus::InvalidArgument,
                format!("offset for {kind} not computed"),
            )
        })?;
        *out(offset_out, "offset_out")? = res.offset;
        Ok(())
    })
}

/// Lag used by the anomaly stage.
///
/// # Safety
/// `run` must come from this library; `tau_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_anomaly_lag(run: *const ClustevoDualRun, tau_out: *mut i64) -> ClustevoStatus {
    guard(|| {
        let r = handle(run, "run")?;
        *out(tau_out, "tau_out")? = r.0.anomalies.tau;
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn clustevo_dual_free(run: *mut ClustevoDualRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
