//! C ABI for the estimation library: opaque handles, status codes, and
//! a thread-local last-error message. The header is generated into
//! `include/hlm.h` by the build script.
//!
//! Ownership rules: every `*_load`/`*_estimate` out-pointer hands the
//! caller an owned handle that must be released with the matching
//! `*_free`; strings returned by `hlm_result_to_json` are released with
//! `hlm_string_free`. All functions are panic-safe at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hlm_core::baseline::{wme_estimate, WmeConfig};
use hlm_core::dataset::{load_dataset, DatasetFormat, UserDataset};
use hlm_core::error::HlmError;
use hlm_core::mechanism::{
    default_c_t, estimate, EstimationResult, EstimatorConfig, Mode, Regime, ThresholdRule,
};
use hlm_core::sensitivity::{privacy_params, DeltaMethod};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlmStatus {
    HlmOk = 0,
    HlmNullPointer = 1,
    HlmInvalidUtf8 = 2,
    HlmIoError = 3,
    HlmParseError = 4,
    HlmDimensionError = 5,
    HlmValidationError = 6,
    HlmArgumentError = 7,
    HlmNumericalError = 8,
    HlmConditionError = 9,
    HlmPanic = 10,
}

/// Dataset file formats accepted by `hlm_dataset_load`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlmFormat {
    HlmFormatCsvLong = 0,
    HlmFormatJsonlShards = 1,
}

/// Opaque dataset handle.
pub struct HlmDataset(UserDataset);

/// Opaque estimation-result handle.
pub struct HlmResult(EstimationResult);

/// Options for the Huber-loss mechanism. Sentinel conventions: values
/// `<= 0` select the documented default where one exists.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlmEstimateOptions {
    pub epsilon: f64,
    pub delta: f64,
    /// Clip radius R_c.
    pub radius: f64,
    /// 0 = bounded support, 1 = heavy tail.
    pub regime: i32,
    /// Bounded support radius; `<= 0` falls back to `radius`.
    pub support_radius: f64,
    /// Heavy-tail moment order p (>= 2).
    pub moment_order: f64,
    /// Heavy-tail moment bound.
    pub moment_bound: f64,
    /// Threshold constant; `<= 0` selects 10% above the regime floor.
    pub c_t: f64,
    /// 0 = balanced, 1 = imbalanced.
    pub mode: i32,
    /// Imbalance degree; `<= 0` derives it from the public sizes.
    pub gamma: f64,
    /// `> 0` switches to the tuned rule T_i = a / sqrt(m_i ^ m_c).
    pub threshold_multiplier: f64,
    /// 0 = greedy outlier search, 1 = exact (small n only).
    pub delta_method: i32,
    pub seed: u64,
}

/// Options for the two-stage baseline.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HlmWmeOptions {
    pub epsilon: f64,
    pub delta: f64,
    /// Stage-1 concentration radius (bin width is 2 tau).
    pub tau: f64,
    /// Stage-1 budget fraction; `<= 0` means an even split.
    pub stage1_fraction: f64,
    pub range_lo: f64,
    pub range_hi: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &HlmError) -> HlmStatus {
    match err {
        HlmError::Io(_) => HlmStatus::HlmIoError,
        HlmError::Parse { .. } => HlmStatus::HlmParseError,
        HlmError::Dimension(_) => HlmStatus::HlmDimensionError,
        HlmError::Validation(_) => HlmStatus::HlmValidationError,
        HlmError::Argument(_) => HlmStatus::HlmArgumentError,
        HlmError::Numerical(_) => HlmStatus::HlmNumericalError,
        HlmError::Condition(_) => HlmStatus::HlmConditionError,
    }
}

fn guarded(f: impl FnOnce() -> HlmStatus) -> HlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            HlmStatus::HlmPanic
        }
    }
}

/// Message describing the most recent failure on this thread; valid
/// until the next failing call.
#[no_mangle]
pub extern "C" fn hlm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a dataset file. On success writes an owned handle to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hlm_dataset_load(
    path: *const c_char,
    format: HlmFormat,
    out: *mut *mut HlmDataset,
) -> HlmStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer");
            return HlmStatus::HlmNullPointer;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return HlmStatus::HlmInvalidUtf8;
            }
        };
        let fmt = match format {
            HlmFormat::HlmFormatCsvLong => DatasetFormat::CsvLong,
            HlmFormat::HlmFormatJsonlShards => DatasetFormat::JsonlShards,
        };
        match load_dataset(Path::new(path), fmt) {
            Ok(ds) => {
                unsafe { *out = Box::into_raw(Box::new(HlmDataset(ds))) };
                HlmStatus::HlmOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `ds` must be a handle from `hlm_dataset_load` (or null).
#[no_mangle]
pub unsafe extern "C" fn hlm_dataset_free(ds: *mut HlmDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// # Safety
/// `ds` must be a valid dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_dataset_users(ds: *const HlmDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    unsafe { &*ds }.0.n_users()
}

/// # Safety
/// `ds` must be a valid dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_dataset_dim(ds: *const HlmDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    unsafe { &*ds }.0.dim()
}

/// # Safety
/// `ds` must be a valid dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_dataset_total_samples(ds: *const HlmDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    unsafe { &*ds }.0.total_samples()
}

fn build_config(ds: &UserDataset, opts: &HlmEstimateOptions) -> Result<EstimatorConfig, HlmError> {
    let regime = match opts.regime {
        0 => Regime::Bounded {
            r: if opts.support_radius > 0.0 { opts.support_radius } else { opts.radius },
        },
        1 => Regime::HeavyTail { p: opts.moment_order, m_p: opts.moment_bound },
        other => return Err(HlmError::Argument(format!("unknown regime code {other}"))),
    };
    let mode = match opts.mode {
        0 => Mode::Balanced,
        1 => Mode::Imbalanced { gamma: (opts.gamma > 0.0).then_some(opts.gamma) },
        other => return Err(HlmError::Argument(format!("unknown mode code {other}"))),
    };
    let delta_method = match opts.delta_method {
        0 => DeltaMethod::Greedy,
        1 => DeltaMethod::Exact,
        other => return Err(HlmError::Argument(format!("unknown delta method code {other}"))),
    };
    let config = EstimatorConfig {
        privacy: privacy_params(opts.epsilon, opts.delta, ds.dim())?,
        radius: opts.radius,
        c_t: if opts.c_t > 0.0 { opts.c_t } else { default_c_t(&regime) },
        regime,
        mode,
        threshold_rule: if opts.threshold_multiplier > 0.0 {
            ThresholdRule::Multiplier { a: opts.threshold_multiplier }
        } else {
            ThresholdRule::Analytic
        },
        delta_method,
        seed: opts.seed,
    };
    config.validate()?;
    Ok(config)
}

/// Runs the private Huber-loss estimator. On success writes an owned
/// result handle to `out`.
///
/// # Safety
/// All pointers must be valid; `ds` must be a dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_estimate(
    ds: *const HlmDataset,
    opts: *const HlmEstimateOptions,
    out: *mut *mut HlmResult,
) -> HlmStatus {
    guarded(|| {
        if ds.is_null() || opts.is_null() || out.is_null() {
            set_error("null pointer");
            return HlmStatus::HlmNullPointer;
        }
        let dataset = &unsafe { &*ds }.0;
        let opts = unsafe { &*opts };
        let run = build_config(dataset, opts).and_then(|config| estimate(dataset, &config));
        match run {
            Ok(result) => {
                unsafe { *out = Box::into_raw(Box::new(HlmResult(result))) };
                HlmStatus::HlmOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Runs the two-stage baseline. On success writes an owned result
/// handle to `out`.
///
/// # Safety
/// All pointers must be valid; `ds` must be a dataset handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_wme_estimate(
    ds: *const HlmDataset,
    opts: *const HlmWmeOptions,
    out: *mut *mut HlmResult,
) -> HlmStatus {
    guarded(|| {
        if ds.is_null() || opts.is_null() || out.is_null() {
            set_error("null pointer");
            return HlmStatus::HlmNullPointer;
        }
        let dataset = &unsafe { &*ds }.0;
        let opts = unsafe { &*opts };
        let run = privacy_params(opts.epsilon, opts.delta, dataset.dim()).and_then(|privacy| {
            let mut cfg =
                WmeConfig::new(privacy, opts.tau, (opts.range_lo, opts.range_hi), opts.seed);
            if opts.stage1_fraction > 0.0 {
                cfg.budget_split = (opts.stage1_fraction, 1.0 - opts.stage1_fraction);
            }
            wme_estimate(dataset, &cfg)
        });
        match run {
            Ok(result) => {
                unsafe { *out = Box::into_raw(Box::new(HlmResult(result))) };
                HlmStatus::HlmOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `res` must be a result handle (or null).
#[no_mangle]
pub unsafe extern "C" fn hlm_result_free(res: *mut HlmResult) {
    if !res.is_null() {
        drop(unsafe { Box::from_raw(res) });
    }
}

/// # Safety
/// `res` must be a valid result handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_result_dim(res: *const HlmResult) -> usize {
    if res.is_null() {
        return 0;
    }
    unsafe { &*res }.0.output.len()
}

/// Copies the private output vector into `buf` (capacity `len`).
///
/// # Safety
/// `buf` must point to at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hlm_result_output(
    res: *const HlmResult,
    buf: *mut f64,
    len: usize,
) -> HlmStatus {
    guarded(|| {
        if res.is_null() || buf.is_null() {
            set_error("null pointer");
            return HlmStatus::HlmNullPointer;
        }
        let output = &unsafe { &*res }.0.output;
        if len < output.len() {
            set_error("buffer too small");
            return HlmStatus::HlmArgumentError;
        }
        unsafe { std::ptr::copy_nonoverlapping(output.as_ptr(), buf, output.len()) };
        HlmStatus::HlmOk
    })
}

/// Per-coordinate noise standard deviation of the result.
///
/// # Safety
/// `res` must be a valid result handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_result_noise_scale(res: *const HlmResult) -> f64 {
    if res.is_null() {
        return f64::NAN;
    }
    unsafe { &*res }.0.noise_scale
}

/// Smooth sensitivity the noise was calibrated to, or NaN for baseline
/// results, which carry no sensitivity report.
///
/// # Safety
/// `res` must be a valid result handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_result_smooth_sensitivity(res: *const HlmResult) -> f64 {
    if res.is_null() {
        return f64::NAN;
    }
    unsafe { &*res }
        .0
        .report
        .as_ref()
        .map_or(f64::NAN, |r| r.smooth_sensitivity)
}

/// Serializes the full audit trail as a JSON string; release it with
/// `hlm_string_free`.
///
/// # Safety
/// `res` must be a valid result handle.
#[no_mangle]
pub unsafe extern "C" fn hlm_result_to_json(res: *const HlmResult) -> *mut c_char {
    if res.is_null() {
        return std::ptr::null_mut();
    }
    let json = match serde_json::to_string(&unsafe { &*res }.0) {
        Ok(s) => s,
        Err(_) => return std::ptr::null_mut(),
    };
    CString::new(json).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `s` must come from `hlm_result_to_json` (or be null).
#[no_mangle]
pub unsafe extern "C" fn hlm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
