//! C interface to the inequality-testing library.
//!
//! Every function is panic-safe: panics are caught at the boundary and
//! turned into `IT_ERR_PANIC`. Functions returning `int` use the `IT_*`
//! status codes; on any nonzero return the thread-local message retrieved
//! by [`it_last_error`] describes what went wrong. Objects are opaque
//! handles owned by the library; each `*_new`/`*_from_*` call pairs with
//! the matching `*_free`, and every getter leaves ownership where it was.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ineqtest::data::{ingest_csv, Dataset, DomainBox};
use ineqtest::statistic::{run_test, Bandwidth, TestConfig, TestReport, WeightScheme};
use ineqtest::Error;

/// Success.
pub const IT_OK: c_int = 0;
/// A pointer, length, or value argument was unusable.
pub const IT_ERR_INVALID_ARG: c_int = 1;
/// The configuration rejects this combination of settings.
pub const IT_ERR_CONFIG: c_int = 2;
/// The variance estimate is degenerate; the statistic is undefined.
pub const IT_ERR_DEGENERATE: c_int = 3;
/// A required pointer was null.
pub const IT_ERR_NULLPTR: c_int = 4;
/// A string argument was not valid UTF-8.
pub const IT_ERR_UTF8: c_int = 5;
/// An internal panic was caught at the boundary.
pub const IT_ERR_PANIC: c_int = 6;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(cleaned).expect("NUL stripped"));
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn code_for(err: &Error) -> c_int {
    match err {
        Error::InvalidConfig(_)
        | Error::UnknownKernel(_)
        | Error::InvalidKernel(_)
        | Error::NoDirection(_)
        | Error::PreconditionViolated(_) => IT_ERR_CONFIG,
        Error::DegenerateVariance(_) => IT_ERR_DEGENERATE,
        Error::InvalidData(_)
        | Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::CorrelationOutOfRange(_) => IT_ERR_INVALID_ARG,
    }
}

fn fail(err: &Error) -> c_int {
    set_error(&err.to_string());
    code_for(err)
}

/// Wraps a fallible body with panic catching and error bookkeeping.
fn guarded(body: impl FnOnce() -> c_int) -> c_int {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            IT_ERR_PANIC
        }
    }
}

/// Reads a required C string argument into UTF-8.
///
/// # Safety
/// `s` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, c_int> {
    if s.is_null() {
        set_error("string argument is null");
        return Err(IT_ERR_NULLPTR);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        IT_ERR_UTF8
    })
}

macro_rules! need {
    ($ptr:expr, $what:literal) => {
        if $ptr.is_null() {
            set_error(concat!($what, " is null"));
            return IT_ERR_NULLPTR;
        }
    };
}

/// Opaque sample handle: covariates plus one or more response columns.
pub struct ItDataset {
    inner: Dataset,
}

/// Opaque test configuration handle.
pub struct ItConfig {
    inner: TestConfig,
}

/// Opaque result handle for a completed test run.
pub struct ItReport {
    inner: TestReport,
}

/// Last error message for the calling thread, or null if the most recent
/// call succeeded. The pointer is valid until the next library call on the
/// same thread; do not free it.
#[no_mangle]
pub extern "C" fn it_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |msg| msg.as_ptr())
    })
}

/// Builds a dataset from flat arrays: `x` is row-major `n * d`, `y` is
/// row-major `n * n_outcomes`. The arrays are copied.
///
/// # Safety
/// `x` must point to `n * d` doubles and `y` to `n * n_outcomes` doubles.
#[no_mangle]
pub unsafe extern "C" fn it_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    n_outcomes: usize,
    out: *mut *mut ItDataset,
) -> c_int {
    guarded(|| {
        need!(out, "output handle");
        need!(x, "x array");
        need!(y, "y array");
        let Some(xn) = n.checked_mul(d) else {
            set_error("n * d overflows");
            return IT_ERR_INVALID_ARG;
        };
        let Some(yn) = n.checked_mul(n_outcomes) else {
            set_error("n * n_outcomes overflows");
            return IT_ERR_INVALID_ARG;
        };
        let xs = std::slice::from_raw_parts(x, xn).to_vec();
        let ys = std::slice::from_raw_parts(y, yn).to_vec();
        match Dataset::new(xs, d, ys, n_outcomes) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ItDataset { inner }));
                IT_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Reads a dataset from a CSV file with headers `x1..xd` and `y1..yJ`.
/// Rows with missing or non-numeric cells are an error here (the line
/// numbers are listed in the message): the C interface never silently
/// drops data.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn it_dataset_from_csv(
    path: *const c_char,
    out: *mut *mut ItDataset,
) -> c_int {
    guarded(|| {
        need!(out, "output handle");
        let path = match read_str(path) {
            Ok(s) => s,
            Err(code) => return code,
        };
        match ingest_csv(std::path::Path::new(path)) {
            Ok(ingest) if ingest.skipped_lines.is_empty() => {
                *out = Box::into_raw(Box::new(ItDataset { inner: ingest.dataset }));
                IT_OK
            }
            Ok(ingest) => {
                let lines: Vec<String> =
                    ingest.skipped_lines.iter().map(u64::to_string).collect();
                set_error(&format!(
                    "rows with missing or non-numeric cells on lines {}",
                    lines.join(", ")
                ));
                IT_ERR_INVALID_ARG
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of observations.
#[no_mangle]
pub extern "C" fn it_dataset_n(dataset: *const ItDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { (*dataset).inner.n() }
}

/// Number of response columns.
#[no_mangle]
pub extern "C" fn it_dataset_outcomes(dataset: *const ItDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { (*dataset).inner.n_outcomes() }
}

/// Frees a dataset handle. Null is ignored.
#[no_mangle]
pub extern "C" fn it_dataset_free(dataset: *mut ItDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Creates a configuration with the given evaluation domain, written as
/// one `lo:hi` pair per axis, comma-separated (for example `"0.05:0.95"`).
/// All other settings start at their defaults: p = 1, inequality mode,
/// 5% level, quartic kernel, bandwidth rule scale 1.
///
/// # Safety
/// `domain` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn it_config_new(
    domain: *const c_char,
    out: *mut *mut ItConfig,
) -> c_int {
    guarded(|| {
        need!(out, "output handle");
        let text = match read_str(domain) {
            Ok(s) => s,
            Err(code) => return code,
        };
        match DomainBox::parse(text) {
            Ok(domain) => {
                *out = Box::into_raw(Box::new(ItConfig {
                    inner: TestConfig::baseline(domain),
                }));
                IT_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Sets the penalty exponent (p >= 1; validated when the test runs).
#[no_mangle]
pub extern "C" fn it_config_set_p(config: *mut ItConfig, p: f64) -> c_int {
    guarded(|| {
        need!(config, "config");
        unsafe { (*config).inner.p = p };
        IT_OK
    })
}

/// Selects `"inequality"` (one-sided) or `"equality"` (two-sided) testing.
///
/// # Safety
/// `mode` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn it_config_set_mode(
    config: *mut ItConfig,
    mode: *const c_char,
) -> c_int {
    guarded(|| {
        need!(config, "config");
        let text = match read_str(mode) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let mode = match text {
            "inequality" => ineqtest::lambda::Mode::OneSided,
            "equality" => ineqtest::lambda::Mode::TwoSided,
            other => {
                set_error(&format!(
                    "mode must be \"inequality\" or \"equality\", got \"{other}\""
                ));
                return IT_ERR_CONFIG;
            }
        };
        (*config).inner.mode = mode;
        IT_OK
    })
}

/// Sets the test level (must land in (0, 1); validated when the test runs).
#[no_mangle]
pub extern "C" fn it_config_set_alpha(config: *mut ItConfig, alpha: f64) -> c_int {
    guarded(|| {
        need!(config, "config");
        unsafe { (*config).inner.alpha = alpha };
        IT_OK
    })
}

/// Uses an absolute bandwidth instead of the sample-size rule.
#[no_mangle]
pub extern "C" fn it_config_set_bandwidth(config: *mut ItConfig, h: f64) -> c_int {
    guarded(|| {
        need!(config, "config");
        unsafe { (*config).inner.bandwidth = Bandwidth::Absolute(h) };
        IT_OK
    })
}

/// Uses the bandwidth rule `c_h * sd(X) * n^(-1/5)` with the given scale.
#[no_mangle]
pub extern "C" fn it_config_set_bandwidth_scale(config: *mut ItConfig, c_h: f64) -> c_int {
    guarded(|| {
        need!(config, "config");
        unsafe { (*config).inner.bandwidth = Bandwidth::Rule { c_h } };
        IT_OK
    })
}

/// Selects the smoothing kernel by name: `"quartic2u"`, `"uniform"`, or
/// `"triangular"`.
///
/// # Safety
/// `name` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn it_config_set_kernel(
    config: *mut ItConfig,
    name: *const c_char,
) -> c_int {
    guarded(|| {
        need!(config, "config");
        let text = match read_str(name) {
            Ok(s) => s,
            Err(code) => return code,
        };
        (*config).inner.kernel = text.to_string();
        IT_OK
    })
}

/// Selects the weight scheme: `"uniform"` or `"inverse-se"`, optionally
/// suffixed with `"+rescale"` to normalize the plug-in variance to one.
///
/// # Safety
/// `scheme` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn it_config_set_weights(
    config: *mut ItConfig,
    scheme: *const c_char,
) -> c_int {
    guarded(|| {
        need!(config, "config");
        let text = match read_str(scheme) {
            Ok(s) => s,
            Err(code) => return code,
        };
        let (base, rescale) = match text.strip_suffix("+rescale") {
            Some(b) => (b, true),
            None => (text, false),
        };
        let mut weights = match base {
            "uniform" => WeightScheme::uniform(),
            "inverse-se" => WeightScheme::inverse_se(),
            other => {
                set_error(&format!(
                    "weights must be \"uniform\" or \"inverse-se\", got \"{other}\""
                ));
                return IT_ERR_CONFIG;
            }
        };
        weights.se_rescale = rescale;
        (*config).inner.weights = weights;
        IT_OK
    })
}

/// Sets the evaluation grid resolution per axis (same count on each axis).
#[no_mangle]
pub extern "C" fn it_config_set_grid(config: *mut ItConfig, per_axis: usize) -> c_int {
    guarded(|| {
        need!(config, "config");
        let dim = unsafe { (*config).inner.domain.dim() };
        unsafe { (*config).inner.grid = Some(vec![per_axis; dim]) };
        IT_OK
    })
}

/// Frees a configuration handle. Null is ignored.
#[no_mangle]
pub extern "C" fn it_config_free(config: *mut ItConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Runs the test and hands back a report handle.
///
/// Configuration is validated here, not in the setters: an out-of-range
/// level, bandwidth, grid, or similar surfaces as `IT_ERR_CONFIG` from
/// this call, with the detail available from `it_last_error`.
#[no_mangle]
pub extern "C" fn it_run_test(
    dataset: *const ItDataset,
    config: *const ItConfig,
    out: *mut *mut ItReport,
) -> c_int {
    guarded(|| {
        need!(out, "output handle");
        need!(dataset, "dataset");
        need!(config, "config");
        let (data, cfg) = unsafe { (&(*dataset).inner, &(*config).inner) };
        match run_test(data, cfg) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(ItReport { inner })) };
                IT_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// The studentized statistic. NaN if the handle is null.
#[no_mangle]
pub extern "C" fn it_report_statistic(report: *const ItReport) -> f64 {
    if report.is_null() {
        return f64::NAN;
    }
    unsafe { (*report).inner.t_stat }
}

/// The one-sided p-value. NaN if the handle is null.
#[no_mangle]
pub extern "C" fn it_report_p_value(report: *const ItReport) -> f64 {
    if report.is_null() {
        return f64::NAN;
    }
    unsafe { (*report).inner.p_value }
}

/// 1 if the test rejects at the configured level, 0 otherwise (or if the
/// handle is null).
#[no_mangle]
pub extern "C" fn it_report_reject(report: *const ItReport) -> c_int {
    if report.is_null() {
        return 0;
    }
    c_int::from(unsafe { (*report).inner.reject })
}

/// Serializes the full report (statistic, functionals, diagnostics, and
/// the resolved configuration) as a JSON string. The caller owns the
/// returned string and must release it with [`it_string_free`].
#[no_mangle]
pub extern "C" fn it_report_to_json(report: *const ItReport, out: *mut *mut c_char) -> c_int {
    guarded(|| {
        need!(out, "output pointer");
        need!(report, "report");
        let json = match serde_json::to_string_pretty(unsafe { &(*report).inner }) {
            Ok(s) => s,
            Err(e) => {
                set_error(&format!("serialization failed: {e}"));
                return IT_ERR_INVALID_ARG;
            }
        };
        match CString::new(json) {
            Ok(cstr) => {
                unsafe { *out = cstr.into_raw() };
                IT_OK
            }
            Err(_) => {
                set_error("serialized report contained a NUL byte");
                IT_ERR_INVALID_ARG
            }
        }
    })
}

/// Frees a string produced by this library. Null is ignored.
///
/// # Safety
/// `s` must have been returned by a function of this library.
#[no_mangle]
pub unsafe extern "C" fn it_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Frees a report handle. Null is ignored.
#[no_mangle]
pub extern "C" fn it_report_free(report: *mut ItReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn it_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
