//! C ABI over `panelfactor`.
//!
//! Datasets and fits are opaque heap handles released with their `*_free`
//! function. Every fallible call returns a [`PfStatus`]; the message of the
//! most recent failure on the calling thread is available from
//! [`pf_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use panelfactor::bootstrap::bootstrap_test;
use panelfactor::panel::load_csv;
use panelfactor::{BandwidthSpec, ColumnMapping, Error, FitResult, PanelDataset};

/// Status codes. Values 10–29 are input errors, 30 and above numerical ones.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    LengthMismatch = 3,
    Panic = 4,
    MissingColumn = 10,
    UnbalancedPanel = 11,
    DuplicateCell = 12,
    NonFiniteValue = 13,
    TimeVaryingColumnViolation = 14,
    ConstantRegressor = 15,
    Csv = 16,
    Io = 17,
    IndexOutOfRange = 18,
    DimensionMismatch = 19,
    DegenerateScale = 20,
    InvalidArgument = 21,
    GridOutsideHull = 22,
    InsufficientLocalData = 30,
    SingularDesign = 31,
    ZeroVariance = 32,
    TooManyFailures = 33,
}

impl From<&Error> for PfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::MissingColumn(_) => Self::MissingColumn,
            Error::UnbalancedPanel { .. } => Self::UnbalancedPanel,
            Error::DuplicateCell { .. } => Self::DuplicateCell,
            Error::NonFiniteValue { .. } => Self::NonFiniteValue,
            Error::TimeVaryingColumnViolation { .. } => Self::TimeVaryingColumnViolation,
            Error::ConstantRegressor { .. } => Self::ConstantRegressor,
            Error::Csv(_) => Self::Csv,
            Error::Io(_) => Self::Io,
            Error::IndexOutOfRange { .. } => Self::IndexOutOfRange,
            Error::DimensionMismatch { .. } => Self::DimensionMismatch,
            Error::DegenerateScale => Self::DegenerateScale,
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::GridOutsideHull { .. } => Self::GridOutsideHull,
            Error::InsufficientLocalData { .. } => Self::InsufficientLocalData,
            Error::SingularDesign(_) => Self::SingularDesign,
            Error::ZeroVariance { .. } => Self::ZeroVariance,
            Error::TooManyFailures { .. } => Self::TooManyFailures,
        }
    }
}

/// Opaque balanced panel.
pub struct PfDataset(PanelDataset);

/// Opaque profile fit, carrying the bandwidths it was computed with.
pub struct PfFit(FitResult);

/// Specification test output. `p_bootstrap` is NaN when no bootstrap was run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfTestResult {
    pub v_nt: f64,
    pub upsilon0_hat: f64,
    pub standardized: f64,
    pub p_asymptotic: f64,
    pub p_bootstrap: f64,
    pub bootstrap_replications: usize,
    pub n_pairs: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(PfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PfStatus::from(&e), format!("{}: {e}", e.name()))
    }
}

fn null(what: &str) -> Failure {
    Failure(PfStatus::NullPointer, format!("{what} is null"))
}

/// Run `body`, translating errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            PfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside panelfactor");
            PfStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(PfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

unsafe fn write_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len != values.len() {
        return Err(Failure(
            PfStatus::LengthMismatch,
            format!("output buffer holds {len} values, {} required", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, len);
    Ok(())
}

/// Build a dataset from unit-major arrays: `y` has `n_units * n_periods`
/// entries, `x` and `w` are row-major with `d_x` and `d_w` columns.
///
/// # Safety
/// The arrays must hold at least the stated number of doubles and `out`
/// must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_new(
    n_units: usize,
    n_periods: usize,
    y: *const f64,
    x: *const f64,
    d_x: usize,
    w: *const f64,
    d_w: usize,
    out: *mut *mut PfDataset,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let size = |a: usize, b: usize| {
            a.checked_mul(b)
                .ok_or_else(|| Failure(PfStatus::InvalidArgument, "panel dimensions overflow".into()))
        };
        let n = size(n_units, n_periods)?;
        let (nx, nw) = (size(n, d_x)?, size(n, d_w)?);
        let ds = PanelDataset::new(
            n_units,
            n_periods,
            slice(y, n, "y")?.to_vec(),
            slice(x, nx, "x")?.to_vec(),
            d_x,
            slice(w, nw, "w")?.to_vec(),
            d_w,
        )?;
        *out = Box::into_raw(Box::new(PfDataset(ds)));
        Ok(())
    })
}

/// Load a long-format CSV. `x` and `w` are comma-separated column lists;
/// `time_only` may be null.
///
/// # Safety
/// String arguments must be null-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_load_csv(
    path: *const c_char,
    unit: *const c_char,
    time: *const c_char,
    y: *const c_char,
    x: *const c_char,
    w: *const c_char,
    time_only: *const c_char,
    out: *mut *mut PfDataset,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mapping = ColumnMapping {
            unit: string(unit, "unit")?,
            time: string(time, "time")?,
            y: string(y, "y")?,
            x: split_list(&string(x, "x")?),
            w: split_list(&string(w, "w")?),
            time_only: if time_only.is_null() {
                Vec::new()
            } else {
                split_list(&string(time_only, "time_only")?)
            },
        };
        let ds = load_csv(string(path, "path")?, &mapping)?;
        *out = Box::into_raw(Box::new(PfDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from a `pf_dataset_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_free(ds: *mut PfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Panel sizes; any output pointer may be null.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn pf_dataset_dims(
    ds: *const PfDataset,
    n_units: *mut usize,
    n_periods: *mut usize,
    d_x: *mut usize,
    d_w: *mut usize,
) -> PfStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        for (p, v) in [
            (n_units, ds.n_units()),
            (n_periods, ds.n_periods()),
            (d_x, ds.d_x()),
            (d_w, ds.d_w()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Profile least-squares fit. Pass a null pointer (or zero length) for
/// either bandwidth vector to use the rule of thumb; a single value is
/// applied to every coordinate.
///
/// # Safety
/// `ds` must be a live handle; bandwidth arrays must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pf_fit(
    ds: *const PfDataset,
    h_est: *const f64,
    n_h_est: usize,
    h_test: *const f64,
    n_h_test: usize,
    out: *mut *mut PfFit,
) -> PfStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let h_est = if h_est.is_null() || n_h_est == 0 {
            None
        } else {
            Some(slice(h_est, n_h_est, "h_est")?)
        };
        let h_test = if h_test.is_null() || n_h_test == 0 {
            None
        } else {
            Some(slice(h_test, n_h_test, "h_test")?)
        };
        let bw = BandwidthSpec::resolve(ds, h_est, h_test)?;
        let fit = panelfactor::fit(ds, &bw)?;
        *out = Box::into_raw(Box::new(PfFit(fit)));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from [`pf_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_free(fit: *mut PfFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of slope coefficients, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_d_x(fit: *const PfFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.d_x())
}

unsafe fn copy_from_fit(
    fit: *const PfFit,
    out: *mut f64,
    len: usize,
    values: impl FnOnce(&FitResult) -> Vec<f64>,
) -> PfStatus {
    guard(|| {
        let f = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        write_out(&values(f), out, len)
    })
}

/// `β̂`; `len` must equal `d_x`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_beta(fit: *const PfFit, out: *mut f64, len: usize) -> PfStatus {
    copy_from_fit(fit, out, len, |f| f.beta_hat.clone())
}

/// Clustered standard errors; `len` must equal `d_x`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_std_errors(fit: *const PfFit, out: *mut f64, len: usize) -> PfStatus {
    copy_from_fit(fit, out, len, |f| f.std_errors())
}

/// Row-major covariance of `β̂`; `len` must equal `d_x * d_x`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_vcov(fit: *const PfFit, out: *mut f64, len: usize) -> PfStatus {
    copy_from_fit(fit, out, len, |f| f.vcov_beta.clone())
}

/// `ĝ` at the sample rows; `len` must equal `n_units * n_periods`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_g_hat(fit: *const PfFit, out: *mut f64, len: usize) -> PfStatus {
    copy_from_fit(fit, out, len, |f| f.g_hat_at_sample.clone())
}

/// Residuals; `len` must equal `n_units * n_periods`.
///
/// # Safety
/// `fit` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_residuals(fit: *const PfFit, out: *mut f64, len: usize) -> PfStatus {
    copy_from_fit(fit, out, len, |f| f.residuals.clone())
}

/// Specification test on `fit`. `bootstrap = 0` skips the bootstrap p-value.
///
/// # Safety
/// `ds` and `fit` must be live handles, with `fit` computed from `ds`.
#[no_mangle]
pub unsafe extern "C" fn pf_spec_test(
    ds: *const PfDataset,
    fit: *const PfFit,
    bootstrap: usize,
    seed: u64,
    out: *mut PfTestResult,
) -> PfStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        let fit = &fit.as_ref().ok_or_else(|| null("fit"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = bootstrap_test(ds, &fit.bandwidths, fit, bootstrap, seed)?;
        *out = PfTestResult {
            v_nt: r.v_nt,
            upsilon0_hat: r.upsilon0_hat,
            standardized: r.standardized,
            p_asymptotic: r.p_asymptotic,
            p_bootstrap: r.p_bootstrap.unwrap_or(f64::NAN),
            bootstrap_replications: r.bootstrap_replications,
            n_pairs: r.n_pairs,
        };
        Ok(())
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `pf_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn pf_status_name(status: PfStatus) -> *const c_char {
    let name: &'static CStr = match status {
        PfStatus::Ok => c"Ok",
        PfStatus::NullPointer => c"NullPointer",
        PfStatus::InvalidUtf8 => c"InvalidUtf8",
        PfStatus::LengthMismatch => c"LengthMismatch",
        PfStatus::Panic => c"Panic",
        PfStatus::MissingColumn => c"MissingColumn",
        PfStatus::UnbalancedPanel => c"UnbalancedPanel",
        PfStatus::DuplicateCell => c"DuplicateCell",
        PfStatus::NonFiniteValue => c"NonFiniteValue",
        PfStatus::TimeVaryingColumnViolation => c"TimeVaryingColumnViolation",
        PfStatus::ConstantRegressor => c"ConstantRegressor",
        PfStatus::Csv => c"Csv",
        PfStatus::Io => c"Io",
        PfStatus::IndexOutOfRange => c"IndexOutOfRange",
        PfStatus::DimensionMismatch => c"DimensionMismatch",
        PfStatus::DegenerateScale => c"DegenerateScale",
        PfStatus::InvalidArgument => c"InvalidArgument",
        PfStatus::GridOutsideHull => c"GridOutsideHull",
        PfStatus::InsufficientLocalData => c"InsufficientLocalData",
        PfStatus::SingularDesign => c"SingularDesign",
        PfStatus::ZeroVariance => c"ZeroVariance",
        PfStatus::TooManyFailures => c"TooManyFailures",
    };
    name.as_ptr()
}

/// Library version string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
