//! C ABI for the `mrl` laboratory.
//!
//! Conventions:
//! - Every fallible function returns an [`MrlStatus`]; results go through
//!   out-pointers that are written only on success.
//! - Handles are opaque and owned by the caller once returned; release each
//!   with its `_free` function. Passing NULL to a `_free` function is a no-op.
//! - Strings returned as `char *` are owned by the caller and released with
//!   [`mrl_string_free`].
//! - The message of the most recent failure on the calling thread is
//!   available from [`mrl_last_error_message`].
//! - Panics never cross the boundary; they are reported as
//!   [`MrlStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mrl::coefficients::SymMatrix;
use mrl::config::{ExperimentConfig, SuiteName};
use mrl::kernel::{kernel_derivative, kernel_value, Covariance, MultiIndex};
use mrl::report::VerificationReport;
use mrl::suites::{run_suite, SuiteOutput};
use mrl::Error;

/// Outcome of an `mrl_*` call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Domain = 4,
    Unsupported = 5,
    Io = 6,
    /// Another library error; see the last error message.
    Failed = 7,
    /// A panic was caught at the boundary.
    Internal = 8,
}

/// Suite selector for `mrl_run_suite`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MrlSuite {
    Kernel = 0,
    Hormander = 1,
    Solver = 2,
    Operators = 3,
    Maxreg = 4,
    MomentSobolev = 5,
    All = 6,
}

impl From<MrlSuite> for SuiteName {
    fn from(s: MrlSuite) -> Self {
        match s {
            MrlSuite::Kernel => SuiteName::Kernel,
            MrlSuite::Hormander => SuiteName::Hormander,
            MrlSuite::Solver => SuiteName::Solver,
            MrlSuite::Operators => SuiteName::Operators,
            MrlSuite::Maxreg => SuiteName::Maxreg,
            MrlSuite::MomentSobolev => SuiteName::MomentSobolev,
            MrlSuite::All => SuiteName::All,
        }
    }
}

/// Opaque experiment configuration.
pub struct MrlConfig(ExperimentConfig);

/// Opaque list of verification reports.
pub struct MrlReports(SuiteOutput);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MrlStatus {
    match e {
        Error::InvalidArgument(_)
        | Error::InvalidBand { .. }
        | Error::DimensionMismatch(_)
        | Error::Cfl { .. } => MrlStatus::InvalidArgument,
        Error::Config { .. } => MrlStatus::Config,
        Error::Domain(_) => MrlStatus::Domain,
        Error::Unsupported(_) => MrlStatus::Unsupported,
        Error::Io(_) | Error::FieldFormat { .. } => MrlStatus::Io,
        Error::Context { source, .. } => status_of(source),
        _ => MrlStatus::Failed,
    }
}

/// Runs `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), (MrlStatus, String)>) -> MrlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MrlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic caught at the C boundary".into());
            MrlStatus::Internal
        }
    }
}

fn lib(e: Error) -> (MrlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MrlStatus, String) {
    (MrlStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (MrlStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (MrlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn owned_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("interior NULs removed")
        .into_raw()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mrl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer returned by an `mrl_*` function that
/// transfers string ownership, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrl_config_from_toml(
    text: *const c_char,
    out: *mut *mut MrlConfig,
) -> MrlStatus {
    guard(|| {
        let text = read_str(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ExperimentConfig::from_toml(text).map_err(lib)?;
        *out = Box::into_raw(Box::new(MrlConfig(cfg)));
        Ok(())
    })
}

/// Loads and validates a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrl_config_load(
    path: *const c_char,
    out: *mut *mut MrlConfig,
) -> MrlStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ExperimentConfig::load(Path::new(path)).map_err(lib)?;
        *out = Box::into_raw(Box::new(MrlConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from `mrl_config_*`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrl_config_free(cfg: *mut MrlConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Replaces the master seed.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mrl_config_set_seed(cfg: *mut MrlConfig, seed: u64) -> MrlStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.0.seed = seed;
        Ok(())
    })
}

/// Hex SHA-256 of the canonical serialization; free with `mrl_string_free`.
///
/// # Safety
/// `cfg` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrl_config_hash(
    cfg: *const MrlConfig,
    out: *mut *mut c_char,
) -> MrlStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = owned_string(&cfg.0.hash());
        Ok(())
    })
}

/// Runs one suite and returns its reports.
///
/// # Safety
/// `cfg` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrl_run_suite(
    cfg: *const MrlConfig,
    suite: MrlSuite,
    out: *mut *mut MrlReports,
) -> MrlStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let reports = run_suite(&cfg.0, suite.into()).map_err(lib)?;
        *out = Box::into_raw(Box::new(MrlReports(reports)));
        Ok(())
    })
}

/// # Safety
/// `reports` must be NULL or a handle from `mrl_run_suite`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mrl_reports_free(reports: *mut MrlReports) {
    if !reports.is_null() {
        drop(Box::from_raw(reports));
    }
}

/// Number of reports; 0 for NULL.
///
/// # Safety
/// `reports` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mrl_reports_len(reports: *const MrlReports) -> usize {
    reports.as_ref().map_or(0, |r| r.0.reports.len())
}

unsafe fn report_at<'a>(
    reports: *const MrlReports,
    index: usize,
) -> Result<&'a VerificationReport, (MrlStatus, String)> {
    let reports = reports.as_ref().ok_or_else(|| null("reports"))?;
    reports.0.reports.get(index).ok_or_else(|| {
        (
            MrlStatus::InvalidArgument,
            format!(
                "report index {index} out of range ({} reports)",
                reports.0.reports.len()
            ),
        )
    })
}

/// Observed value and pass flag of report `index`.
///
/// # Safety
/// `reports` must be a live handle; `observed` and `passed` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mrl_report_result(
    reports: *const MrlReports,
    index: usize,
    observed: *mut f64,
    passed: *mut bool,
) -> MrlStatus {
    guard(|| {
        let r = report_at(reports, index)?;
        if observed.is_null() || passed.is_null() {
            return Err(null("output pointer"));
        }
        *observed = r.observed;
        *passed = r.passed();
        Ok(())
    })
}

/// Name of report `index`; free with `mrl_string_free`.
///
/// # Safety
/// `reports` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrl_report_name(
    reports: *const MrlReports,
    index: usize,
    out: *mut *mut c_char,
) -> MrlStatus {
    guard(|| {
        let r = report_at(reports, index)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = owned_string(&r.name);
        Ok(())
    })
}

/// All reports as CSV (the CLI's `reports.csv`); free with `mrl_string_free`.
///
/// # Safety
/// `reports` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mrl_reports_csv(
    reports: *const MrlReports,
    out: *mut *mut c_char,
) -> MrlStatus {
    guard(|| {
        let reports = reports.as_ref().ok_or_else(|| null("reports"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = owned_string(&reports.0.csv());
        Ok(())
    })
}

/// D^γ p for the Gaussian kernel with covariance matrix `a` (row-major,
/// dim × dim, symmetric positive definite) at point `x` (dim entries).
/// `gamma` holds dim derivative orders; NULL means no derivative.
///
/// # Safety
/// `a` must point to dim² doubles, `x` to dim doubles, `gamma` to NULL or
/// dim `uint32_t`s, and `out` to a double.
#[no_mangle]
pub unsafe extern "C" fn mrl_kernel_derivative(
    dim: usize,
    a: *const f64,
    x: *const f64,
    gamma: *const u32,
    out: *mut f64,
) -> MrlStatus {
    guard(|| {
        if a.is_null() || x.is_null() || out.is_null() {
            return Err(null("a, x or out"));
        }
        if !(1..=3).contains(&dim) {
            return Err((
                MrlStatus::InvalidArgument,
                format!("dim must be 1, 2 or 3 (got {dim})"),
            ));
        }
        let a = std::slice::from_raw_parts(a, dim * dim);
        let x = std::slice::from_raw_parts(x, dim);
        let cov = Covariance::from_matrix(&SymMatrix::from_row_major(dim, a).map_err(lib)?, 0.0)
            .map_err(lib)?;
        *out = if gamma.is_null() {
            kernel_value(&cov, x)
        } else {
            let orders = std::slice::from_raw_parts(gamma, dim)
                .iter()
                .map(|&g| g as usize)
                .collect();
            kernel_derivative(&cov, x, &MultiIndex::new(orders).map_err(lib)?, None).map_err(lib)?
        };
        Ok(())
    })
}
