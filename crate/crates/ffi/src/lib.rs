//! C interface to polyfeedback.
//!
//! Every fallible call returns a [`PfStatus`]; on failure the message is
//! available from [`pf_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function. Strings returned through
//! out-parameters are released with [`pf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;

use polyfeedback::benchmarks::benchmark;
use polyfeedback::dynamics::ControlSystem;
use polyfeedback::experiment::{run_experiment, ExperimentConfig, ModelArtifact};
use polyfeedback::model::PolynomialModel;
use polyfeedback::oracles::solve_are;
use polyfeedback::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    InfeasibleInitialGuess = 5,
    Format = 6,
    Io = 7,
    Numerical = 8,
    Panic = 9,
}

/// Closed-loop system of a registered benchmark.
pub struct PfSystem {
    inner: ControlSystem,
}

/// Trained polynomial value function.
pub struct PfModel {
    inner: PolynomialModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> PfStatus {
    match err {
        Error::Config(_) => PfStatus::Config,
        Error::InfeasibleInitialGuess(_) => PfStatus::InfeasibleInitialGuess,
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::Disconnected { .. } | Error::SizeOverflow { .. } => {
            PfStatus::InvalidArgument
        }
        Error::Format(_) | Error::Json(_) => PfStatus::Format,
        Error::Io(_) => PfStatus::Io,
        _ => PfStatus::Numerical,
    }
}

struct Failure(PfStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, records any error or panic and returns the status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            PfStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn dim_check(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(Failure(PfStatus::InvalidArgument, format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PfStatus::Format, "output contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string produced by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates the system of a registered benchmark. Pass NaN for `beta` to keep
/// the benchmark's default control weight.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_system_new(name: *const c_char, beta: f64, out: *mut *mut PfSystem) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = read_str(name, "name")?;
        let spec = benchmark(name, (!beta.is_nan()).then_some(beta))?;
        *out = Box::into_raw(Box::new(PfSystem { inner: spec.system }));
        Ok(())
    })
}

/// # Safety
/// `system` must be NULL or a handle from [`pf_system_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_system_free(system: *mut PfSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// State dimension, 0 for a NULL handle.
///
/// # Safety
/// `system` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_system_dim(system: *const PfSystem) -> usize {
    system.as_ref().map_or(0, |s| s.inner.dim())
}

/// Control dimension, 0 for a NULL handle.
///
/// # Safety
/// `system` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_system_control_dim(system: *const PfSystem) -> usize {
    system.as_ref().map_or(0, |s| s.inner.control_dim())
}

/// Loads a model from the JSON of a model artifact (`{basis, scale, theta}`).
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_model_from_json(json: *const c_char, out: *mut *mut PfModel) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(json, "json")?;
        let artifact: ModelArtifact = serde_json::from_str(text).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(PfModel { inner: artifact.model()? }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`pf_model_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_model_free(model: *mut PfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension, 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_model_dim(model: *const PfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Number of basis functions, 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_model_len(model: *const PfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.theta().len())
}

/// Value and gradient of `v` at `y`. `gradient` may be NULL.
///
/// # Safety
/// `y` and a non-NULL `gradient` must each hold `dim` doubles; `value` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_model_eval(
    model: *const PfModel,
    y: *const f64,
    dim: usize,
    value: *mut f64,
    gradient: *mut f64,
) -> PfStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        dim_check(dim, model.dim(), "y")?;
        let y = read_slice(y, dim, "y")?;
        if value.is_null() {
            return Err(null("value"));
        }
        let eval = model.eval(y, false);
        *value = eval.value;
        if !gradient.is_null() {
            write_slice(gradient, dim, "gradient")?.copy_from_slice(eval.gradient.as_slice());
        }
        Ok(())
    })
}

/// Feedback control `u = −(1/β) Bᵀ ∇v(y)`.
///
/// # Safety
/// `y` must hold `dim` doubles and `u` must hold `control_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_feedback(
    system: *const PfSystem,
    model: *const PfModel,
    y: *const f64,
    dim: usize,
    u: *mut f64,
    control_dim: usize,
) -> PfStatus {
    guard(|| {
        let sys = &system.as_ref().ok_or_else(|| null("system"))?.inner;
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        dim_check(dim, sys.dim(), "y")?;
        dim_check(model.dim(), sys.dim(), "model state")?;
        dim_check(control_dim, sys.control_dim(), "u")?;
        let y = read_slice(y, dim, "y")?;
        let u = write_slice(u, control_dim, "u")?;
        let eval = model.eval(y, false);
        sys.feedback_from_gradient(eval.gradient.as_slice(), u);
        Ok(())
    })
}

/// Solves `AᵀP + PA − (1/β)PBBᵀP + Q = 0`. Matrices are row-major: `a` and
/// `q` are `d×d`, `b` is `d×m`. Writes `P` (`d×d`) and the gain
/// `K = (1/β)BᵀP` (`m×d`); `residual` may be NULL.
///
/// # Safety
/// All non-NULL pointers must reference buffers of the stated sizes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pf_solve_are(
    a: *const f64,
    b: *const f64,
    q: *const f64,
    d: usize,
    m: usize,
    beta: f64,
    p_out: *mut f64,
    k_out: *mut f64,
    residual: *mut f64,
) -> PfStatus {
    guard(|| {
        if d == 0 || m == 0 {
            return Err(Failure(PfStatus::InvalidArgument, "dimensions must be positive".into()));
        }
        let a = DMatrix::from_row_slice(d, d, read_slice(a, d * d, "a")?);
        let b = DMatrix::from_row_slice(d, m, read_slice(b, d * m, "b")?);
        let q = DMatrix::from_row_slice(d, d, read_slice(q, d * d, "q")?);
        let sol = solve_are(&a, &b, &q, beta)?;
        let p_out = write_slice(p_out, d * d, "p_out")?;
        let k_out = write_slice(k_out, m * d, "k_out")?;
        for i in 0..d {
            for j in 0..d {
                p_out[i * d + j] = sol.p[(i, j)];
            }
        }
        for i in 0..m {
            for j in 0..d {
                k_out[i * d + j] = sol.gain[(i, j)];
            }
        }
        if !residual.is_null() {
            *residual = sol.residual;
        }
        Ok(())
    })
}

/// Runs an experiment from a JSON config and returns the run artifacts as a
/// JSON array in `out` (release with [`pf_string_free`]).
///
/// # Safety
/// `config_json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_run_experiment(config_json: *const c_char, out: *mut *mut c_char) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ExperimentConfig::from_json(read_str(config_json, "config_json")?)?;
        let runs = run_experiment(&cfg)?;
        *out = into_c_string(serde_json::to_string(&runs).map_err(Error::from)?)?;
        Ok(())
    })
}
