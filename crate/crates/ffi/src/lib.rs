//! C ABI over the rq-spice estimator.
//!
//! Objects cross the boundary as opaque pointers created by `rq_*_new`-style functions and
//! released with the matching `rq_*_free`. Fallible functions return an [`RqStatus`]; on a
//! non-zero status the message is available from [`rq_last_error_message`] on the same thread.
//! Complex vectors are passed as interleaved `(re, im)` doubles, matrices column-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use rq_spice::solver::q_from_mu;
use rq_spice::{
    build_sinusoid_dictionary, solve, Dictionary, NoiseMode, Signal, SpiceConfig, SpiceError,
    SpiceSolution, C64,
};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RqNoiseMode {
    Uniform = 0,
    Heteroscedastic = 1,
}

impl From<RqNoiseMode> for NoiseMode {
    fn from(mode: RqNoiseMode) -> Self {
        match mode {
            RqNoiseMode::Uniform => NoiseMode::Uniform,
            RqNoiseMode::Heteroscedastic => NoiseMode::Heteroscedastic,
        }
    }
}

/// A dictionary of atoms, optionally carrying a frequency grid.
pub struct RqDictionary(Dictionary);

/// Solver settings.
pub struct RqConfig(SpiceConfig);

/// Result of a solve.
pub struct RqSolution(SpiceSolution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("interior nul removed")));
}

fn status_of(err: &SpiceError) -> RqStatus {
    match err {
        SpiceError::Dimension(_) => RqStatus::Dimension,
        SpiceError::InvalidParameter(_)
        | SpiceError::DegenerateInput(_)
        | SpiceError::Scenario(_) => RqStatus::InvalidArgument,
        _ => RqStatus::Numerical,
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), (RqStatus, String)>) -> RqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RqStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RqStatus::Panic
        }
    }
}

fn lib(err: SpiceError) -> (RqStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (RqStatus, String) {
    (RqStatus::NullPointer, format!("{name} is null"))
}

unsafe fn read_complex(
    data: *const f64,
    len: usize,
    name: &str,
) -> Result<Vec<C64>, (RqStatus, String)> {
    if data.is_null() {
        return Err(null(name));
    }
    let raw = std::slice::from_raw_parts(data, 2 * len);
    Ok(raw.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect())
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn copy_to<T: Copy>(
    src: &[T],
    dst: *mut T,
    capacity: usize,
) -> Result<(), (RqStatus, String)> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if capacity < src.len() {
        return Err((
            RqStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn rq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes, without the terminator, of the last error message on this thread (0 if none).
#[no_mangle]
pub extern "C" fn rq_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message into `buf` (nul-terminated, truncated to `len - 1` bytes).
/// Returns the number of bytes written, excluding the terminator.
///
/// # Safety
/// `buf` must be valid for writes of `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn rq_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |s| s.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Builds the uniform sinusoid dictionary with atoms at frequencies `k / n_grid`, `k = 1..=n_grid`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rq_dictionary_sinusoid(
    n_samples: usize,
    n_grid: usize,
    out: *mut *mut RqDictionary,
) -> RqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dict = build_sinusoid_dictionary(n_samples, n_grid).map_err(lib)?;
        write_out(out, RqDictionary(dict));
        Ok(())
    })
}

/// Copies an `n_samples x n_atoms` column-major complex matrix into a new dictionary.
///
/// # Safety
/// `data` must hold `2 * n_samples * n_atoms` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rq_dictionary_from_matrix(
    data: *const f64,
    n_samples: usize,
    n_atoms: usize,
    out: *mut *mut RqDictionary,
) -> RqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_samples
            .checked_mul(n_atoms)
            .ok_or_else(|| (RqStatus::Dimension, "matrix size overflows".to_string()))?;
        let values = read_complex(data, len, "data")?;
        let dict = Dictionary::from_matrix(DMatrix::from_column_slice(n_samples, n_atoms, &values))
            .map_err(lib)?;
        write_out(out, RqDictionary(dict));
        Ok(())
    })
}

/// # Safety
/// `dict` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rq_dictionary_free(dict: *mut RqDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// # Safety
/// `dict` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_dictionary_n_samples(dict: *const RqDictionary) -> usize {
    dict.as_ref().map_or(0, |d| d.0.n_samples())
}

/// # Safety
/// `dict` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_dictionary_n_atoms(dict: *const RqDictionary) -> usize {
    dict.as_ref().map_or(0, |d| d.0.n_atoms())
}

/// New configuration with `r = 1`, the given `q` and noise mode, and default tolerances.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rq_config_new(
    q: f64,
    mode: RqNoiseMode,
    out: *mut *mut RqConfig,
) -> RqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = SpiceConfig::new(q, mode.into());
        config.validate().map_err(lib)?;
        write_out(out, RqConfig(config));
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_config_set_tolerance(
    config: *mut RqConfig,
    rel_tolerance: f64,
) -> RqStatus {
    guard(|| {
        let config = config.as_mut().ok_or_else(|| null("config"))?;
        let updated = config.0.clone().with_tolerance(rel_tolerance);
        updated.validate().map_err(lib)?;
        config.0 = updated;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_config_set_max_iterations(
    config: *mut RqConfig,
    max_iterations: usize,
) -> RqStatus {
    guard(|| {
        let config = config.as_mut().ok_or_else(|| null("config"))?;
        let updated = config.0.clone().with_max_iterations(max_iterations);
        updated.validate().map_err(lib)?;
        config.0 = updated;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rq_config_free(config: *mut RqConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Solves for the observation `y` (`n_samples` interleaved complex values). A run that hits the
/// iteration limit still returns `RQ_STATUS_OK`; check [`rq_solution_converged`].
///
/// # Safety
/// `dict` and `config` must be live handles, `y` must hold `2 * n_samples` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rq_solve(
    dict: *const RqDictionary,
    config: *const RqConfig,
    y: *const f64,
    n_samples: usize,
    out: *mut *mut RqSolution,
) -> RqStatus {
    guard(|| {
        let dict = dict.as_ref().ok_or_else(|| null("dict"))?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let signal = Signal::from_vec(read_complex(y, n_samples, "y")?).map_err(lib)?;
        let solution = solve(&signal, &dict.0, &config.0).map_err(lib)?;
        write_out(out, RqSolution(solution));
        Ok(())
    })
}

/// # Safety
/// `solution` must be null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_free(solution: *mut RqSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_n_atoms(solution: *const RqSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.x_hat.len())
}

/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_n_noise(solution: *const RqSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.state.sigma.len())
}

/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_converged(solution: *const RqSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.0.converged)
}

/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_iterations(solution: *const RqSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.iterations)
}

/// Final objective value, or NaN for a null handle.
///
/// # Safety
/// `solution` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_objective(solution: *const RqSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.objective())
}

/// Copies the amplitudes as `2 * n_atoms` interleaved doubles; `capacity` counts doubles.
///
/// # Safety
/// `solution` must be a live handle and `out` valid for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_amplitudes(
    solution: *const RqSolution,
    out: *mut f64,
    capacity: usize,
) -> RqStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let flat: Vec<f64> = s.0.x_hat.iter().flat_map(|c| [c.re, c.im]).collect();
        copy_to(&flat, out, capacity)
    })
}

/// Copies the `n_atoms` powers.
///
/// # Safety
/// `solution` must be a live handle and `out` valid for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_powers(
    solution: *const RqSolution,
    out: *mut f64,
    capacity: usize,
) -> RqStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_to(&s.0.state.p, out, capacity)
    })
}

/// Copies the `n_noise` noise variances.
///
/// # Safety
/// `solution` must be a live handle and `out` valid for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rq_solution_noise(
    solution: *const RqSolution,
    out: *mut f64,
    capacity: usize,
) -> RqStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_to(&s.0.state.sigma, out, capacity)
    })
}

/// `q = -ln N / (2 ln mu)`, the `q` whose square-root LASSO level is `mu` at `n_samples`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rq_q_from_mu(mu: f64, n_samples: usize, out: *mut f64) -> RqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = q_from_mu(mu, n_samples).map_err(lib)?;
        Ok(())
    })
}
