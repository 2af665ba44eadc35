//! C ABI for the bifrom toolkit.
//!
//! Opaque handles own the Rust state, every call returns a status code, and
//! a thread-local message explains the most recent failure. The header is
//! generated by cbindgen into `include/bifrom.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use bifrom::fom::{self, FomConfig, ParameterPoint, StateVec};
use bifrom::pipeline::{self, RunConfig};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BifromStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    ConvergenceFailure = 3,
    IoError = 4,
    InvalidArgument = 5,
}

/// Solve metadata reported by `bifrom_model_steady_solve`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BifromSolveInfo {
    pub steps: u64,
    /// 1 when the stopping rule fired within the step budget.
    pub converged: i32,
    /// Last increment measured by the stopping rule.
    pub final_increment: f64,
}

/// Opaque full-order model handle: configuration plus discrete operators.
pub struct BifromModel {
    cfg: FomConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let owned = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(owned).unwrap_or_default();
    });
}

/// Copies the most recent error message of this thread into `buf`
/// (NUL-terminated, truncated to `cap` bytes) and returns the full length
/// including the terminator. A zero `cap` just queries the length.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be null with
/// `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn bifrom_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            // Guarantee termination even when truncated.
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Version of the underlying toolkit as a static string; never freed.
#[no_mangle]
pub extern "C" fn bifrom_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Creates a model. `config_text` may be null for the defaults, or hold the
/// same UTF-8 `key=value` lines the CLI accepts (unknown keys rejected).
///
/// # Safety
/// `config_text`, when non-null, must be a NUL-terminated string; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bifrom_model_create(
    config_text: *const c_char,
    out: *mut *mut BifromModel,
) -> BifromStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return BifromStatus::NullPointer;
    }
    *out = ptr::null_mut();
    let run_config = if config_text.is_null() {
        RunConfig::default()
    } else {
        let text = match CStr::from_ptr(config_text).to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("config text is not valid UTF-8");
                return BifromStatus::InvalidConfig;
            }
        };
        match RunConfig::parse(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(e.to_string());
                return BifromStatus::InvalidConfig;
            }
        }
    };
    let cfg = run_config.fom_config();
    if let Err(e) = cfg.validate() {
        set_error(e.to_string());
        return BifromStatus::InvalidConfig;
    }
    *out = Box::into_raw(Box::new(BifromModel { cfg }));
    BifromStatus::Ok
}

/// Releases a model handle; null is a no-op.
///
/// # Safety
/// `model` must have been returned by `bifrom_model_create` and not freed
/// before.
#[no_mangle]
pub unsafe extern "C" fn bifrom_model_free(model: *mut BifromModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the stacked state vector (both fields).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bifrom_model_state_len(model: *const BifromModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).cfg.state_len()
}

/// Critical reaction strength of the trivial branch at diffusivity `mu2`.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bifrom_model_critical_mu1(model: *const BifromModel, mu2: f64) -> f64 {
    if model.is_null() {
        return f64::NAN;
    }
    fom::critical_mu1(&(*model).cfg, mu2)
}

/// Marches the model to a steady state at `(mu1, mu2)` from the branch-bias
/// guess and writes the stacked state into `state_out`.
///
/// Returns `ConvergenceFailure` when the march exhausts its step budget or
/// leaves the finite range; the state written so far is still valid.
///
/// # Safety
/// `model` must be a live handle; `state_out` must point to
/// `bifrom_model_state_len(model)` writable doubles; `info`, when non-null,
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bifrom_model_steady_solve(
    model: *const BifromModel,
    mu1: f64,
    mu2: f64,
    state_out: *mut f64,
    state_len: usize,
    info: *mut BifromSolveInfo,
) -> BifromStatus {
    if model.is_null() || state_out.is_null() {
        set_error("null model or output buffer");
        return BifromStatus::NullPointer;
    }
    let cfg = &(*model).cfg;
    if state_len != cfg.state_len() {
        set_error(format!(
            "state buffer holds {state_len} doubles, model needs {}",
            cfg.state_len()
        ));
        return BifromStatus::InvalidArgument;
    }
    let params = ParameterPoint::new(mu1, mu2);
    if !cfg.contains(params) {
        set_error(format!(
            "({mu1}, {mu2}) outside the configured parameter box"
        ));
        return BifromStatus::InvalidArgument;
    }
    match fom::steady_solve(cfg, params, &cfg.bias_guess()) {
        Ok(solution) => {
            ptr::copy_nonoverlapping(solution.state.as_slice().as_ptr(), state_out, state_len);
            if !info.is_null() {
                *info = BifromSolveInfo {
                    steps: solution.steps_taken as u64,
                    converged: i32::from(solution.converged),
                    final_increment: solution.final_increment,
                };
            }
            if solution.converged {
                BifromStatus::Ok
            } else {
                set_error(format!(
                    "march did not converge in {} steps (increment {:.3e})",
                    solution.steps_taken, solution.final_increment
                ));
                BifromStatus::ConvergenceFailure
            }
        }
        Err(e) => {
            set_error(e.to_string());
            BifromStatus::ConvergenceFailure
        }
    }
}

/// Probe observable: the first-field value at the node nearest the domain
/// midpoint.
///
/// # Safety
/// `state` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn bifrom_probe(state: *const f64, len: usize) -> f64 {
    if state.is_null() || len < 2 {
        return f64::NAN;
    }
    let slice = std::slice::from_raw_parts(state, len);
    fom::probe(&StateVec::from_column_slice(slice))
}

/// Saves a row-major matrix in the toolkit's binary format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `data` must point to
/// `rows * cols` readable doubles (may be null when the matrix is empty).
#[no_mangle]
pub unsafe extern "C" fn bifrom_matrix_save(
    path: *const c_char,
    rows: usize,
    cols: usize,
    data: *const f64,
) -> BifromStatus {
    if path.is_null() || (data.is_null() && rows * cols > 0) {
        set_error("null path or data");
        return BifromStatus::NullPointer;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return BifromStatus::InvalidArgument;
        }
    };
    let values = if rows * cols > 0 {
        std::slice::from_raw_parts(data, rows * cols)
    } else {
        &[]
    };
    let matrix = nalgebra::DMatrix::from_fn(rows, cols, |i, j| values[i * cols + j]);
    match pipeline::save_matrix(Path::new(path), &matrix) {
        Ok(()) => BifromStatus::Ok,
        Err(e) => {
            set_error(e.to_string());
            BifromStatus::IoError
        }
    }
}

/// Loads a matrix saved by `bifrom_matrix_save` (or the pipeline). On
/// success `*data_out` owns `*rows * *cols` doubles in row-major order;
/// release it with `bifrom_buffer_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `rows`, `cols` and `data_out`
/// must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn bifrom_matrix_load(
    path: *const c_char,
    rows: *mut usize,
    cols: *mut usize,
    data_out: *mut *mut f64,
) -> BifromStatus {
    if path.is_null() || rows.is_null() || cols.is_null() || data_out.is_null() {
        set_error("null argument");
        return BifromStatus::NullPointer;
    }
    *data_out = ptr::null_mut();
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return BifromStatus::InvalidArgument;
        }
    };
    match pipeline::load_matrix(Path::new(path)) {
        Ok(matrix) => {
            *rows = matrix.nrows();
            *cols = matrix.ncols();
            let mut buffer = Vec::with_capacity(matrix.len());
            for i in 0..matrix.nrows() {
                for j in 0..matrix.ncols() {
                    buffer.push(matrix[(i, j)]);
                }
            }
            let mut boxed = buffer.into_boxed_slice();
            *data_out = boxed.as_mut_ptr();
            std::mem::forget(boxed);
            BifromStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            BifromStatus::IoError
        }
    }
}

/// Releases a buffer returned by `bifrom_matrix_load`.
///
/// # Safety
/// `data` must have come from `bifrom_matrix_load` with the matching `len`
/// (`rows * cols`), or be null.
#[no_mangle]
pub unsafe extern "C" fn bifrom_buffer_free(data: *mut f64, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}
