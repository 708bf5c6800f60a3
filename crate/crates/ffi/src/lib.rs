//! C interface to `relaxmcr`.
//!
//! Every fallible function returns an [`RmcrStatus`]. On failure the message is
//! kept per thread and can be fetched with [`rmcr_last_error_message`].
//! Matrices cross the boundary as contiguous `double` arrays: inputs are
//! row-major, outputs documented per function. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use relaxmcr::cube::{read_cube, HyperCube};
use relaxmcr::ilt::{IltParams, IltSolver, LambdaPolicy, T2Grid};
use relaxmcr::mcr::DecompositionResult;
use relaxmcr::numkit::{nnls, FitDiagnostics};
use relaxmcr::phantom::{generate, write_phantom, PhantomSpec};
use relaxmcr::pipeline::{self, RunConfig};
use relaxmcr::Error;

/// Status codes; values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmcrStatus {
    Ok = 0,
    /// Unreadable file, malformed input or invalid argument.
    InvalidInput = 2,
    Numeric = 3,
    Convergence = 4,
    NullPointer = 5,
    /// An output buffer is shorter than required.
    BufferTooSmall = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(err: Error) -> RmcrStatus {
    let status = match err.exit_code() {
        3 => RmcrStatus::Numeric,
        4 => RmcrStatus::Convergence,
        _ => RmcrStatus::InvalidInput,
    };
    set_error(err.to_string());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), RmcrStatus>) -> RmcrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RmcrStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {msg}"));
            RmcrStatus::Panic
        }
    }
}

fn null_check(ptrs: &[bool]) -> Result<(), RmcrStatus> {
    if ptrs.iter().any(|&is_null| is_null) {
        set_error("null pointer argument");
        return Err(RmcrStatus::NullPointer);
    }
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, RmcrStatus> {
    null_check(&[p.is_null()])?;
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| {
        set_error("path is not valid UTF-8");
        RmcrStatus::InvalidInput
    })
}

unsafe fn write_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), RmcrStatus> {
    null_check(&[dst.is_null()])?;
    if len < src.len() {
        set_error(format!("buffer holds {len} values, {} required", src.len()));
        return Err(RmcrStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in bytes
/// excluding the terminator.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rmcr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Non-negative least squares `min ||A x - b||, x >= 0`.
///
/// `a` is `m x n` row-major, `b` has `m` entries, `x_out` receives `n`.
/// `residual_out` may be NULL.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_nnls(
    a: *const f64,
    m: usize,
    n: usize,
    b: *const f64,
    x_out: *mut f64,
    residual_out: *mut f64,
) -> RmcrStatus {
    guard(|| {
        null_check(&[a.is_null(), b.is_null(), x_out.is_null()])?;
        if m == 0 || n == 0 {
            return Err(fail(Error::invalid("matrix dimensions must be positive")));
        }
        let a = DMatrix::from_row_slice(m, n, std::slice::from_raw_parts(a, m * n));
        let b = DVector::from_column_slice(std::slice::from_raw_parts(b, m));
        let sol = nnls(&a, &b).map_err(fail)?;
        write_out(sol.x.as_slice(), x_out, n)?;
        if !residual_out.is_null() {
            *residual_out = sol.residual_norm;
        }
        Ok(())
    })
}

/// Explained variance and lack of fit (both percent) from the data and
/// residual sums of squares.
///
/// # Safety
/// `ev_out` and `lof_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_fit_diagnostics(sum_sq_data: f64, sum_sq_residual: f64, ev_out: *mut f64, lof_out: *mut f64) -> RmcrStatus {
    guard(|| {
        null_check(&[ev_out.is_null(), lof_out.is_null()])?;
        let d = FitDiagnostics::from_sums(sum_sq_data, sum_sq_residual).map_err(fail)?;
        *ev_out = d.explained_variance_pct;
        *lof_out = d.lack_of_fit_pct;
        Ok(())
    })
}

/// Regularized non-negative inverse Laplace transform of one decay.
///
/// The grid has `n_grid` log-spaced points over `[t2_min_ms, t2_max_ms]`.
/// `relative_lambda > 0` fixes the weight (relative to the kernel norm);
/// otherwise the L-curve picks it. `t2_out` and `amplitudes_out` receive
/// `n_grid` values; `lambda_out` may be NULL.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn rmcr_ilt_solve(
    signal: *const f64,
    echo_times_ms: *const f64,
    n_echoes: usize,
    t2_min_ms: f64,
    t2_max_ms: f64,
    n_grid: usize,
    relative_lambda: f64,
    t2_out: *mut f64,
    amplitudes_out: *mut f64,
    lambda_out: *mut f64,
) -> RmcrStatus {
    guard(|| {
        null_check(&[signal.is_null(), echo_times_ms.is_null(), t2_out.is_null(), amplitudes_out.is_null()])?;
        let grid = T2Grid::log_spaced(t2_min_ms, t2_max_ms, n_grid).map_err(fail)?;
        let lambda = if relative_lambda > 0.0 {
            LambdaPolicy::Fixed(relative_lambda)
        } else {
            IltParams::default().lambda
        };
        let params = IltParams { grid, lambda };
        let te = std::slice::from_raw_parts(echo_times_ms, n_echoes);
        let sig = std::slice::from_raw_parts(signal, n_echoes);
        let spec = IltSolver::new(te, &params).and_then(|s| s.solve(sig)).map_err(fail)?;
        write_out(&spec.t2_ms, t2_out, n_grid)?;
        write_out(&spec.amplitudes, amplitudes_out, n_grid)?;
        if !lambda_out.is_null() {
            *lambda_out = spec.lambda_used;
        }
        Ok(())
    })
}

/// Opaque handle to one image cube.
pub struct RmcrCube(HyperCube);

/// Reads a cube file. On success `*out` owns a handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_cube_read(path: *const c_char, out: *mut *mut RmcrCube) -> RmcrStatus {
    guard(|| {
        null_check(&[out.is_null()])?;
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let cube = read_cube(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(RmcrCube(cube)));
        Ok(())
    })
}

/// Width, height and number of echoes (or components) of a cube.
///
/// # Safety
/// `cube` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_cube_dims(cube: *const RmcrCube, width: *mut usize, height: *mut usize, depth: *mut usize) -> RmcrStatus {
    guard(|| {
        null_check(&[cube.is_null(), width.is_null(), height.is_null(), depth.is_null()])?;
        let c = &(*cube).0;
        *width = c.width();
        *height = c.height();
        *depth = c.n_echoes();
        Ok(())
    })
}

/// Copies the samples in file order (row, column, echo; echo fastest).
///
/// # Safety
/// `cube` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmcr_cube_data(cube: *const RmcrCube, out: *mut f64, len: usize) -> RmcrStatus {
    guard(|| {
        null_check(&[cube.is_null()])?;
        write_out((*cube).0.data(), out, len)
    })
}

/// # Safety
/// `cube` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmcr_cube_free(cube: *mut RmcrCube) {
    if !cube.is_null() {
        drop(Box::from_raw(cube));
    }
}

/// Writes a synthetic series into `out_dir`. `spec_json` may be NULL for the
/// default specification.
///
/// # Safety
/// String arguments must be NUL-terminated (or NULL where allowed).
#[no_mangle]
pub unsafe extern "C" fn rmcr_phantom_write(spec_json: *const c_char, out_dir: *const c_char) -> RmcrStatus {
    guard(|| {
        let dir = path_arg(out_dir)?;
        let spec = if spec_json.is_null() {
            PhantomSpec::default()
        } else {
            let text = CStr::from_ptr(spec_json).to_str().map_err(|_| fail(Error::invalid("spec is not UTF-8")))?;
            serde_json::from_str(text).map_err(|e| fail(Error::format("phantom spec", e.to_string())))?
        };
        let (frames, truth) = generate(&spec).map_err(fail)?;
        write_phantom(&frames, &truth, &dir).map_err(fail)?;
        Ok(())
    })
}

/// Opaque handle to a finished decomposition.
pub struct RmcrDecomposition(DecompositionResult);

/// Runs the configured pipeline (masking, initialization, ALS) and writes
/// its result directory. `threads` follows the command-line convention:
/// 1 is sequential, anything else uses the shared thread pool.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_decompose(config_path: *const c_char, threads: usize, out: *mut *mut RmcrDecomposition) -> RmcrStatus {
    guard(|| {
        null_check(&[out.is_null()])?;
        *out = ptr::null_mut();
        let path = path_arg(config_path)?;
        let mut cfg = RunConfig::load(&path).map_err(fail)?;
        cfg.als.parallel = threads != 1;
        cfg.validate().map_err(fail)?;
        let series = pipeline::load_series(&cfg.manifest, &cfg.mask, cfg.mask_mode).map_err(fail)?;
        let dec = pipeline::decompose(&cfg, &series).map_err(fail)?;
        *out = Box::into_raw(Box::new(RmcrDecomposition(dec.result)));
        Ok(())
    })
}

/// Rows of `C_aug`, echoes and components.
///
/// # Safety
/// `dec` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_decomposition_dims(
    dec: *const RmcrDecomposition,
    n_rows: *mut usize,
    n_echoes: *mut usize,
    n_components: *mut usize,
) -> RmcrStatus {
    guard(|| {
        null_check(&[dec.is_null(), n_rows.is_null(), n_echoes.is_null(), n_components.is_null()])?;
        let r = &(*dec).0;
        *n_rows = r.c_aug.nrows();
        *n_echoes = r.s.nrows();
        *n_components = r.s.ncols();
        Ok(())
    })
}

/// Spectra `S` (`n_echoes x k`) in row-major order.
///
/// # Safety
/// `dec` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmcr_decomposition_spectra(dec: *const RmcrDecomposition, out: *mut f64, len: usize) -> RmcrStatus {
    guard(|| {
        null_check(&[dec.is_null()])?;
        write_out(&(*dec).0.s.transpose().as_slice().to_vec(), out, len)
    })
}

/// Concentrations `C_aug` (`n_rows x k`) in row-major order.
///
/// # Safety
/// `dec` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmcr_decomposition_concentrations(dec: *const RmcrDecomposition, out: *mut f64, len: usize) -> RmcrStatus {
    guard(|| {
        null_check(&[dec.is_null()])?;
        write_out(&(*dec).0.c_aug.transpose().as_slice().to_vec(), out, len)
    })
}

/// Explained variance, lack of fit (percent) and whether ALS converged.
///
/// # Safety
/// `dec` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rmcr_decomposition_fit(
    dec: *const RmcrDecomposition,
    ev_out: *mut f64,
    lof_out: *mut f64,
    converged_out: *mut bool,
) -> RmcrStatus {
    guard(|| {
        null_check(&[dec.is_null(), ev_out.is_null(), lof_out.is_null(), converged_out.is_null()])?;
        let r = &(*dec).0;
        *ev_out = r.diagnostics.explained_variance_pct;
        *lof_out = r.diagnostics.lack_of_fit_pct;
        *converged_out = r.status == relaxmcr::mcr::AlsStatus::Converged;
        Ok(())
    })
}

/// # Safety
/// `dec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmcr_decomposition_free(dec: *mut RmcrDecomposition) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}
