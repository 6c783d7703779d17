//! C interface to the `qmk` solver.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `_free`. Fallible calls return a [`QmkStatus`] and write their
//! result through an out-pointer. After a non-`Ok` status,
//! [`qmk_last_error_message`] describes the failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use qmk::linalg::{c, CMatrix, DensityOperator};
use qmk::oscillator::{coherent_density, fock_density, OscillatorRep, PhaseSpacePoint};
use qmk::quantum_ot::{coherent_closed_form, solve_mk, MKResult, SolverConfig};
use qmk::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QmkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Truncation = 4,
    NonConvergence = 5,
    Numerical = 6,
    Panic = 7,
}

/// Truncated oscillator basis: `n_basis` levels per mode, `d` modes, scale λ.
pub struct QmkRep(OscillatorRep);

/// Density operator expressed in a [`QmkRep`] basis.
pub struct QmkDensity(DensityOperator);

/// Solution of the coupling program.
pub struct QmkMkResult(MKResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> QmkStatus {
    match err {
        Error::Dimension(_) => QmkStatus::DimensionMismatch,
        Error::Truncation { .. } => QmkStatus::Truncation,
        Error::NonConvergence { .. } => QmkStatus::NonConvergence,
        Error::IllConditioned { .. } | Error::Resolution(_) => QmkStatus::Numerical,
        _ => QmkStatus::InvalidArgument,
    }
}

/// Runs `f`, storing its value in `*out` on success.
fn guarded<T>(out: *mut *mut T, f: impl FnOnce() -> qmk::Result<T>) -> QmkStatus {
    if out.is_null() {
        set_error("output pointer is null".into());
        return QmkStatus::NullPointer;
    }
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => {
            // SAFETY: checked non-null above; the caller provides writable storage.
            unsafe { *out = Box::into_raw(Box::new(v)) };
            QmkStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            QmkStatus::Panic
        }
    }
}

fn null_error(what: &str) -> QmkStatus {
    set_error(format!("{what} is null"));
    QmkStatus::NullPointer
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qmk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qmk_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn qmk_rep_new(n_basis: usize, d: usize, lambda: f64, out: *mut *mut QmkRep) -> QmkStatus {
    guarded(out, || OscillatorRep::new(n_basis, d, lambda).map(QmkRep))
}

/// Dimension of the truncated Hilbert space, or 0 for a null handle.
///
/// # Safety
/// `rep` must be null or a live handle from [`qmk_rep_new`].
#[no_mangle]
pub unsafe extern "C" fn qmk_rep_dim(rep: *const QmkRep) -> usize {
    rep.as_ref().map_or(0, |r| r.0.dim())
}

/// # Safety
/// `rep` must be null or a handle from [`qmk_rep_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmk_rep_free(rep: *mut QmkRep) {
    if !rep.is_null() {
        drop(Box::from_raw(rep));
    }
}

/// Coherent state |q, p⟩ for a one-mode representation.
///
/// # Safety
/// `rep` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmk_density_coherent(
    rep: *const QmkRep,
    q: f64,
    p: f64,
    out: *mut *mut QmkDensity,
) -> QmkStatus {
    let Some(rep) = rep.as_ref() else { return null_error("rep") };
    guarded(out, || coherent_density(&rep.0, &PhaseSpacePoint::d1(q, p)).map(QmkDensity))
}

/// Fock state with occupation `levels[j]` in mode j; `n_levels` must equal d.
///
/// # Safety
/// `rep` must be a live handle, `levels` must point to `n_levels` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmk_density_fock(
    rep: *const QmkRep,
    levels: *const usize,
    n_levels: usize,
    out: *mut *mut QmkDensity,
) -> QmkStatus {
    let Some(rep) = rep.as_ref() else { return null_error("rep") };
    if levels.is_null() {
        return null_error("levels");
    }
    let levels = std::slice::from_raw_parts(levels, n_levels);
    guarded(out, || fock_density(&rep.0, levels).map(QmkDensity))
}

/// Density from a row-major `dim × dim` complex matrix given as separate
/// real and imaginary arrays. The matrix must be Hermitian, positive and of
/// unit trace.
///
/// # Safety
/// `re` and `im` must each point to `dim * dim` values; `rep` must be a live
/// handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qmk_density_from_matrix(
    rep: *const QmkRep,
    re: *const f64,
    im: *const f64,
    dim: usize,
    out: *mut *mut QmkDensity,
) -> QmkStatus {
    let Some(rep) = rep.as_ref() else { return null_error("rep") };
    if re.is_null() || im.is_null() {
        return null_error("matrix data");
    }
    let Some(len) = dim.checked_mul(dim) else {
        set_error(format!("dimension {dim} overflows"));
        return QmkStatus::InvalidArgument;
    };
    let re = std::slice::from_raw_parts(re, len);
    let im = std::slice::from_raw_parts(im, len);
    guarded(out, || {
        if dim != rep.0.dim() {
            return Err(Error::Dimension(format!("matrix is {dim}×{dim}, basis has dimension {}", rep.0.dim())));
        }
        let m = CMatrix::from_fn(dim, dim, |i, j| c(re[i * dim + j], im[i * dim + j]));
        DensityOperator::new(m, rep.0.tag()).map(QmkDensity)
    })
}

/// # Safety
/// `density` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmk_density_dim(density: *const QmkDensity) -> usize {
    density.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `density` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmk_density_free(density: *mut QmkDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

/// Solves the coupling program between `a` and `b`. `max_iters == 0`
/// keeps the default iteration budget.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qmk_solve(
    a: *const QmkDensity,
    b: *const QmkDensity,
    rep: *const QmkRep,
    max_iters: usize,
    out: *mut *mut QmkMkResult,
) -> QmkStatus {
    let (Some(a), Some(b), Some(rep)) = (a.as_ref(), b.as_ref(), rep.as_ref()) else {
        return null_error("input handle");
    };
    let mut cfg = SolverConfig::default();
    if max_iters > 0 {
        cfg.max_iters = max_iters;
    }
    guarded(out, || solve_mk(&a.0, &b.0, &rep.0, &cfg).map(QmkMkResult))
}

/// Optimal objective, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmk_result_value_sq(result: *const QmkMkResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.value_sq)
}

/// Certified lower bound on the optimum, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmk_result_lower_bound(result: *const QmkMkResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.0.lower_bound)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmk_result_iterations(result: *const QmkMkResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.iterations)
}

/// Side length of the coupling matrix.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qmk_result_coupling_dim(result: *const QmkMkResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.coupling.q.dim())
}

/// Copies the coupling row-major into `re` and `im`, each of length `len`,
/// which must be at least the squared coupling dimension.
///
/// # Safety
/// `re` and `im` must each point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn qmk_result_coupling(
    result: *const QmkMkResult,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> QmkStatus {
    let Some(result) = result.as_ref() else { return null_error("result") };
    if re.is_null() || im.is_null() {
        return null_error("output buffer");
    }
    let q = result.0.coupling.q.matrix();
    let n = q.nrows();
    if len < n * n {
        set_error(format!("buffer holds {len} values, coupling needs {}", n * n));
        return QmkStatus::InvalidArgument;
    }
    let re = std::slice::from_raw_parts_mut(re, len);
    let im = std::slice::from_raw_parts_mut(im, len);
    for i in 0..n {
        for j in 0..n {
            re[i * n + j] = q[(i, j)].re;
            im[i * n + j] = q[(i, j)].im;
        }
    }
    QmkStatus::Ok
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmk_result_free(result: *mut QmkMkResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Closed-form value for two one-mode coherent states at scale λ.
#[no_mangle]
pub extern "C" fn qmk_coherent_closed_form(q1: f64, p1: f64, q2: f64, p2: f64, lambda: f64) -> f64 {
    coherent_closed_form(&PhaseSpacePoint::d1(q1, p1), &PhaseSpacePoint::d1(q2, p2), lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_map_from_core_errors() {
        assert_eq!(status_of(&Error::Dimension("x".into())), QmkStatus::DimensionMismatch);
        assert_eq!(status_of(&Error::Config("x".into())), QmkStatus::InvalidArgument);
        let nc = Error::NonConvergence {
            iterations: 1,
            primal_residual: 1.0,
            gap: 1.0,
            history: vec![],
        };
        assert_eq!(status_of(&nc), QmkStatus::NonConvergence);
    }

    #[test]
    fn null_out_pointer_is_reported() {
        let s = unsafe { qmk_rep_new(4, 1, 1.0, std::ptr::null_mut()) };
        assert_eq!(s, QmkStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(qmk_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("null"));
    }
}
