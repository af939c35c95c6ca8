//! C ABI for the dichotomy library.
//!
//! Objects cross the boundary as opaque handles released by the matching
//! `_free` function; every fallible entry point returns a [`DichoStatus`].
//! All entry points catch panics, so the library never unwinds into foreign
//! stack frames.

use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dichotomy::driver::{run_certify, RunConfig};
use dichotomy::models::{ModelName, ModelSpec};
use dichotomy::nonlinear::{BifurcationReport, Conclusion};
use dichotomy::spectral::{hyperbolic_splitting, HyperbolicSplitting};
use dichotomy::Error;

/// Status codes returned by the fallible entry points.
#[repr(C)]
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum DichoStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range or otherwise malformed.
    InvalidArgument = 2,
    /// The matrix is singular or has an eigenvalue too close to the unit
    /// circle for the requested tolerance.
    NotHyperbolic = 3,
    /// A numerical routine failed.
    NumericalFailure = 4,
    /// A panic was caught at the boundary.
    Panic = 5,
}

/// Opaque stable/unstable splitting handle.
pub struct DichoSplitting {
    inner: HyperbolicSplitting,
    dim: usize,
}

/// Opaque certification report handle.
pub struct DichoReport {
    report: BifurcationReport,
    json: CString,
}

fn status_of(err: &Error) -> DichoStatus {
    match err {
        Error::HyperbolicityViolation { .. } | Error::NotInvertible { .. } => {
            DichoStatus::NotHyperbolic
        }
        Error::InvalidInput(_)
        | Error::Parse(_)
        | Error::DimensionTooLarge { .. }
        | Error::NonFiniteEntry { .. }
        | Error::MeshTooCoarse { .. }
        | Error::BadRanks { .. } => DichoStatus::InvalidArgument,
        _ => DichoStatus::NumericalFailure,
    }
}

fn guarded(f: impl FnOnce() -> DichoStatus) -> DichoStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(DichoStatus::Panic)
}

/// Computes the hyperbolic splitting of a row-major `n x n` matrix.
///
/// On success `*out` owns a new handle that must be released with
/// [`dicho_splitting_free`].
///
/// # Safety
/// `entries` must point to `n * n` readable doubles and `out` to a writable
/// pointer slot; both must stay valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn dicho_splitting_compute(
    entries: *const f64,
    n: usize,
    tol: f64,
    out: *mut *mut DichoSplitting,
) -> DichoStatus {
    guarded(|| {
        if entries.is_null() || out.is_null() {
            return DichoStatus::NullArgument;
        }
        unsafe { *out = ptr::null_mut() };
        if n == 0 {
            return DichoStatus::InvalidArgument;
        }
        let data = unsafe { std::slice::from_raw_parts(entries, n * n) };
        let matrix = nalgebra::DMatrix::from_row_slice(n, n, data);
        match hyperbolic_splitting(&matrix, tol) {
            Ok(inner) => {
                let handle = Box::new(DichoSplitting { inner, dim: n });
                unsafe { *out = Box::into_raw(handle) };
                DichoStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Dimension of the stable subspace, or -1 for a null handle.
///
/// # Safety
/// `handle` must be null or a live pointer from [`dicho_splitting_compute`].
#[no_mangle]
pub unsafe extern "C" fn dicho_splitting_stable_dim(handle: *const DichoSplitting) -> c_int {
    if handle.is_null() {
        return -1;
    }
    unsafe { (*handle).inner.k_s as c_int }
}

/// Dimension of the unstable subspace, or -1 for a null handle.
///
/// # Safety
/// `handle` must be null or a live pointer from [`dicho_splitting_compute`].
#[no_mangle]
pub unsafe extern "C" fn dicho_splitting_unstable_dim(handle: *const DichoSplitting) -> c_int {
    if handle.is_null() {
        return -1;
    }
    unsafe { (*handle).inner.k_u as c_int }
}

/// Distance of the closest eigenvalue modulus to 1, or NaN for a null handle.
///
/// # Safety
/// `handle` must be null or a live pointer from [`dicho_splitting_compute`].
#[no_mangle]
pub unsafe extern "C" fn dicho_splitting_margin(handle: *const DichoSplitting) -> f64 {
    if handle.is_null() {
        return f64::NAN;
    }
    unsafe { (*handle).inner.margin }
}

/// Copies the stable spectral projector into `out` (row-major, `n * n`).
///
/// # Safety
/// `out` must point to `n * n` writable doubles, where `n` is the dimension
/// the handle was built with.
#[no_mangle]
pub unsafe extern "C" fn dicho_splitting_stable_projector(
    handle: *const DichoSplitting,
    out: *mut f64,
) -> DichoStatus {
    guarded(|| {
        if handle.is_null() || out.is_null() {
            return DichoStatus::NullArgument;
        }
        let splitting = unsafe { &*handle };
        let n = splitting.dim;
        let slice = unsafe { std::slice::from_raw_parts_mut(out, n * n) };
        for row in 0..n {
            for col in 0..n {
                slice[row * n + col] = splitting.inner.ps[(row, col)];
            }
        }
        DichoStatus::Ok
    })
}

/// Copies the orthonormal stable basis into `out` (row-major, `n * k_s`).
///
/// # Safety
/// `out` must point to `n * k_s` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dicho_splitting_stable_basis(
    handle: *const DichoSplitting,
    out: *mut f64,
) -> DichoStatus {
    guarded(|| {
        if handle.is_null() || out.is_null() {
            return DichoStatus::NullArgument;
        }
        let splitting = unsafe { &*handle };
        let (n, k) = (splitting.dim, splitting.inner.k_s);
        let slice = unsafe { std::slice::from_raw_parts_mut(out, n * k) };
        for row in 0..n {
            for col in 0..k {
                slice[row * k + col] = splitting.inner.vs[(row, col)];
            }
        }
        DichoStatus::Ok
    })
}

/// Releases a splitting handle. Null is accepted.
///
/// # Safety
/// `handle` must be null or an unreleased pointer from
/// [`dicho_splitting_compute`]; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dicho_splitting_free(handle: *mut DichoSplitting) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Runs the certification pipeline on a built-in model.
///
/// `name` is one of "torus_example", "counterexample_a5",
/// "random_asymptotic"; `k` the number of torus factors; `c` the quadratic
/// coupling of the torus model; `seed` the random-model seed; `mesh_m` the
/// vertices per generator loop; `window` the lattice half-length. On success
/// `*out` owns a handle to be released with [`dicho_report_free`].
///
/// # Safety
/// `name` must be a valid NUL-terminated string and `out` a writable pointer
/// slot.
#[no_mangle]
pub unsafe extern "C" fn dicho_certify_model(
    name: *const c_char,
    k: usize,
    c: f64,
    seed: u64,
    mesh_m: usize,
    window: usize,
    out: *mut *mut DichoReport,
) -> DichoStatus {
    guarded(|| {
        if name.is_null() || out.is_null() {
            return DichoStatus::NullArgument;
        }
        unsafe { *out = ptr::null_mut() };
        let Ok(name) = unsafe { CStr::from_ptr(name) }.to_str() else {
            return DichoStatus::InvalidArgument;
        };
        let Ok(model_name) = name.parse::<ModelName>() else {
            return DichoStatus::InvalidArgument;
        };
        let mut spec = ModelSpec::named(model_name);
        spec.k = k;
        spec.params.insert("c".into(), c);
        spec.params.insert("seed".into(), seed as f64);
        let mut cfg = RunConfig::for_model(spec);
        cfg.mesh.m = mesh_m;
        cfg.window = window;
        match run_certify(&cfg) {
            Ok(report) => {
                let json = serde_json::to_string(&report).unwrap_or_default();
                let json = CString::new(json).unwrap_or_default();
                let handle = Box::new(DichoReport { report, json });
                unsafe { *out = Box::into_raw(handle) };
                DichoStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Conclusion of a report: 0 = certified bifurcation, 1 = no certificate,
/// 2 = assumptions violated, -1 = null handle.
///
/// # Safety
/// `handle` must be null or a live pointer from [`dicho_certify_model`].
#[no_mangle]
pub unsafe extern "C" fn dicho_report_conclusion(handle: *const DichoReport) -> c_int {
    if handle.is_null() {
        return -1;
    }
    match unsafe { &*handle }.report.conclusion {
        Conclusion::CertifiedBifurcation => 0,
        Conclusion::NoCertificate => 1,
        Conclusion::AssumptionsViolated => 2,
    }
}

/// Whether the first Stiefel-Whitney classes of the two stable bundles
/// differ: 1 yes, 0 no, -1 unknown (no certificate computed or null handle).
///
/// # Safety
/// `handle` must be null or a live pointer from [`dicho_certify_model`].
#[no_mangle]
pub unsafe extern "C" fn dicho_report_w1_mismatch(handle: *const DichoReport) -> c_int {
    if handle.is_null() {
        return -1;
    }
    match unsafe { &*handle }.report.certificate.as_ref() {
        Some(cert) => c_int::from(cert.any_mismatch),
        None => -1,
    }
}

/// Number of bifurcation candidate vertices in the report, or -1.
///
/// # Safety
/// `handle` must be null or a live pointer from [`dicho_certify_model`].
#[no_mangle]
pub unsafe extern "C" fn dicho_report_candidate_count(handle: *const DichoReport) -> c_int {
    if handle.is_null() {
        return -1;
    }
    unsafe { &*handle }.report.candidates.len() as c_int
}

/// Borrowed pointer to the report serialized as JSON; valid until
/// [`dicho_report_free`] is called on the handle. Null for a null handle.
///
/// # Safety
/// `handle` must be null or a live pointer from [`dicho_certify_model`].
#[no_mangle]
pub unsafe extern "C" fn dicho_report_json(handle: *const DichoReport) -> *const c_char {
    if handle.is_null() {
        return ptr::null();
    }
    unsafe { &*handle }.json.as_ptr()
}

/// Releases a report handle. Null is accepted.
///
/// # Safety
/// `handle` must be null or an unreleased pointer from
/// [`dicho_certify_model`]; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dicho_report_free(handle: *mut DichoReport) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dicho_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
