//! C ABI over the eduspace core.
//!
//! Every function returns an [`EsStatus`]. On failure a message is kept per
//! thread and can be read with [`es_last_error_message`]. Handles are opaque
//! and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use eduspace::clustering::{kmeans, ClusterError, ClusterModel, KMeansParams};
use eduspace::regression::{fit_logit, LogitFit, LogitOptions, RegressionError};
use eduspace::space::{fit_space, project, Orientation, SpaceError, SpaceModel};
use eduspace::synth::adjusted_rand_index;
use ndarray::ArrayView2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Model = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: EsStatus, msg: impl Into<String>) -> EsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> EsStatus) -> EsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == EsStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(EsStatus::Panic, "internal panic"),
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn es_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn matrix<'a>(data: *const f64, rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>, EsStatus> {
    if data.is_null() {
        return Err(fail(EsStatus::NullPointer, "data is NULL"));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(EsStatus::InvalidArgument, "dimensions overflow"))?;
    let slice = std::slice::from_raw_parts(data, len);
    ArrayView2::from_shape((rows, cols), slice).map_err(|e| fail(EsStatus::InvalidArgument, e.to_string()))
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, len: usize) -> EsStatus {
    if out.is_null() {
        return fail(EsStatus::NullPointer, "output buffer is NULL");
    }
    if len < src.len() {
        return fail(
            EsStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    EsStatus::Ok
}

fn cluster_status(e: &ClusterError) -> EsStatus {
    match e {
        ClusterError::NonFinite | ClusterError::ShapeMismatch(_) => EsStatus::Data,
        ClusterError::InvalidK | ClusterError::TooFewPoints { .. } => EsStatus::InvalidArgument,
        _ => EsStatus::Model,
    }
}

fn space_status(e: &SpaceError) -> EsStatus {
    match e {
        SpaceError::ConstantColumn(_) => EsStatus::Data,
        SpaceError::TooFewPoints { .. } | SpaceError::DimensionMismatch { .. } => EsStatus::InvalidArgument,
        _ => EsStatus::Model,
    }
}

fn regression_status(e: &RegressionError) -> EsStatus {
    match e {
        RegressionError::LengthMismatch { .. } | RegressionError::TooFewObservations { .. } => {
            EsStatus::InvalidArgument
        }
        RegressionError::SingleClass | RegressionError::CollinearColumn(_) => EsStatus::Data,
        _ => EsStatus::Model,
    }
}

/// Fitted k-means model.
pub struct EsKMeans {
    model: ClusterModel,
}

/// Run k-means on a row-major `n x d` matrix.
///
/// # Safety
/// `data` must point to `n * d` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn es_kmeans_fit(
    data: *const f64,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
    restarts: usize,
    out: *mut *mut EsKMeans,
) -> EsStatus {
    guard(|| {
        if out.is_null() {
            return fail(EsStatus::NullPointer, "out is NULL");
        }
        let view = match matrix(data, n, d) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let params = KMeansParams {
            k,
            seed,
            restarts,
            ..KMeansParams::default()
        };
        match kmeans(view, &params) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(EsKMeans { model }));
                EsStatus::Ok
            }
            Err(e) => fail(cluster_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn es_kmeans_objective(h: *const EsKMeans, out: *mut f64) -> EsStatus {
    guard(|| match (h.as_ref(), out.is_null()) {
        (Some(h), false) => {
            *out = h.model.objective;
            EsStatus::Ok
        }
        _ => fail(EsStatus::NullPointer, "NULL argument"),
    })
}

/// Cluster index of every point; `len` must be at least `n`.
///
/// # Safety
/// `h` must be valid and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn es_kmeans_assignments(h: *const EsKMeans, out: *mut u32, len: usize) -> EsStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(EsStatus::NullPointer, "handle is NULL");
        };
        let labels: Vec<u32> = h.model.assignments.iter().map(|&a| a as u32).collect();
        copy_out(&labels, out, len)
    })
}

/// Row-major `k x d` centroids; `len` must be at least `k * d`.
///
/// # Safety
/// `h` must be valid and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn es_kmeans_centroids(h: *const EsKMeans, out: *mut f64, len: usize) -> EsStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(EsStatus::NullPointer, "handle is NULL");
        };
        let flat: Vec<f64> = h.model.centroids.iter().copied().collect();
        copy_out(&flat, out, len)
    })
}

/// # Safety
/// `h` must come from [`es_kmeans_fit`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn es_kmeans_free(h: *mut EsKMeans) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Fitted two-component PCA space.
pub struct EsSpace {
    model: SpaceModel,
}

/// Fit the space on a row-major `n x 6` feature matrix.
///
/// # Safety
/// `data` must point to `n * d` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn es_space_fit(data: *const f64, n: usize, d: usize, out: *mut *mut EsSpace) -> EsStatus {
    guard(|| {
        if out.is_null() {
            return fail(EsStatus::NullPointer, "out is NULL");
        }
        if d != 6 {
            return fail(
                EsStatus::InvalidArgument,
                format!("expected 6 feature columns, got {d}"),
            );
        }
        let view = match matrix(data, n, d) {
            Ok(v) => v,
            Err(s) => return s,
        };
        match fit_space(view, &Orientation::default()) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(EsSpace { model }));
                EsStatus::Ok
            }
            Err(e) => fail(space_status(&e), e.to_string()),
        }
    })
}

/// Project `n` rows; writes `n x 2` coordinates row-major.
///
/// # Safety
/// `h` must be valid, `data` must hold `n * 6` doubles and `out` `len`.
#[no_mangle]
pub unsafe extern "C" fn es_space_project(
    h: *const EsSpace,
    data: *const f64,
    n: usize,
    out: *mut f64,
    len: usize,
) -> EsStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(EsStatus::NullPointer, "handle is NULL");
        };
        let view = match matrix(data, n, h.model.dim()) {
            Ok(v) => v,
            Err(s) => return s,
        };
        match project(&h.model, view) {
            Ok(coords) => copy_out(&coords.iter().copied().collect::<Vec<_>>(), out, len),
            Err(e) => fail(space_status(&e), e.to_string()),
        }
    })
}

/// Explained variance ratio of PC1 and PC2.
///
/// # Safety
/// `h` must be valid and `out` must hold two doubles.
#[no_mangle]
pub unsafe extern "C" fn es_space_variance_ratio(h: *const EsSpace, out: *mut f64) -> EsStatus {
    guard(|| {
        let Some(h) = h.as_ref() else {
            return fail(EsStatus::NullPointer, "handle is NULL");
        };
        copy_out(&h.model.explained_variance_ratio(), out, 2)
    })
}

/// # Safety
/// `h` must come from [`es_space_fit`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn es_space_free(h: *mut EsSpace) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Fitted logit model.
pub struct EsLogit {
    fit: LogitFit,
}

/// Fit a logit by maximum likelihood. `x` is row-major `n x p` and should
/// contain an intercept column if one is wanted; `y` holds 0/1 values.
///
/// # Safety
/// `x` must hold `n * p` doubles, `y` `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_logit_fit(
    x: *const f64,
    n: usize,
    p: usize,
    y: *const f64,
    out: *mut *mut EsLogit,
) -> EsStatus {
    guard(|| {
        if out.is_null() || y.is_null() {
            return fail(EsStatus::NullPointer, "NULL argument");
        }
        let view = match matrix(x, n, p) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let y = std::slice::from_raw_parts(y, n);
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        match fit_logit(view, y, &names, &LogitOptions::default()) {
            Ok(fit) => {
                *out = Box::into_raw(Box::new(EsLogit { fit }));
                EsStatus::Ok
            }
            Err(e) => fail(regression_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `h` must be valid and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_logit_coefficients(h: *const EsLogit, out: *mut f64, len: usize) -> EsStatus {
    guard(|| match h.as_ref() {
        Some(h) => copy_out(&h.fit.coefficients, out, len),
        None => fail(EsStatus::NullPointer, "handle is NULL"),
    })
}

/// # Safety
/// `h` must be valid and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_logit_std_errors(h: *const EsLogit, out: *mut f64, len: usize) -> EsStatus {
    guard(|| match h.as_ref() {
        Some(h) => copy_out(&h.fit.std_errors, out, len),
        None => fail(EsStatus::NullPointer, "handle is NULL"),
    })
}

/// # Safety
/// `h` must be valid and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_logit_p_values(h: *const EsLogit, out: *mut f64, len: usize) -> EsStatus {
    guard(|| match h.as_ref() {
        Some(h) => copy_out(&h.fit.p_values, out, len),
        None => fail(EsStatus::NullPointer, "handle is NULL"),
    })
}

/// Log-likelihood and McFadden pseudo-R2.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_logit_fit_stats(
    h: *const EsLogit,
    log_likelihood: *mut f64,
    pseudo_r2: *mut f64,
) -> EsStatus {
    guard(|| match (h.as_ref(), log_likelihood.is_null() || pseudo_r2.is_null()) {
        (Some(h), false) => {
            *log_likelihood = h.fit.log_likelihood;
            *pseudo_r2 = h.fit.pseudo_r2;
            EsStatus::Ok
        }
        _ => fail(EsStatus::NullPointer, "NULL argument"),
    })
}

/// # Safety
/// `h` must come from [`es_logit_fit`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn es_logit_free(h: *mut EsLogit) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Adjusted Rand index of two labelings of `n` items.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_ari(a: *const u32, b: *const u32, n: usize, out: *mut f64) -> EsStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(EsStatus::NullPointer, "NULL argument");
        }
        let a: Vec<usize> = std::slice::from_raw_parts(a, n).iter().map(|&v| v as usize).collect();
        let b: Vec<usize> = std::slice::from_raw_parts(b, n).iter().map(|&v| v as usize).collect();
        match adjusted_rand_index(&a, &b) {
            Ok(v) => {
                *out = v;
                EsStatus::Ok
            }
            Err(e) => fail(EsStatus::InvalidArgument, e.to_string()),
        }
    })
}
