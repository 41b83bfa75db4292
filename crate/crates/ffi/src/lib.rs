//! C interface to the scalemix classifier.
//!
//! Models live behind the opaque `SmmClassifier` handle. Every call returns
//! an `SmmStatus`; on failure the message is kept per thread and read back
//! with `smm_last_error_message`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use scalemix::predict::{class_posterior, predict_batch, Scorer};
use scalemix::vb::fit;
use scalemix::{build_default_prior, Error, FeatureDataset, FeatureMatrix, TrainedClassifier, VbConfig};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    DimensionMismatch = 5,
    Numeric = 6,
    /// Training finished at the iteration cap. The handle is still valid.
    NotConverged = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A trained classifier. Create with `smm_classifier_train`,
/// `smm_classifier_load` or `smm_classifier_from_json`; release with
/// `smm_classifier_free`.
pub struct SmmClassifier {
    model: TrainedClassifier,
}

/// Training settings passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmmTrainOptions {
    pub nu: f64,
    pub k_init: usize,
    pub alpha0: f64,
    pub max_iters: usize,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn status_of(e: &Error) -> SmmStatus {
    match e {
        Error::DimensionMismatch { .. } => SmmStatus::DimensionMismatch,
        Error::Io(_) => SmmStatus::Io,
        Error::Parse { .. } | Error::Model(_) => SmmStatus::Parse,
        e if e.is_numeric() => SmmStatus::Numeric,
        _ => SmmStatus::InvalidArgument,
    }
}

struct Failure(SmmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SmmStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, records any failure, and maps it to a status.
fn guard(body: impl FnOnce() -> Result<SmmStatus, Failure>) -> SmmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SmmStatus::Panic
        }
    }
}

unsafe fn handle<'a>(h: *const SmmClassifier) -> Result<&'a TrainedClassifier, Failure> {
    h.as_ref().map(|c| &c.model).ok_or_else(|| null("classifier"))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(SmmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn emit(out: *mut *mut SmmClassifier, model: TrainedClassifier) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(SmmClassifier { model }));
    Ok(())
}

/// Message of the last failed call on this thread, or null after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn smm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Defaults used by the command-line tool: ν = 5, one initial component,
/// α₀ = 0.001, 500 iterations, seed 0.
#[no_mangle]
pub extern "C" fn smm_train_options_default() -> SmmTrainOptions {
    SmmTrainOptions {
        nu: 5.0,
        k_init: 1,
        alpha0: 0.001,
        max_iters: 500,
        seed: 0,
    }
}

/// Trains on `rows` row-major feature vectors of length `dim` with one
/// label per row. Returns `NotConverged` (with `*out` set) when some class
/// stopped at the iteration cap.
///
/// # Safety
/// `features` must hold `rows * dim` values and `labels` `rows` values.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_train(
    features: *const f64,
    labels: *const u32,
    rows: usize,
    dim: usize,
    options: SmmTrainOptions,
    out: *mut *mut SmmClassifier,
) -> SmmStatus {
    guard(|| {
        let total = rows
            .checked_mul(dim)
            .ok_or_else(|| Failure(SmmStatus::InvalidArgument, "rows * dim overflows".into()))?;
        let x = slice(features, total, "features")?;
        let y = slice(labels, rows, "labels")?;
        let matrix = FeatureMatrix::new(dim, x.to_vec())?;
        let data = FeatureDataset::new(matrix, y.to_vec(), vec![1; rows], vec![1; rows])?;
        let prior = build_default_prior(&data, options.nu, options.k_init, options.alpha0)?;
        let config = VbConfig {
            max_iters: options.max_iters,
            seed: options.seed,
            ..VbConfig::default()
        };
        let model = fit(&data, &prior, &config)?;
        let converged = model.converged();
        emit(out, model)?;
        Ok(if converged {
            SmmStatus::Ok
        } else {
            SmmStatus::NotConverged
        })
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_load(path: *const c_char, out: *mut *mut SmmClassifier) -> SmmStatus {
    guard(|| {
        let model = TrainedClassifier::load(Path::new(text(path, "path")?))?;
        emit(out, model)?;
        Ok(SmmStatus::Ok)
    })
}

/// # Safety
/// `json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_from_json(
    json: *const c_char,
    out: *mut *mut SmmClassifier,
) -> SmmStatus {
    guard(|| {
        let model = TrainedClassifier::from_json(text(json, "json")?)?;
        emit(out, model)?;
        Ok(SmmStatus::Ok)
    })
}

/// # Safety
/// `h` must come from this library and `path` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_save(h: *const SmmClassifier, path: *const c_char) -> SmmStatus {
    guard(|| {
        handle(h)?.save(Path::new(text(path, "path")?))?;
        Ok(SmmStatus::Ok)
    })
}

/// The model document; release it with `smm_string_free`.
///
/// # Safety
/// `h` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_to_json(h: *const SmmClassifier, out: *mut *mut c_char) -> SmmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output string"));
        }
        let json = handle(h)?.to_json()?;
        *out = CString::new(json)
            .map_err(|_| Failure(SmmStatus::Parse, "model document contains a nul byte".into()))?
            .into_raw();
        Ok(SmmStatus::Ok)
    })
}

/// # Safety
/// `h` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_dim(h: *const SmmClassifier) -> usize {
    handle(h).map_or(0, TrainedClassifier::dim)
}

/// # Safety
/// `h` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_num_classes(h: *const SmmClassifier) -> usize {
    handle(h).map_or(0, TrainedClassifier::num_classes)
}

/// Writes the class ids in model order (the order of the posterior
/// entries). `len` must be at least the number of classes.
///
/// # Safety
/// `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_class_ids(
    h: *const SmmClassifier,
    out: *mut u32,
    len: usize,
) -> SmmStatus {
    guard(|| {
        let ids = handle(h)?.class_ids();
        if len < ids.len() {
            return Err(Failure(
                SmmStatus::BufferTooSmall,
                format!("need room for {} class ids, got {len}", ids.len()),
            ));
        }
        slice_mut(out, ids.len(), "output")?.copy_from_slice(&ids);
        Ok(SmmStatus::Ok)
    })
}

/// Normalized class log-posteriors of one vector, in class-id order.
///
/// # Safety
/// `x` must hold `dim` values and `out` have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_log_posterior(
    h: *const SmmClassifier,
    x: *const f64,
    dim: usize,
    out: *mut f64,
    len: usize,
) -> SmmStatus {
    guard(|| {
        let tc = handle(h)?;
        if len < tc.num_classes() {
            return Err(Failure(
                SmmStatus::BufferTooSmall,
                format!("need room for {} posteriors, got {len}", tc.num_classes()),
            ));
        }
        let post = class_posterior(slice(x, dim, "input")?, tc)?;
        slice_mut(out, post.log_probs.len(), "output")?.copy_from_slice(&post.log_probs);
        Ok(SmmStatus::Ok)
    })
}

/// Class id of the most probable class; ties go to the lowest id.
///
/// # Safety
/// `x` must hold `dim` values and `label` be writable.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_classify(
    h: *const SmmClassifier,
    x: *const f64,
    dim: usize,
    label: *mut u32,
) -> SmmStatus {
    guard(|| {
        let tc = handle(h)?;
        let x = slice(x, dim, "input")?;
        if label.is_null() {
            return Err(null("label"));
        }
        *label = Scorer::new(tc).classify(x)?;
        Ok(SmmStatus::Ok)
    })
}

/// Labels for `rows` row-major vectors of length `dim`.
///
/// # Safety
/// `x` must hold `rows * dim` values and `labels` `rows` values.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_classify_batch(
    h: *const SmmClassifier,
    x: *const f64,
    rows: usize,
    dim: usize,
    labels: *mut u32,
) -> SmmStatus {
    guard(|| {
        let tc = handle(h)?;
        let total = rows
            .checked_mul(dim)
            .ok_or_else(|| Failure(SmmStatus::InvalidArgument, "rows * dim overflows".into()))?;
        let matrix = FeatureMatrix::new(dim, slice(x, total, "input")?.to_vec())?;
        let ids = tc.class_ids();
        let out = slice_mut(labels, rows, "labels")?;
        for (o, p) in out.iter_mut().zip(predict_batch(&matrix, tc)?) {
            *o = ids[p.argmax];
        }
        Ok(SmmStatus::Ok)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smm_classifier_free(h: *mut SmmClassifier) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
