//! C interface to the epsr toolkit.
//!
//! Every fallible function returns an [`EpsrStatus`]. On failure the
//! message is available from [`epsr_last_error_message`] on the same
//! thread until the next failing call. Models are opaque handles created
//! by [`epsr_model_build`] or [`epsr_model_load`] and released with
//! [`epsr_model_free`]. Panics never cross the boundary; they surface as
//! `EPSR_STATUS_PANIC`.
//!
//! Images cross the boundary as interleaved RGB `f32` samples in `[0, 1]`,
//! row-major, `height * width * 3` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use epsr::archzoo::{infer, Model, ModelKind, TilingPolicy};
use epsr::image::ImagePlane;
use epsr::score::{aggregate_score, challenge_metrics, describe, ScoreWeights};
use epsr::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Io = 5,
    Checkpoint = 6,
    Scoring = 7,
    Statistics = 8,
    Resource = 9,
    Internal = 10,
    Panic = 11,
}

impl From<&Error> for EpsrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Toml(_) | Error::Json(_) => EpsrStatus::Config,
            Error::Shape(_) | Error::EmptyInput => EpsrStatus::Shape,
            Error::Io { .. } | Error::Image(_) => EpsrStatus::Io,
            Error::Checkpoint(_) => EpsrStatus::Checkpoint,
            Error::Scoring { .. } | Error::Provider { .. } => EpsrStatus::Scoring,
            Error::Statistics(_) => EpsrStatus::Statistics,
            Error::Resource { .. } => EpsrStatus::Resource,
            _ => EpsrStatus::Internal,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guard(f: impl FnOnce() -> Result<(), (EpsrStatus, String)>) -> EpsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EpsrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EpsrStatus::Panic
        }
    }
}

fn lift<T>(r: epsr::Result<T>) -> Result<T, (EpsrStatus, String)> {
    r.map_err(|e| ((&e).into(), e.to_string()))
}

fn null(what: &str) -> (EpsrStatus, String) {
    (EpsrStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> (EpsrStatus, String) {
    (EpsrStatus::InvalidArgument, msg.into())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (EpsrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn epsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn epsr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque model handle.
pub struct EpsrModel {
    kind: ModelKind,
    model: Model,
}

/// Builds a registered architecture (`safmn_l`, `tiny_esrgan`, `efdn`,
/// `efdn_fused`, `realesrgan_baseline`) with seeded random weights.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn epsr_model_build(name: *const c_char, seed: u64, out: *mut *mut EpsrModel) -> EpsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: ModelKind = lift(c_str(name, "name")?.parse())?;
        let model = lift(kind.build(seed))?;
        *out = Box::into_raw(Box::new(EpsrModel { kind, model }));
        Ok(())
    })
}

/// Loads a checkpoint written by the toolkit.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn epsr_model_load(path: *const c_char, out: *mut *mut EpsrModel) -> EpsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let (manifest, model) = lift(epsr::checkpoint::load_model(Path::new(path)))?;
        *out = Box::into_raw(Box::new(EpsrModel { kind: manifest.architecture, model }));
        Ok(())
    })
}

/// Saves the model as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn epsr_model_save(model: *const EpsrModel, path: *const c_char) -> EpsrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = c_str(path, "path")?;
        lift(epsr::checkpoint::save(Path::new(path), m.kind, m.model.as_ref()))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn epsr_model_free(model: *mut EpsrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpsrBudget {
    pub params: u64,
    pub gmacs: f64,
    pub param_limit: u64,
    pub gmac_limit: f64,
    pub passed: bool,
}

/// Parameter count and GMACs at 3×540×960 against the challenge limits.
///
/// # Safety
/// `model` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn epsr_model_audit(model: *const EpsrModel, out: *mut EpsrBudget) -> EpsrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = lift(epsr::efficiency::audit(m.model.as_ref()))?;
        *out = EpsrBudget {
            params: r.params,
            gmacs: r.gmacs,
            param_limit: r.param_limit,
            gmac_limit: r.gmac_limit,
            passed: r.passed,
        };
        Ok(())
    })
}

/// Upscaling factor of the model.
///
/// # Safety
/// `model` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn epsr_model_scale(model: *const EpsrModel, out: *mut usize) -> EpsrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.spec().scale;
        Ok(())
    })
}

/// Super-resolves one image. `output` must hold
/// `(scale*height) * (scale*width) * 3` values. A `tile` of 0 processes
/// the whole image at once.
///
/// # Safety
/// `input` must point to `height * width * 3` floats and `output` to
/// `output_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn epsr_model_infer(
    model: *const EpsrModel,
    input: *const f32,
    height: usize,
    width: usize,
    tile: usize,
    overlap: usize,
    output: *mut f32,
    output_len: usize,
) -> EpsrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        let s = m.model.spec().scale;
        let need = height * s * width * s * 3;
        if output_len != need {
            return Err(invalid(format!("output holds {output_len} values, need {need}")));
        }
        let data = std::slice::from_raw_parts(input, height * width * 3).to_vec();
        let lr = lift(ImagePlane::new(height, width, data))?;
        let tiling = if tile == 0 { TilingPolicy::whole() } else { TilingPolicy::tiled(tile, overlap) };
        let sr = lift(infer(m.model.as_ref(), &lr, tiling))?;
        std::slice::from_raw_parts_mut(output, need).copy_from_slice(sr.as_slice());
        Ok(())
    })
}

/// Challenge Score of `(PI, CLIPIQA, MANIQA)` against a baseline triple.
///
/// # Safety
/// `metrics` and `baseline` must each point to three doubles; `out` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn epsr_aggregate_score(metrics: *const f64, baseline: *const f64, out: *mut f64) -> EpsrStatus {
    guard(|| {
        if metrics.is_null() {
            return Err(null("metrics"));
        }
        if baseline.is_null() {
            return Err(null("baseline"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = std::slice::from_raw_parts(metrics, 3);
        let b = std::slice::from_raw_parts(baseline, 3);
        let mr = lift(challenge_metrics(m[0], m[1], m[2]))?;
        let br = lift(challenge_metrics(b[0], b[1], b[2]))?;
        *out = lift(aggregate_score(&mr, &br, &ScoreWeights::challenge()))?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpsrClassStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

/// Mean, median and sample standard deviation of `len >= 2` values.
///
/// # Safety
/// `values` must point to `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn epsr_class_stats(values: *const f64, len: usize, out: *mut EpsrClassStats) -> EpsrStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = lift(describe(std::slice::from_raw_parts(values, len)))?;
        *out = EpsrClassStats { mean: s.mean, median: s.median, std: s.std };
        Ok(())
    })
}
