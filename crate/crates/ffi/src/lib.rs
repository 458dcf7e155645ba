//! C interface: load a checkpoint, classify images, compute saliency maps.
//!
//! Every call returns an [`FgrStatus`]. On failure the message is kept per
//! thread and read with [`fgr_last_error_message`]. Images are planar
//! `f32` in `[0, 1]`, channel-major, `channels * size * size` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fgrnet::interpret::{explain, Explainable, SaliencyMethod};
use fgrnet::model::load_checkpoint;
use fgrnet::{Error, FgrNetParams, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgrMethod {
    Gradient = 0,
    GradCam = 1,
    GradCamWeighted = 2,
    Occlusion = 3,
}

/// Opaque model handle.
pub struct FgrModel {
    params: FgrNetParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FgrStatus {
    match e {
        Error::Dimension { .. } | Error::Contract { .. } => FgrStatus::Shape,
        Error::Config(_) | Error::InvalidArgument(_) => FgrStatus::InvalidArgument,
        Error::NonFiniteGradient { .. } | Error::Divergence { .. } => FgrStatus::Numeric,
        Error::Format { .. } => FgrStatus::Format,
        Error::Io { .. } => FgrStatus::Io,
    }
}

struct Fail(FgrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FgrStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FgrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FgrStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            FgrStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const FgrModel) -> Result<&'a FgrModel, Fail> {
    model.as_ref().ok_or_else(|| null("model"))
}

unsafe fn image_from(model: &FgrModel, pixels: *const f32, len: usize) -> Result<Tensor, Fail> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let dims = model.params.input_dims();
    let want: usize = dims.iter().product();
    if len != want {
        return Err(Fail(
            FgrStatus::Shape,
            format!("expected {want} pixel values ({}x{}x{}), got {len}", dims[0], dims[1], dims[2]),
        ));
    }
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    Ok(Tensor::new(&[1, dims[0], dims[1], dims[2]], data)?)
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, want: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < want {
        return Err(Fail(FgrStatus::Shape, format!("{what} holds {len} values, {want} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, want))
}

/// Loads a checkpoint. On success `*out` owns a handle to release with
/// [`fgr_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fgr_model_load(path: *const c_char, out: *mut *mut FgrModel) -> FgrStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(FgrStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let params = load_checkpoint(Path::new(p))?;
        *out = Box::into_raw(Box::new(FgrModel { params }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`fgr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fgr_model_free(model: *mut FgrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input geometry and class count; any output pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fgr_model_info(
    model: *const FgrModel,
    channels: *mut usize,
    size: *mut usize,
    classes: *mut usize,
) -> FgrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let [c, s, _] = m.params.input_dims();
        for (p, v) in [(channels, c), (size, s), (classes, m.params.num_classes())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Class probabilities of one image. `probs` receives `classes` values;
/// `class_out`, if not null, the most probable class.
///
/// # Safety
/// `pixels` must hold `pixels_len` readable values and `probs`
/// `probs_len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn fgr_model_predict(
    model: *const FgrModel,
    pixels: *const f32,
    pixels_len: usize,
    probs: *mut f32,
    probs_len: usize,
    class_out: *mut usize,
) -> FgrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = image_from(m, pixels, pixels_len)?;
        let k = m.params.num_classes();
        let out = out_slice(probs, probs_len, k, "probs")?;
        let logits = m.params.logits(&x)?;
        let z: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
        let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
        let s: f64 = e.iter().sum();
        for (o, v) in out.iter_mut().zip(&e) {
            *o = (v / s) as f32;
        }
        if let Some(c) = class_out.as_mut() {
            *c = z.iter().position(|&v| v == top).unwrap_or(0);
        }
        Ok(())
    })
}

/// Saliency map of `class` for one image, `size * size` row-major values.
/// GradCAM variants are rectified when `rectify` is non-zero; occlusion
/// uses a gray baseline and a patch of one eighth of the side.
///
/// # Safety
/// As [`fgr_model_predict`], with `map` holding `map_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn fgr_model_saliency(
    model: *const FgrModel,
    pixels: *const f32,
    pixels_len: usize,
    method: FgrMethod,
    class_index: usize,
    rectify: i32,
    map: *mut f64,
    map_len: usize,
) -> FgrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = image_from(m, pixels, pixels_len)?;
        let [_, h, w] = m.params.input_dims();
        let out = out_slice(map, map_len, h * w, "map")?;
        let method = match method {
            FgrMethod::Gradient => SaliencyMethod::Gradient,
            FgrMethod::GradCam => SaliencyMethod::GradCam,
            FgrMethod::GradCamWeighted => SaliencyMethod::GradCamWeighted,
            FgrMethod::Occlusion => SaliencyMethod::Occlusion,
        };
        let s = explain(&m.params, &x, class_index, method, rectify != 0, None)?;
        out.copy_from_slice(&s.values);
        Ok(())
    })
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fgr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn fgr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
