//! C ABI for loading lungseg checkpoints and segmenting 8-bit images.
//!
//! Every fallible function returns one of the `LSEG_*` status codes. On
//! failure a description is kept per thread and can be read with
//! [`lseg_last_error`]. Models are opaque handles released with
//! [`lseg_model_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use lungseg::eval::{dice, predict_mask};
use lungseg::imaging::{BinaryMask, GrayImage};
use lungseg::unet::{load_checkpoint, save_checkpoint, UNet, UNetConfig};
use lungseg::Error;

pub const LSEG_OK: i32 = 0;
/// Invalid argument, shape or configuration.
pub const LSEG_ERR_USAGE: i32 = 1;
pub const LSEG_ERR_IO: i32 = 2;
pub const LSEG_ERR_NUMERIC: i32 = 3;
/// Malformed checkpoint or image data.
pub const LSEG_ERR_FORMAT: i32 = 4;
/// A Rust panic was caught at the boundary.
pub const LSEG_ERR_PANIC: i32 = 5;

/// Opaque model handle.
pub struct LsegModel {
    net: UNet<f32>,
}

/// Architecture of a model, as stored in its checkpoint.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LsegModelConfig {
    pub in_channels: u32,
    pub out_channels: u32,
    pub depth: u32,
    pub base_channels: u32,
    pub input_size: u32,
}

impl From<&UNetConfig> for LsegModelConfig {
    fn from(c: &UNetConfig) -> Self {
        LsegModelConfig {
            in_channels: c.in_channels as u32,
            out_channels: c.out_channels as u32,
            depth: c.depth as u32,
            base_channels: c.base_channels as u32,
            input_size: c.input_size as u32,
        }
    }
}

impl From<&LsegModelConfig> for UNetConfig {
    fn from(c: &LsegModelConfig) -> Self {
        UNetConfig {
            in_channels: c.in_channels as usize,
            out_channels: c.out_channels as usize,
            depth: c.depth as usize,
            base_channels: c.base_channels as usize,
            input_size: c.input_size as usize,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Shape(_) | Error::Usage(_) | Error::Config(_) => LSEG_ERR_USAGE,
        Error::Io { .. } => LSEG_ERR_IO,
        Error::Format(_) => LSEG_ERR_FORMAT,
        Error::Numeric(_) => LSEG_ERR_NUMERIC,
    }
}

fn usage(msg: &str) -> Error {
    Error::Usage(msg.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LSEG_OK,
        Ok(Err(e)) => {
            let code = code_of(&e);
            set_error(e.to_string());
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LSEG_ERR_PANIC
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(usage("path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| usage("path is not valid UTF-8"))
}

unsafe fn model_ref<'a>(m: *const LsegModel) -> Result<&'a LsegModel, Error> {
    m.as_ref().ok_or_else(|| usage("model handle is null"))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. On success `*out` receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn lseg_model_load(path: *const c_char, out: *mut *mut LsegModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(usage("out is null"));
        }
        let net = load_checkpoint(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LsegModel { net }));
        Ok(())
    })
}

/// Creates a freshly initialised model (useful for testing bindings).
#[no_mangle]
pub unsafe extern "C" fn lseg_model_init(
    config: *const LsegModelConfig,
    seed: u64,
    out: *mut *mut LsegModel,
) -> i32 {
    guard(|| {
        let config = config.as_ref().ok_or_else(|| usage("config is null"))?;
        if out.is_null() {
            return Err(usage("out is null"));
        }
        let net = UNet::build(config.into(), seed)?;
        *out = Box::into_raw(Box::new(LsegModel { net }));
        Ok(())
    })
}

/// Writes the model to a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn lseg_model_save(model: *const LsegModel, path: *const c_char) -> i32 {
    guard(|| save_checkpoint(&model_ref(model)?.net, path_arg(path)?))
}

/// Releases a handle. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lseg_model_free(model: *mut LsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lseg_model_config(model: *const LsegModel, out: *mut LsegModelConfig) -> i32 {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| usage("out is null"))?;
        *out = m.net.config().into();
        Ok(())
    })
}

/// Segments a row-major 8-bit grayscale image of `width`×`height` pixels.
/// `mask_out` must hold `width * height` bytes and receives 255 for lung
/// and 0 elsewhere.
#[no_mangle]
pub unsafe extern "C" fn lseg_model_predict(
    model: *const LsegModel,
    pixels: *const u8,
    width: u32,
    height: u32,
    threshold: f64,
    mask_out: *mut u8,
) -> i32 {
    guard(|| {
        let m = model_ref(model)?;
        if pixels.is_null() || mask_out.is_null() {
            return Err(usage("pixel buffers must not be null"));
        }
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 {
            return Err(usage("image dimensions must be positive"));
        }
        let img = GrayImage::new(w, h, slice::from_raw_parts(pixels, w * h).to_vec())?;
        let mask = predict_mask(&m.net, &img, threshold)?;
        let out = slice::from_raw_parts_mut(mask_out, w * h);
        for (o, &v) in out.iter_mut().zip(mask.pixels()) {
            *o = if v { 255 } else { 0 };
        }
        Ok(())
    })
}

/// Dice coefficient of two masks of `len` bytes each (nonzero = foreground).
/// Two empty masks score 1.
#[no_mangle]
pub unsafe extern "C" fn lseg_dice(a: *const u8, b: *const u8, len: usize, out: *mut f64) -> i32 {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(usage("null pointer argument"));
        }
        let to_mask = |p: *const u8| {
            let px = slice::from_raw_parts(p, len).iter().map(|&v| v != 0).collect();
            BinaryMask::new(len, 1, px)
        };
        *out = dice(&to_mask(a)?, &to_mask(b)?)?;
        Ok(())
    })
}
