//! C ABI for loading a ddcnet model, running inference, and reading or
//! writing `.flo` files.
//!
//! Every fallible function returns a [`DdcStatus`]. On failure the message is
//! available from [`ddc_last_error`] until the next call on the same thread.
//! Frames are planar RGB `f32` buffers of `3 * h * w` values in `[0, 1]`;
//! flow buffers hold `2 * h * w` interleaved `(u, v)` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ddcnet::error::{Error, ErrorKind};
use ddcnet::flow_io::{read_flo, write_flo, FlowField};
use ddcnet::model::{default_config, infer, load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use ddcnet::{Shape4, Tensor4};

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdcStatus {
    Ok = 0,
    NullArgument = 1,
    Usage = 2,
    Data = 3,
    Numeric = 4,
    Panic = 5,
}

/// Opaque model handle.
pub struct DdcModel {
    cfg: ModelConfig,
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DdcStatus {
    match e.kind() {
        ErrorKind::Usage => DdcStatus::Usage,
        ErrorKind::Data => DdcStatus::Data,
        ErrorKind::Numeric => DdcStatus::Numeric,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DdcStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdcStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null argument: {what}"));
            DdcStatus::NullArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            DdcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Input(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn dims(h: usize, w: usize) -> Result<usize, Fail> {
    h.checked_mul(w)
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail::Lib(Error::Input(format!("bad dimensions {h}x{w}"))))
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn ddc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates the canonical architecture with He-initialized weights.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ddc_model_new_default(seed: u64, out: *mut *mut DdcModel) -> DdcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg = default_config();
        let params = ModelParams::init(&cfg, seed);
        *out = Box::into_raw(Box::new(DdcModel { cfg, params }));
        Ok(())
    })
}

/// Loads a `DDCM` checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ddc_model_load(path: *const c_char, out: *mut *mut DdcModel) -> DdcStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let bytes = std::fs::read(path).map_err(Error::from)?;
        let (cfg, params) = load_checkpoint(&bytes)?;
        *out = Box::into_raw(Box::new(DdcModel { cfg, params }));
        Ok(())
    })
}

/// Writes the model as a `DDCM` checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ddc_model_save(model: *const DdcModel, path: *const c_char) -> DdcStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let path = path_arg(path, "path")?;
        let bytes = save_checkpoint(&m.cfg, &m.params)?;
        std::fs::write(path, bytes).map_err(Error::from)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not already freed.
#[no_mangle]
pub unsafe extern "C" fn ddc_model_free(model: *mut DdcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ddc_model_param_count(model: *const DdcModel) -> usize {
    model.as_ref().map_or(0, |m| m.cfg.param_count())
}

/// Full-resolution flow for one frame pair. `h` and `w` must be multiples
/// of 4; `flow_out` receives `2 * h * w` floats.
///
/// # Safety
/// `frame1` and `frame2` must point to `3 * h * w` floats and `flow_out` to
/// `2 * h * w` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ddc_model_infer(
    model: *const DdcModel,
    frame1: *const f32,
    frame2: *const f32,
    h: usize,
    w: usize,
    flow_out: *mut f32,
) -> DdcStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        if frame1.is_null() || frame2.is_null() || flow_out.is_null() {
            return Err(Fail::Null("frame or output buffer"));
        }
        let n = dims(h, w)?;
        let shape = Shape4::new(1, 3, h, w);
        let f1 = Tensor4::from_vec(shape, std::slice::from_raw_parts(frame1, 3 * n).to_vec())?;
        let f2 = Tensor4::from_vec(shape, std::slice::from_raw_parts(frame2, 3 * n).to_vec())?;
        let out = infer(&m.cfg, &m.params, &f1, &f2)?;
        let flow = FlowField::from_tensor(&out.flow_final, 0)?;
        std::slice::from_raw_parts_mut(flow_out, 2 * n).copy_from_slice(flow.uv());
        Ok(())
    })
}

/// Reads the dimensions of a `.flo` file.
///
/// # Safety
/// `path` must be NUL-terminated; `h` and `w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ddc_flo_dims(path: *const c_char, h: *mut usize, w: *mut usize) -> DdcStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if h.is_null() || w.is_null() {
            return Err(Fail::Null("h or w"));
        }
        let f = read_flo(&std::fs::read(path).map_err(Error::from)?)?;
        *h = f.h;
        *w = f.w;
        Ok(())
    })
}

/// Reads a `.flo` file into `uv_out`, which must hold exactly `len` floats
/// (`2 * h * w`; see [`ddc_flo_dims`]). Unknown-flow markers are copied as stored.
///
/// # Safety
/// `path` must be NUL-terminated and `uv_out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ddc_flo_read(path: *const c_char, uv_out: *mut f32, len: usize) -> DdcStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if uv_out.is_null() {
            return Err(Fail::Null("uv_out"));
        }
        let f = read_flo(&std::fs::read(path).map_err(Error::from)?)?;
        if f.uv().len() != len {
            return Err(Error::Input(format!("buffer holds {len} floats, file has {}", f.uv().len())).into());
        }
        std::slice::from_raw_parts_mut(uv_out, len).copy_from_slice(f.uv());
        Ok(())
    })
}

/// Writes `2 * h * w` interleaved floats as a `.flo` file.
///
/// # Safety
/// `path` must be NUL-terminated and `uv` must point to `2 * h * w` floats.
#[no_mangle]
pub unsafe extern "C" fn ddc_flo_write(path: *const c_char, uv: *const f32, h: usize, w: usize) -> DdcStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if uv.is_null() {
            return Err(Fail::Null("uv"));
        }
        let n = dims(h, w)?;
        let f = FlowField::from_interleaved(h, w, std::slice::from_raw_parts(uv, 2 * n).to_vec())?;
        std::fs::write(path, write_flo(&f)).map_err(Error::from)?;
        Ok(())
    })
}
