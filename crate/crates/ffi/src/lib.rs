//! C interface to `frea-core`.
//!
//! Every fallible call returns a [`FreaStatus`]. On failure a message is kept
//! per thread and can be read with [`frea_last_error_message`]. Models are
//! opaque [`FreaModel`] handles released with [`frea_model_free`].
//!
//! Images cross the boundary as row-major `double` buffers of one channel.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use frea_core::frea_unet::{checkpoint, FreaUnetModel, ModelConfig};
use frea_core::image_ops::{denormalize, freq_split, normalize, ImageFile};
use frea_core::objectives::evaluate_pair;
use frea_core::{FreaError, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Format = 4,
    Io = 5,
    Config = 6,
    EmptyMask = 7,
    NonFinite = 8,
    Panic = 9,
}

/// Per-image quality metrics in intensity units.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FreaMetrics {
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Opaque model handle.
pub struct FreaModel {
    inner: FreaUnetModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FreaError) -> FreaStatus {
    match e {
        FreaError::Shape { .. } => FreaStatus::Shape,
        FreaError::InvalidArgument(_) | FreaError::Dataset(_) => FreaStatus::InvalidArgument,
        FreaError::Config(_) => FreaStatus::Config,
        FreaError::Format { .. } | FreaError::UnsupportedFormat(_) => FreaStatus::Format,
        FreaError::EmptyMask => FreaStatus::EmptyMask,
        FreaError::NonFinite(_) | FreaError::NonFiniteLoss { .. } => FreaStatus::NonFinite,
        FreaError::Io { .. } => FreaStatus::Io,
    }
}

struct Failure(FreaStatus, String);

impl From<FreaError> for Failure {
    fn from(e: FreaError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FreaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(FreaStatus::InvalidArgument, msg)
}

/// Runs `f`, records any failure and converts panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FreaStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FreaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            FreaStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn pixel_count(height: usize, width: usize) -> Result<usize, Failure> {
    match height.checked_mul(width) {
        Some(n) if n > 0 => Ok(n),
        _ => Err(invalid(format!("bad image size {height}x{width}"))),
    }
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn frea_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn frea_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn store_model(out: *mut *mut FreaModel, inner: FreaUnetModel) {
    let mut inner = inner;
    inner.eval();
    unsafe { *out = Box::into_raw(Box::new(FreaModel { inner })) };
}

/// Loads a checkpoint file into a new handle, ready for inference.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn frea_model_load(path: *const c_char, out: *mut *mut FreaModel) -> FreaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::load(path_arg(path)?)?;
        store_model(out, model);
        Ok(())
    })
}

/// Decodes an in-memory checkpoint into a new handle.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn frea_model_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut FreaModel,
) -> FreaStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::from_bytes(slice::from_raw_parts(data, len))?;
        store_model(out, model);
        Ok(())
    })
}

/// Builds an untrained 64×64 model with the narrow layer widths.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn frea_model_new_desk(seed: u64, out: *mut *mut FreaModel) -> FreaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ModelConfig {
            rng_seed: seed,
            ..ModelConfig::desk()
        };
        store_model(out, FreaUnetModel::build(config)?);
        Ok(())
    })
}

/// Writes the model to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn frea_model_save(model: *const FreaModel, path: *const c_char) -> FreaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        checkpoint::save(&model.inner, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn frea_model_free(model: *mut FreaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square images the model takes, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn frea_model_input_size(model: *const FreaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().input_size)
}

/// Number of trainable scalars, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn frea_model_param_count(model: *const FreaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Synthesizes a PET image from an MR image of `size × size` pixels with
/// intensities in `[0, q]`. The result is written to `out` in the same units.
///
/// # Safety
/// `mr` and `out` must each hold `size * size` doubles; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn frea_model_predict(
    model: *mut FreaModel,
    mr: *const f64,
    size: usize,
    q: f64,
    out: *mut f64,
) -> FreaStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        let n = pixel_count(size, size)?;
        let pixels = input(mr, n, "mr")?.to_vec();
        let out = output(out, n, "out")?;
        let img = ImageFile::new(size, size, 1, q, pixels)?;
        let result = model.inner.forward(&normalize(&img)?)?;
        out.copy_from_slice(&denormalize(&result.final_out, q)?.pixels);
        Ok(())
    })
}

/// Splits an image into its Gaussian low band and the residual high band.
///
/// # Safety
/// `image`, `low` and `high` must each hold `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn frea_freq_split(
    image: *const f64,
    height: usize,
    width: usize,
    sigma: f64,
    kernel_size: usize,
    low: *mut f64,
    high: *mut f64,
) -> FreaStatus {
    guard(|| {
        let n = pixel_count(height, width)?;
        let t = Tensor::new(vec![1, 1, height, width], input(image, n, "image")?.to_vec())?;
        let (low, high) = (output(low, n, "low")?, output(high, n, "high")?);
        let bands = freq_split(&t, sigma, kernel_size)?;
        low.copy_from_slice(bands.low.data());
        high.copy_from_slice(bands.high.data());
        Ok(())
    })
}

/// MAE over the body mask of `real`, PSNR and SSIM between two images.
///
/// # Safety
/// `real` and `syn` must each hold `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frea_metrics(
    real: *const f64,
    syn: *const f64,
    height: usize,
    width: usize,
    mask_threshold: f64,
    out: *mut FreaMetrics,
) -> FreaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let n = pixel_count(height, width)?;
        let real = input(real, n, "real")?.to_vec();
        let syn = input(syn, n, "syn")?.to_vec();
        // Q only matters for file I/O; the metrics take their own peak.
        let q = real.iter().chain(&syn).fold(1.0f64, |a, &v| a.max(v));
        let m = evaluate_pair(
            &ImageFile::new(height, width, 1, q, real)?,
            &ImageFile::new(height, width, 1, q, syn)?,
            mask_threshold,
        )?;
        *out = FreaMetrics {
            mae: m.mae,
            psnr: m.psnr,
            ssim: m.ssim,
        };
        Ok(())
    })
}
