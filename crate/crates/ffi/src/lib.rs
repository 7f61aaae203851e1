//! C ABI over the de-occlusion core.
//!
//! Images cross the boundary as tightly packed 8-bit RGB (row-major, 3 bytes
//! per pixel) and masks as one byte per pixel, nonzero marking occluded
//! pixels. Every fallible call returns a [`DeoccStatus`]; on failure the
//! thread's last error message describes the cause.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use deocc::image::{BinaryMask, Image};
use deocc::model::Generator;
use deocc::training::{load_checkpoint, reconstruct, Stage};
use deocc::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeoccStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range, e.g. image size or a non-UTF-8 path.
    InvalidArgument = 2,
    /// Configuration problem, including checkpoint version mismatches.
    Config = 3,
    /// Unreadable or malformed input data.
    Data = 4,
    /// The checkpoint failed its integrity check.
    Checkpoint = 5,
    /// Tensor or image shapes disagree.
    Shape = 6,
    /// Non-finite values during computation.
    Numeric = 7,
    /// Stage ordering violation.
    StageOrder = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// Training stage recorded in a checkpoint.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeoccStage {
    Pretrain = 0,
    Stage1 = 1,
    Stage2 = 2,
}

impl From<Stage> for DeoccStage {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Pretrain => DeoccStage::Pretrain,
            Stage::Stage1 => DeoccStage::Stage1,
            Stage::Stage2 => DeoccStage::Stage2,
        }
    }
}

/// Opaque generator loaded from a checkpoint.
pub struct DeoccModel {
    generator: Generator,
    stage: Stage,
    step: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeoccModelInfo {
    /// Required input width and height in pixels.
    pub resolution: u32,
    pub base_width: u32,
    pub latent_dim: u32,
    pub stage: DeoccStage,
    pub step: u64,
    /// True when attention fusion is trained and used by default.
    pub attention: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DeoccStatus {
    match e {
        Error::StageOrder(_) => DeoccStatus::StageOrder,
        Error::CorruptCheckpoint { .. } => DeoccStatus::Checkpoint,
        Error::Shape { .. } => DeoccStatus::Shape,
        Error::Numeric { .. } | Error::TrainingAbort { .. } => DeoccStatus::Numeric,
        _ => match e.category() {
            "config" => DeoccStatus::Config,
            _ => DeoccStatus::Data,
        },
    }
}

struct Failure(DeoccStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: DeoccStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, records any failure and converts panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DeoccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DeoccStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            DeoccStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(DeoccStatus::NullArgument, format!("{name} is null"));
    }
    Ok(())
}

fn dims(width: u32, height: u32) -> Result<(usize, usize), Failure> {
    if width == 0 || height == 0 {
        return fail(DeoccStatus::InvalidArgument, format!("empty image {width}x{height}"));
    }
    Ok((height as usize, width as usize))
}

/// # Safety
/// `rgb` must point to `h * w * 3` readable bytes.
unsafe fn image_from_rgb(rgb: *const u8, h: usize, w: usize) -> Image {
    let bytes = std::slice::from_raw_parts(rgb, h * w * 3);
    Image::new(h, w, bytes.iter().map(|&v| v as f64 / 255.0).collect()).expect("bytes map into [0, 1]")
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn deocc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failed call on this thread, or null after a
/// successful call. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn deocc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn deocc_status_name(status: DeoccStatus) -> *const c_char {
    let s: &'static str = match status {
        DeoccStatus::Ok => "ok\0",
        DeoccStatus::NullArgument => "null-argument\0",
        DeoccStatus::InvalidArgument => "invalid-argument\0",
        DeoccStatus::Config => "config\0",
        DeoccStatus::Data => "data\0",
        DeoccStatus::Checkpoint => "checkpoint\0",
        DeoccStatus::Shape => "shape\0",
        DeoccStatus::Numeric => "numeric\0",
        DeoccStatus::StageOrder => "stage-order\0",
        DeoccStatus::Internal => "internal\0",
    };
    s.as_ptr().cast()
}

/// Loads the generator from a checkpoint file. On success `*out` owns a model
/// that must be released with `deocc_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn deocc_model_load(path: *const c_char, out: *mut *mut DeoccModel) -> DeoccStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(DeoccStatus::InvalidArgument, "path is not valid UTF-8");
        };
        let state = load_checkpoint(Path::new(p))?;
        *out = Box::into_raw(Box::new(DeoccModel {
            generator: state.generator,
            stage: state.stage,
            step: state.step,
        }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `deocc_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn deocc_model_free(model: *mut DeoccModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live model and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn deocc_model_info(model: *const DeoccModel, out: *mut DeoccModelInfo) -> DeoccStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        let c = m.generator.config;
        *out = DeoccModelInfo {
            resolution: c.resolution as u32,
            base_width: c.base_width as u32,
            latent_dim: c.latent_dim as u32,
            stage: m.stage.into(),
            step: m.step,
            attention: c.attention && m.stage == Stage::Stage2,
        };
        Ok(())
    })
}

/// Reconstructs the occluded region of `rgb` and writes the composited result
/// to `out_rgb`; unmasked pixels are copied from the input unchanged. Width and
/// height must equal the model resolution. Attention fusion is applied when
/// `use_attention` is set and the checkpoint comes from stage 2.
///
/// # Safety
/// `rgb` and `out_rgb` must each hold `width * height * 3` bytes and `mask`
/// `width * height` bytes; `out_rgb` may not overlap the inputs.
#[no_mangle]
pub unsafe extern "C" fn deocc_reconstruct(
    model: *const DeoccModel,
    rgb: *const u8,
    mask: *const u8,
    width: u32,
    height: u32,
    use_attention: bool,
    out_rgb: *mut u8,
) -> DeoccStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(rgb, "rgb")?;
        non_null(mask, "mask")?;
        non_null(out_rgb, "out_rgb")?;
        let m = &*model;
        let (h, w) = dims(width, height)?;
        let res = m.generator.config.resolution;
        if (h, w) != (res, res) {
            return fail(
                DeoccStatus::InvalidArgument,
                format!("image is {w}x{h}, model expects {res}x{res}"),
            );
        }
        let occ = image_from_rgb(rgb, h, w);
        let bits = std::slice::from_raw_parts(mask, h * w);
        let hole = BinaryMask::from_fn(h, w, |y, x| bits[y * w + x] != 0);
        let attention = use_attention && m.stage == Stage::Stage2;
        let rec = reconstruct(&m.generator, &occ, &hole, attention)?;
        let dst = std::slice::from_raw_parts_mut(out_rgb, h * w * 3);
        dst.copy_from_slice(rec.to_rgb8().as_raw());
        Ok(())
    })
}

type Metric = fn(&Image, &Image) -> deocc::Result<f64>;

unsafe fn metric(f: Metric, a: *const u8, b: *const u8, width: u32, height: u32, out: *mut f64) -> DeoccStatus {
    guard(|| {
        non_null(a, "a")?;
        non_null(b, "b")?;
        non_null(out, "out")?;
        let (h, w) = dims(width, height)?;
        *out = f(&image_from_rgb(a, h, w), &image_from_rgb(b, h, w))?;
        Ok(())
    })
}

/// Mean SSIM over the three channels of two RGB images.
///
/// # Safety
/// `a` and `b` must each hold `width * height * 3` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn deocc_ssim(a: *const u8, b: *const u8, width: u32, height: u32, out: *mut f64) -> DeoccStatus {
    metric(deocc::evaluation::ssim, a, b, width, height, out)
}

/// PSNR in dB for unit dynamic range, capped at 100 for identical images.
///
/// # Safety
/// `a` and `b` must each hold `width * height * 3` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn deocc_psnr(a: *const u8, b: *const u8, width: u32, height: u32, out: *mut f64) -> DeoccStatus {
    metric(deocc::evaluation::psnr, a, b, width, height, out)
}
