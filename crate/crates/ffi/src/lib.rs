//! C ABI over the `avloc` library.
//!
//! Every function returns an `AvlocStatus`; on failure the message is
//! available from `avloc_last_error()` on the calling thread. Models are
//! opaque handles created by `avloc_model_load()` and released with
//! `avloc_model_free()`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use avloc::cli::{TrainRecord, CONFIG_FILE};
use avloc::corpus::BoundingBox;
use avloc::dsp::{log_mel_spectrogram, LogMelConfig, Waveform};
use avloc::encoders::{load_checkpoint, Encoder};
use avloc::eval::{ciou, consensus_map, localize};
use avloc::gradcheck::gradcheck;
use avloc::json::read_json;
use avloc::numcore::{ParamVector, Tensor};
use avloc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AvlocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    /// The gradient check ran and found a mismatch.
    CheckFailed = 7,
    Panic = 8,
}

/// A loaded checkpoint with its encoder and log-mel front end.
pub struct AvlocModel {
    encoder: Encoder,
    params: ParamVector,
    log_mel: LogMelConfig,
    delta_v: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AvlocStatus {
    match e {
        Error::Shape { .. } => AvlocStatus::Shape,
        Error::InvalidArgument(_) | Error::UnknownInstance(_) | Error::Placement { .. } => {
            AvlocStatus::InvalidArgument
        }
        Error::NonFinite { .. } | Error::GradientEvaluation(_) | Error::Diverged { .. } => {
            AvlocStatus::Numeric
        }
        Error::Format { .. } | Error::Json { .. } => AvlocStatus::Format,
        Error::Io { .. } => AvlocStatus::Io,
    }
}

struct Failure(AvlocStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AvlocStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AvlocStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AvlocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            AvlocStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            AvlocStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model<'a>(m: *const AvlocModel) -> Result<&'a AvlocModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn avloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn avloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint directory written by `avloc train`.
///
/// # Safety
/// `checkpoint_dir` must be a nul-terminated UTF-8 path and `out` a valid
/// pointer. On success `*out` owns a model to be released with
/// `avloc_model_free()`; on failure it is set to null.
#[no_mangle]
pub unsafe extern "C" fn avloc_model_load(
    checkpoint_dir: *const c_char,
    out: *mut *mut AvlocModel,
) -> AvlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if checkpoint_dir.is_null() {
            return Err(null("checkpoint_dir"));
        }
        let dir = CStr::from_ptr(checkpoint_dir)
            .to_str()
            .map_err(|_| invalid("checkpoint_dir is not UTF-8"))?;
        let dir = Path::new(dir);
        let ckpt = load_checkpoint(dir)?;
        let record: TrainRecord = read_json(&dir.join(CONFIG_FILE))?;
        let m = AvlocModel {
            encoder: Encoder::new(ckpt.encoder)?,
            params: ckpt.params,
            log_mel: record.config.log_mel,
            delta_v: record.config.train.delta_v,
        };
        *out = Box::into_raw(Box::new(m));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from `avloc_model_load()` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn avloc_model_free(model: *mut AvlocModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected image height, width and channel count, and the patch grid.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn avloc_model_shape(
    model: *const AvlocModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
    grid_rows: *mut usize,
    grid_cols: *mut usize,
) -> AvlocStatus {
    guard(|| {
        let m = self::model(model)?;
        let c = &m.encoder.cfg;
        for (p, v, name) in [
            (height, c.image_height, "height"),
            (width, c.image_width, "width"),
            (channels, c.channels, "channels"),
            (grid_rows, c.grid_rows, "grid_rows"),
            (grid_cols, c.grid_cols, "grid_cols"),
        ] {
            *p.as_mut().ok_or_else(|| null(name))? = v;
        }
        Ok(())
    })
}

/// Threshold the model was trained with.
///
/// # Safety
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn avloc_model_delta_v(
    model: *const AvlocModel,
    out: *mut f64,
) -> AvlocStatus {
    guard(|| {
        let m = self::model(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.delta_v;
        Ok(())
    })
}

/// Normalized, upsampled heatmap (`height × width`, row-major, values in
/// `[0, 1]`) for an image in `[H, W, C]` layout and a mono waveform.
/// `*degenerate` is set to 1 when the response map was constant.
///
/// # Safety
/// `image` holds `image_len` doubles, `audio` holds `audio_len` doubles and
/// `heatmap` has room for `heatmap_len` doubles. `degenerate` may be null.
#[no_mangle]
pub unsafe extern "C" fn avloc_localize(
    model: *const AvlocModel,
    image: *const f64,
    image_len: usize,
    audio: *const f64,
    audio_len: usize,
    sample_rate: f64,
    heatmap: *mut f64,
    heatmap_len: usize,
    degenerate: *mut i32,
) -> AvlocStatus {
    guard(|| {
        let m = self::model(model)?;
        let c = &m.encoder.cfg;
        let pixels = slice(image, image_len, "image")?;
        let samples = slice(audio, audio_len, "audio")?;
        let out = slice_mut(heatmap, heatmap_len, "heatmap")?;
        let expected = c.image_height * c.image_width * c.channels;
        if pixels.len() != expected {
            return Err(Failure(
                AvlocStatus::Shape,
                format!(
                    "image has {} values but the model expects {}x{}x{} = {expected}",
                    pixels.len(),
                    c.image_height,
                    c.image_width,
                    c.channels
                ),
            ));
        }
        if out.len() != c.image_height * c.image_width {
            return Err(Failure(
                AvlocStatus::Shape,
                format!(
                    "heatmap buffer holds {} values, need {}",
                    out.len(),
                    c.image_height * c.image_width
                ),
            ));
        }
        let img = Tensor::new(
            vec![c.image_height, c.image_width, c.channels],
            pixels.to_vec(),
        )?;
        let wave = Waveform::new(samples.to_vec(), sample_rate)?;
        let lms = log_mel_spectrogram(&wave, &m.log_mel)?;
        let loc = localize(&m.encoder, &m.params, &img, &lms)?;
        out.copy_from_slice(loc.heatmap.data());
        if let Some(d) = degenerate.as_mut() {
            *d = i32::from(loc.normalized.degenerate);
        }
        Ok(())
    })
}

/// cIoU of a `rows × cols` prediction against the consensus map of
/// `n_boxes` boxes given as `(x0, y0, x1, y1)` quadruples (half-open).
///
/// # Safety
/// `pred` holds `rows * cols` doubles and `boxes` holds `4 * n_boxes` values.
#[no_mangle]
pub unsafe extern "C" fn avloc_ciou(
    pred: *const f64,
    rows: usize,
    cols: usize,
    boxes: *const usize,
    n_boxes: usize,
    consensus: usize,
    tau_pix: f64,
    out: *mut f64,
) -> AvlocStatus {
    guard(|| {
        let p = slice(pred, rows * cols, "pred")?;
        let b = slice(boxes, 4 * n_boxes, "boxes")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let boxes = b
            .chunks_exact(4)
            .map(|q| BoundingBox::new(q[0], q[1], q[2], q[3]))
            .collect::<avloc::Result<Vec<_>>>()?;
        let g = consensus_map(&boxes, rows, cols, consensus)?;
        let pred = Tensor::new(vec![rows, cols], p.to_vec())?;
        *out = ciou(&pred, &g, tau_pix)?;
        Ok(())
    })
}

/// Runs the gradient self-check on `seeds` seeds starting at `seed`.
/// Returns `CheckFailed` when any component exceeds the
/// tolerance; `*max_rel_error` receives the worst error either way.
///
/// # Safety
/// `max_rel_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn avloc_gradcheck(
    seed: u64,
    seeds: usize,
    max_rel_error: *mut f64,
) -> AvlocStatus {
    guard(|| {
        if seeds == 0 {
            return Err(invalid("seeds must be ≥ 1"));
        }
        let reports = gradcheck(seed, seeds, false)?;
        let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        if let Some(o) = max_rel_error.as_mut() {
            *o = worst;
        }
        match reports.iter().find(|r| !r.passed()) {
            None => Ok(()),
            Some(r) => Err(Failure(
                AvlocStatus::CheckFailed,
                format!("{}: relative error {:e}", r.name, r.max_rel_error),
            )),
        }
    })
}
