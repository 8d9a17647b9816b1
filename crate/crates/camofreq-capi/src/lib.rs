//! C ABI for the camofreq library.
//!
//! The generated header lives at `include/camofreq.h` and is rebuilt by
//! `build.rs` whenever this file changes.
//!
//! # Conventions
//!
//! - Every fallible function returns [`CamofreqStatus`];
//!   `CAMOFREQ_STATUS_OK` (0) means success. Any other value is a failure
//!   and a human-readable message is stored thread-locally; fetch it with
//!   [`camofreq_last_error`]. The message describes the *most recent*
//!   failure on the calling thread and is not cleared by later successes.
//! - Objects are handed out as opaque handles through out-pointers. On
//!   failure nothing is written to the out-pointers. Every handle must be
//!   released exactly once with its matching `_free` function; the `_free`
//!   functions accept NULL as a no-op.
//! - Passing NULL where a non-NULL pointer is required is reported as
//!   `CAMOFREQ_STATUS_ARGUMENT`, never undefined behaviour — with the
//!   exception of buffer pointers whose length the caller states (those
//!   cannot be validated and carry their contract in the `# Safety` docs).
//! - Image data crosses the boundary as `double` arrays in row-major
//!   height × width × channel order with the channel index fastest.
//! - Panics never unwind across the boundary; they are caught and reported
//!   as `CAMOFREQ_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use camofreq::pipeline::{self, ModelConfig};
use camofreq::tensor::{ParamStore, Tensor};
use camofreq::{cbom, fdtim, imageio, mffam, Error};

/// Result of a camofreq call. Zero is success; anything else is a failure
/// whose message can be fetched with `camofreq_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamofreqStatus {
    /// The call succeeded.
    Ok = 0,
    /// A pointer was NULL, a buffer too small, or a string not UTF-8.
    Argument = 1,
    /// Tensor or mask shapes do not line up.
    Dimension = 2,
    /// A numeric argument is outside its documented domain.
    Contract = 3,
    /// A configuration value is invalid or inconsistent.
    Config = 4,
    /// A numeric invariant failed (non-finite value, residue too large).
    Numerical = 5,
    /// A file's contents are not in the expected format.
    Format = 6,
    /// Input data is structurally valid but semantically unusable.
    Validation = 7,
    /// Text input could not be parsed.
    Parse = 8,
    /// Training aborted (e.g. the loss became non-finite).
    Training = 9,
    /// An operating-system I/O error.
    Io = 10,
    /// An internal panic was caught at the boundary.
    Panic = 11,
}

/// An owned image or feature map: float64, height × width × channels,
/// row-major with the channel index fastest.
pub struct CamofreqImage(Tensor);

/// An owned set of named model parameters.
pub struct CamofreqParams(ParamStore);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: CamofreqStatus, message: impl std::fmt::Display) -> CamofreqStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message.to_string());
    status
}

fn fail_error(e: Error) -> CamofreqStatus {
    let status = match &e {
        Error::Dimension(_) => CamofreqStatus::Dimension,
        Error::Contract(_) => CamofreqStatus::Contract,
        Error::Config(_) => CamofreqStatus::Config,
        Error::Numerical(_) => CamofreqStatus::Numerical,
        Error::Format(_) => CamofreqStatus::Format,
        Error::Validation(_) => CamofreqStatus::Validation,
        Error::Parse { .. } => CamofreqStatus::Parse,
        Error::Training { .. } => CamofreqStatus::Training,
        Error::Io(_) => CamofreqStatus::Io,
    };
    fail(status, e)
}

fn null_arg(name: &str) -> CamofreqStatus {
    fail(
        CamofreqStatus::Argument,
        format!("{name} must not be NULL"),
    )
}

/// Run a fallible body with a panic guard so unwinding never crosses the
/// C boundary.
fn guarded(body: impl FnOnce() -> CamofreqStatus) -> CamofreqStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with a non-string payload".to_string());
            fail(CamofreqStatus::Panic, format!("internal panic: {text}"))
        }
    }
}

/// # Safety
/// `path` must be a NUL-terminated string valid for reads.
unsafe fn path_arg<'a>(path: *const c_char, name: &str) -> Result<&'a Path, CamofreqStatus> {
    if path.is_null() {
        return Err(null_arg(name));
    }
    match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(
            CamofreqStatus::Argument,
            format!("{name} is not valid UTF-8"),
        )),
    }
}

fn parse_config(config_json: Option<&str>) -> Result<ModelConfig, CamofreqStatus> {
    match config_json {
        None => Ok(ModelConfig::default()),
        Some(text) => ModelConfig::from_json(text).map_err(fail_error),
    }
}

/// # Safety
/// `config_json`, when non-NULL, must be a NUL-terminated string valid for
/// reads.
unsafe fn config_arg(config_json: *const c_char) -> Result<ModelConfig, CamofreqStatus> {
    if config_json.is_null() {
        parse_config(None)
    } else {
        match unsafe { CStr::from_ptr(config_json) }.to_str() {
            Ok(s) => parse_config(Some(s)),
            Err(_) => Err(fail(
                CamofreqStatus::Argument,
                "config_json is not valid UTF-8",
            )),
        }
    }
}

fn emit_image(out: *mut *mut CamofreqImage, tensor: Tensor) -> CamofreqStatus {
    // Callers have already checked `out` for NULL.
    unsafe { out.write(Box::into_raw(Box::new(CamofreqImage(tensor)))) };
    CamofreqStatus::Ok
}

/// Library version as a static NUL-terminated string. Never NULL; do not
/// free.
#[no_mangle]
pub extern "C" fn camofreq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the most recent failure message on the calling thread into `buf`
/// (NUL-terminated, truncated to fit) and return the byte length the full
/// message needs including its NUL. With a NULL `buf` or zero `cap`,
/// nothing is copied and only the needed length is returned. The message is
/// empty until the first failure.
///
/// # Safety
/// When `buf` is non-NULL it must be valid for writes of `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                buf.add(n).write(0);
            }
        }
        bytes.len() + 1
    })
}

/// Create an image from caller-provided pixel data (row-major, channel
/// fastest). All of `height`, `width` and `channels` must be at least 1.
///
/// # Safety
/// `data` must be valid for reads of `height * width * channels` doubles.
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut CamofreqImage,
) -> CamofreqStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        if data.is_null() {
            return null_arg("data");
        }
        if height == 0 || width == 0 || channels == 0 {
            return fail(
                CamofreqStatus::Argument,
                format!("image dimensions must be positive, got {height}×{width}×{channels}"),
            );
        }
        let values = unsafe { std::slice::from_raw_parts(data, height * width * channels) };
        match Tensor::new(&[height, width, channels], values.to_vec()) {
            Ok(t) => emit_image(out, t),
            Err(e) => fail_error(e),
        }
    })
}

/// Report an image's dimensions. Each of the three out-pointers may be NULL
/// if that dimension is not wanted.
///
/// # Safety
/// `image` must be a live handle from this library. Non-NULL out-pointers
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_image_dims(
    image: *const CamofreqImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> CamofreqStatus {
    guarded(|| {
        let Some(image) = (unsafe { image.as_ref() }) else {
            return null_arg("image");
        };
        let (h, w, c) = match image.0.hwc() {
            Ok(d) => d,
            Err(e) => return fail_error(e),
        };
        unsafe {
            if !height.is_null() {
                height.write(h);
            }
            if !width.is_null() {
                width.write(w);
            }
            if !channels.is_null() {
                channels.write(c);
            }
        }
        CamofreqStatus::Ok
    })
}

/// Copy an image's pixel data (row-major, channel fastest) into `out`,
/// which holds `cap` doubles. Fails with `CAMOFREQ_STATUS_ARGUMENT` when
/// `cap` is smaller than height × width × channels.
///
/// # Safety
/// `image` must be a live handle from this library. `out` must be valid for
/// writes of `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn camofreq_image_data(
    image: *const CamofreqImage,
    out: *mut f64,
    cap: usize,
) -> CamofreqStatus {
    guarded(|| {
        let Some(image) = (unsafe { image.as_ref() }) else {
            return null_arg("image");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let data = image.0.data();
        if cap < data.len() {
            return fail(
                CamofreqStatus::Argument,
                format!("buffer holds {cap} doubles but the image has {}", data.len()),
            );
        }
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len()) };
        CamofreqStatus::Ok
    })
}

/// Release an image handle. NULL is a no-op.
///
/// # Safety
/// `image` must be NULL or a live handle from this library; it must not be
/// used after this call.
#[no_mangle]
pub unsafe extern "C" fn camofreq_image_free(image: *mut CamofreqImage) {
    if !image.is_null() {
        drop(unsafe { Box::from_raw(image) });
    }
}

/// Load a PNG file as an H×W×3 image with values in [0, 1]. Grayscale and
/// alpha-carrying PNGs are converted to RGB.
///
/// # Safety
/// `path` must be a NUL-terminated string valid for reads. `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_image_read_png(
    path: *const c_char,
    out: *mut *mut CamofreqImage,
) -> CamofreqStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match imageio::load_image(path) {
            Ok(t) => emit_image(out, t),
            Err(e) => fail_error(e),
        }
    })
}

/// Write a 1- or 3-channel image to a PNG file, clamping values to [0, 1]
/// and quantizing to 8 bits with round-half-even.
///
/// # Safety
/// `image` must be a live handle from this library. `path` must be a
/// NUL-terminated string valid for reads.
#[no_mangle]
pub unsafe extern "C" fn camofreq_image_write_png(
    image: *const CamofreqImage,
    path: *const c_char,
) -> CamofreqStatus {
    guarded(|| {
        let Some(image) = (unsafe { image.as_ref() }) else {
            return null_arg("image");
        };
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match imageio::save_image(&image.0, path) {
            Ok(()) => CamofreqStatus::Ok,
            Err(e) => fail_error(e),
        }
    })
}

/// Apply channel-balance correction with blend weight `lambda` in [0, 1].
/// `params` may be NULL, in which case a freshly zero-initialised gate is
/// used (a neutral correction, as the gate has learned nothing); otherwise
/// the handle must hold gate parameters registered under the `cbom` prefix
/// for the image's channel count. `lambda` = 0 returns a bit-exact copy of
/// the input.
///
/// # Safety
/// `image` must be a live handle from this library; `params` must be NULL
/// or a live handle. `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_channel_balance(
    image: *const CamofreqImage,
    params: *const CamofreqParams,
    lambda: f64,
    out: *mut *mut CamofreqImage,
) -> CamofreqStatus {
    guarded(|| {
        let Some(image) = (unsafe { image.as_ref() }) else {
            return null_arg("image");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let corrected = match unsafe { params.as_ref() } {
            Some(p) => cbom::apply(&image.0, &p.0, "cbom", lambda),
            None => {
                let channels = match image.0.hwc() {
                    Ok((_, _, c)) => c,
                    Err(e) => return fail_error(e),
                };
                let mut fresh = ParamStore::new(0);
                if let Err(e) = cbom::register_channel_bias(&mut fresh, "cbom", channels) {
                    return fail_error(e);
                }
                cbom::apply(&image.0, &fresh, "cbom", lambda)
            }
        };
        match corrected {
            Ok(t) => emit_image(out, t),
            Err(e) => fail_error(e),
        }
    })
}

/// Zero the K largest-amplitude frequency cells per channel (conjugate
/// partners follow their mates, so up to K+1 cells can go per channel) and
/// return the filtered image. `protect_dc` keeps each channel's mean out of
/// the ranking. K = 0 removes nothing and returns a bit-exact copy of the
/// input without touching the frequency domain. When `cells_removed` is
/// non-NULL it receives the total number of zeroed cells across all
/// channels.
///
/// # Safety
/// `image` must be a live handle from this library. `out` must be valid for
/// writes; `cells_removed` must be NULL or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_spectrum_filter(
    image: *const CamofreqImage,
    k: usize,
    protect_dc: bool,
    cells_removed: *mut usize,
    out: *mut *mut CamofreqImage,
) -> CamofreqStatus {
    guarded(|| {
        let Some(image) = (unsafe { image.as_ref() }) else {
            return null_arg("image");
        };
        if out.is_null() {
            return null_arg("out");
        }
        if k == 0 {
            // An empty removal budget is the identity; skipping the
            // transform pair keeps the copy bit-exact instead of carrying
            // round-trip noise at the last few ulps.
            if !cells_removed.is_null() {
                unsafe { cells_removed.write(0) };
            }
            return emit_image(out, image.0.clone());
        }
        let spectrum = match fdtim::dft2(&image.0) {
            Ok(s) => s,
            Err(e) => return fail_error(e),
        };
        let (filtered, report) = match fdtim::topk_filter_detailed(&spectrum, k, protect_dc) {
            Ok(r) => r,
            Err(e) => return fail_error(e),
        };
        let back = match fdtim::idft2(&filtered) {
            Ok(t) => t,
            Err(e) => return fail_error(e),
        };
        if !cells_removed.is_null() {
            unsafe { cells_removed.write(report.cells_removed.iter().sum()) };
        }
        emit_image(out, back)
    })
}

/// Single-level orthonormal Haar decomposition. Odd spatial dims are
/// edge-padded to even first, so each output band is ⌈H/2⌉ × ⌈W/2⌉ × C.
/// All four out-pointers are required and on success each receives a fresh
/// handle.
///
/// # Safety
/// `image` must be a live handle from this library. `ll`, `lh`, `hl` and
/// `hh` must all be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_wavelet_bands(
    image: *const CamofreqImage,
    ll: *mut *mut CamofreqImage,
    lh: *mut *mut CamofreqImage,
    hl: *mut *mut CamofreqImage,
    hh: *mut *mut CamofreqImage,
) -> CamofreqStatus {
    guarded(|| {
        let Some(image) = (unsafe { image.as_ref() }) else {
            return null_arg("image");
        };
        for (p, name) in [(ll, "ll"), (lh, "lh"), (hl, "hl"), (hh, "hh")] {
            if p.is_null() {
                return null_arg(name);
            }
        }
        match mffam::dwt2(&image.0, 1) {
            Ok(bands) => {
                emit_image(ll, bands.ll);
                emit_image(lh, bands.lh);
                emit_image(hl, bands.hl);
                emit_image(hh, bands.hh);
                CamofreqStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Load model parameters from a file written by `camofreq_params_write` (or
/// the `camofreq train` command).
///
/// # Safety
/// `path` must be a NUL-terminated string valid for reads. `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_params_read(
    path: *const c_char,
    out: *mut *mut CamofreqParams,
) -> CamofreqStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ParamStore::load(path) {
            Ok(p) => {
                unsafe { out.write(Box::into_raw(Box::new(CamofreqParams(p)))) };
                CamofreqStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Write model parameters to a file. The format round-trips bit-exactly.
///
/// # Safety
/// `params` must be a live handle from this library. `path` must be a
/// NUL-terminated string valid for reads.
#[no_mangle]
pub unsafe extern "C" fn camofreq_params_write(
    params: *const CamofreqParams,
    path: *const c_char,
) -> CamofreqStatus {
    guarded(|| {
        let Some(params) = (unsafe { params.as_ref() }) else {
            return null_arg("params");
        };
        let path = match unsafe { path_arg(path, "path") } {
            Ok(p) => p,
            Err(s) => return s,
        };
        match params.0.save(path) {
            Ok(()) => CamofreqStatus::Ok,
            Err(e) => fail_error(e),
        }
    })
}

/// Release a parameter handle. NULL is a no-op.
///
/// # Safety
/// `params` must be NULL or a live handle from this library; it must not be
/// used after this call.
#[no_mangle]
pub unsafe extern "C" fn camofreq_params_free(params: *mut CamofreqParams) {
    if !params.is_null() {
        drop(unsafe { Box::from_raw(params) });
    }
}

/// Train a model on generated camouflage scenes and return its parameters.
///
/// `config_json` may be NULL for the default configuration; otherwise it
/// must hold the same JSON accepted by the `camofreq` CLI's `--config`
/// files. `n_samples` scenes are generated from the configuration's seed at
/// its input size, with foreground/background contrast in [0, 1], boundary
/// blur `blur_sigma` ≥ 0, and between `min_instances` and `max_instances`
/// objects per scene. When `final_loss` is non-NULL it receives the last
/// step's loss (NaN when the configuration asks for zero steps).
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string valid for reads.
/// `final_loss` must be NULL or valid for writes. `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_train(
    config_json: *const c_char,
    n_samples: usize,
    contrast: f64,
    blur_sigma: f64,
    min_instances: usize,
    max_instances: usize,
    final_loss: *mut f64,
    out: *mut *mut CamofreqParams,
) -> CamofreqStatus {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let cfg = match unsafe { config_arg(config_json) } {
            Ok(c) => c,
            Err(s) => return s,
        };
        let data = match pipeline::synth_camo(
            cfg.seed,
            n_samples,
            cfg.input_hw,
            contrast,
            blur_sigma,
            (min_instances, max_instances),
        ) {
            Ok(d) => d,
            Err(e) => return fail_error(e),
        };
        match pipeline::fit(&data, &cfg) {
            Ok((params, log)) => {
                if !final_loss.is_null() {
                    let loss = log.last().map_or(f64::NAN, |s| s.loss);
                    unsafe { final_loss.write(loss) };
                }
                unsafe { out.write(Box::into_raw(Box::new(CamofreqParams(params)))) };
                CamofreqStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Segment an image with a trained model. The image must match the
/// configuration's input size (H×W×3). Pixels whose predicted probability
/// exceeds `threshold` and survive instance extraction form the output
/// mask, returned as an H×W×1 image of 0.0/1.0 values. When `n_instances`
/// is non-NULL it receives the number of detected instances.
///
/// # Safety
/// `image` and `params` must be live handles from this library.
/// `config_json` must be NULL or a NUL-terminated string valid for reads.
/// `n_instances` must be NULL or valid for writes. `mask_out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn camofreq_segment(
    image: *const CamofreqImage,
    params: *const CamofreqParams,
    config_json: *const c_char,
    threshold: f64,
    n_instances: *mut usize,
    mask_out: *mut *mut CamofreqImage,
) -> CamofreqStatus {
    guarded(|| {
        let Some(image) = (unsafe { image.as_ref() }) else {
            return null_arg("image");
        };
        let Some(params) = (unsafe { params.as_ref() }) else {
            return null_arg("params");
        };
        if mask_out.is_null() {
            return null_arg("mask_out");
        }
        let cfg = match unsafe { config_arg(config_json) } {
            Ok(c) => c,
            Err(s) => return s,
        };
        let forward = match pipeline::forward(&image.0, &params.0, &cfg) {
            Ok(f) => f,
            Err(e) => return fail_error(e),
        };
        let instances =
            match pipeline::predict_instances(&forward.mask_logits, &forward.salience, threshold) {
                Ok(i) => i,
                Err(e) => return fail_error(e),
            };
        let masks: Vec<_> = instances.iter().map(|i| i.mask.clone()).collect();
        let (h, w) = cfg.input_hw;
        let union = match pipeline::union_masks(h, w, &masks) {
            Ok(u) => u,
            Err(e) => return fail_error(e),
        };
        if !n_instances.is_null() {
            unsafe { n_instances.write(instances.len()) };
        }
        emit_image(mask_out, union.to_tensor())
    })
}
