//! C ABI over the structdiff library.
//!
//! Conventions: every function returns an [`SdStatus`]; results come back
//! through out-pointers. Point buffers are caller-allocated, row-major
//! `n x 2` f64. On any failure the thread-local error message is updated and
//! can be read with [`sd_last_error_message`]. Handles returned through
//! `out` parameters are owned by the caller and must be released with
//! [`sd_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ndarray::Array2;
use structdiff::checkpoint::{load_checkpoint, save_checkpoint};
use structdiff::dataset::{generate, DatasetKind};
use structdiff::diffusion::{sample, train, SamplerConfig, TrainConfig};
use structdiff::error::Error;
use structdiff::net::DenoiserNet;
use structdiff::optim::{EmaState, OptimizerState};
use structdiff::prdc::prdc_grid;
use structdiff::schedule::{build_schedule, Schedule};

/// Result code of every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A JSON config failed to parse.
    BadJson = 3,
    /// A config parsed but described something invalid.
    InvalidConfig = 4,
    /// A numeric failure: non-finite values or a degenerate covariance.
    Numeric = 5,
    /// Filesystem failure.
    Io = 6,
    /// A file existed but its contents were malformed.
    BadData = 7,
    /// An output buffer had the wrong length.
    BufferSize = 8,
    /// An internal invariant failed; the message has details.
    Internal = 9,
}

/// Four-metric evaluation report for a generated set against a real set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdPrdcReport {
    pub precision: f64,
    pub recall: f64,
    pub density: f64,
    pub coverage: f64,
    pub k: usize,
    pub n_real: usize,
    pub n_gen: usize,
}

/// Opaque handle: a trained denoiser with its EMA weights, optimizer state,
/// and the noise schedule it was trained under.
pub struct SdModel {
    schedule: Schedule,
    net: DenoiserNet,
    ema: EmaState,
    opt: OptimizerState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &Error) -> SdStatus {
    match e {
        Error::Json { .. } => SdStatus::BadJson,
        Error::Io { .. } => SdStatus::Io,
        Error::NonFinite(_) | Error::NonFiniteLoss { .. } | Error::SingularCovariance(_) => {
            SdStatus::Numeric
        }
        Error::StaleCache => SdStatus::Internal,
        Error::MalformedCsv { .. }
        | Error::BadCheckpoint { .. }
        | Error::GridMismatch(_)
        | Error::BadHistogram(_)
        | Error::MissingArtifact(_)
        | Error::MissingBaseline { .. } => SdStatus::BadData,
        _ => SdStatus::InvalidConfig,
    }
}

fn fail(e: &Error) -> SdStatus {
    set_error(&e.to_string());
    status_of(e)
}

/// Runs `f`, converting panics into `SdStatus::Internal` instead of
/// unwinding across the C boundary.
fn guarded(f: impl FnOnce() -> SdStatus) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            SdStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, SdStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(SdStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        SdStatus::InvalidUtf8
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, SdStatus> {
    serde_json::from_str(text).map_err(|e| {
        set_error(&format!("{what}: {e}"));
        SdStatus::BadJson
    })
}

/// Copies a point matrix into a caller buffer of exactly `n * 2` doubles.
fn fill_points(points: &Array2<f64>, out: *mut f64, out_len: usize) -> SdStatus {
    let needed = points.nrows() * points.ncols();
    if out_len != needed {
        set_error(&format!(
            "output buffer holds {out_len} doubles, need exactly {needed}"
        ));
        return SdStatus::BufferSize;
    }
    let dst = unsafe { std::slice::from_raw_parts_mut(out, out_len) };
    for (d, s) in dst.iter_mut().zip(points.iter()) {
        *d = *s;
    }
    SdStatus::Ok
}

/// Last error message for this thread, as a NUL-terminated string. Empty
/// until the first failure. The pointer stays valid until the next failing
/// call on the same thread.
///
/// # Safety
/// The returned pointer must not be freed or written through.
#[no_mangle]
pub unsafe extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Trains a model from a JSON training config (dataset, schedule,
/// regularizer, optimization settings) and returns an owned handle through
/// `out_model`.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string; `out_model` must be
/// valid for writes. The returned handle must be freed with
/// [`sd_model_free`].
#[no_mangle]
pub unsafe extern "C" fn sd_train(
    config_json: *const c_char,
    out_model: *mut *mut SdModel,
) -> SdStatus {
    guarded(|| {
        if out_model.is_null() {
            set_error("out_model is null");
            return SdStatus::NullPointer;
        }
        let text = match read_str(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: TrainConfig = match parse_json(text, "training config") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let schedule = match build_schedule(&cfg.schedule) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match train(&cfg) {
            Ok(out) => {
                let model = Box::new(SdModel {
                    schedule,
                    net: out.net,
                    ema: out.ema,
                    opt: out.optimizer,
                });
                *out_model = Box::into_raw(model);
                SdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a model handle. Null is tolerated.
///
/// # Safety
/// `model` must be null or a pointer previously returned through an
/// `out_model` parameter, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sd_model_free(model: *mut SdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model's checkpoint (weights, EMA shadows, optimizer moments)
/// to `path`.
///
/// # Safety
/// `model` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sd_model_save(model: *const SdModel, path: *const c_char) -> SdStatus {
    guarded(|| {
        if model.is_null() {
            set_error("model is null");
            return SdStatus::NullPointer;
        }
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let m = &*model;
        match save_checkpoint(std::path::Path::new(path), &m.net, &m.ema, &m.opt) {
            Ok(()) => SdStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Loads a checkpoint saved by [`sd_model_save`]. The training config must
/// be re-supplied (checkpoints store no hyperparameters) and its
/// architecture must match the stored tensors.
///
/// # Safety
/// `config_json` and `checkpoint_path` must be valid NUL-terminated
/// strings; `out_model` must be valid for writes. The returned handle must
/// be freed with [`sd_model_free`].
#[no_mangle]
pub unsafe extern "C" fn sd_model_load(
    config_json: *const c_char,
    checkpoint_path: *const c_char,
    out_model: *mut *mut SdModel,
) -> SdStatus {
    guarded(|| {
        if out_model.is_null() {
            set_error("out_model is null");
            return SdStatus::NullPointer;
        }
        let text = match read_str(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: TrainConfig = match parse_json(text, "training config") {
            Ok(c) => c,
            Err(s) => return s,
        };
        if let Err(e) = cfg.validate() {
            return fail(&e);
        }
        let path = match read_str(checkpoint_path, "checkpoint_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ckpt = match load_checkpoint(std::path::Path::new(path)) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        let mut want = vec![2 + cfg.embed_dim];
        want.extend_from_slice(&cfg.hidden);
        want.push(2);
        if ckpt.net.widths() != want {
            set_error(&format!(
                "checkpoint layer widths {:?} do not match config widths {:?}",
                ckpt.net.widths(),
                want
            ));
            return SdStatus::InvalidConfig;
        }
        let schedule = match build_schedule(&cfg.schedule) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let ema = match ckpt.ema_state(cfg.ema_decay) {
            Ok(e) => e,
            Err(e) => return fail(&e),
        };
        let opt = match ckpt.optimizer(cfg.lr, cfg.clip_norm) {
            Ok(o) => o,
            Err(e) => return fail(&e),
        };
        *out_model = Box::into_raw(Box::new(SdModel {
            schedule,
            net: ckpt.net,
            ema,
            opt,
        }));
        SdStatus::Ok
    })
}

/// Number of optimizer steps the model has taken.
///
/// # Safety
/// `model` must be a live handle; `out_step` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sd_model_step(model: *const SdModel, out_step: *mut u64) -> SdStatus {
    if model.is_null() || out_step.is_null() {
        set_error("model or out_step is null");
        return SdStatus::NullPointer;
    }
    *out_step = (*model).opt.step;
    SdStatus::Ok
}

/// Draws samples by reverse diffusion into `out_points` (row-major n x 2;
/// `out_len` must equal exactly `n_samples * 2`). The sampler config is
/// JSON: `{"n_samples": ..., "sigma_mode": "posterior"|"beta", "seed": ...,
/// "use_ema": ...}`; all fields optional.
///
/// # Safety
/// `model` must be a live handle, `sampler_json` a valid NUL-terminated
/// string, and `out_points` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn sd_sample(
    model: *const SdModel,
    sampler_json: *const c_char,
    out_points: *mut f64,
    out_len: usize,
) -> SdStatus {
    guarded(|| {
        if model.is_null() || out_points.is_null() {
            set_error("model or out_points is null");
            return SdStatus::NullPointer;
        }
        let text = match read_str(sampler_json, "sampler_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: SamplerConfig = match parse_json(text, "sampler config") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let m = &*model;
        match sample(&m.net, Some(&m.ema), &m.schedule, &cfg) {
            Ok(points) => fill_points(points.as_array(), out_points, out_len),
            Err(e) => fail(&e),
        }
    })
}

/// Generates a synthetic dataset into `out_points` (row-major n x 2;
/// `out_len` must equal exactly `n_samples * 2`). The dataset config is
/// JSON: `{"dataset": "swiss_roll", "n_samples": ..., "noise_level": ...,
/// "seed": ...}`.
///
/// # Safety
/// `dataset_json` must be a valid NUL-terminated string and `out_points`
/// valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn sd_generate_dataset(
    dataset_json: *const c_char,
    out_points: *mut f64,
    out_len: usize,
) -> SdStatus {
    guarded(|| {
        if out_points.is_null() {
            set_error("out_points is null");
            return SdStatus::NullPointer;
        }
        let text = match read_str(dataset_json, "dataset_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let kind: DatasetKind = match parse_json(text, "dataset config") {
            Ok(k) => k,
            Err(s) => return s,
        };
        match generate(&kind) {
            Ok(points) => fill_points(points.as_array(), out_points, out_len),
            Err(e) => fail(&e),
        }
    })
}

/// Precision/recall/density/coverage of `generated` against `real`. Both
/// buffers are row-major n x 2 doubles.
///
/// # Safety
/// `real` must be valid for `n_real * 2` reads, `generated` for
/// `n_gen * 2` reads, and `out_report` for one write.
#[no_mangle]
pub unsafe extern "C" fn sd_prdc(
    real: *const f64,
    n_real: usize,
    generated: *const f64,
    n_gen: usize,
    k: usize,
    out_report: *mut SdPrdcReport,
) -> SdStatus {
    guarded(|| {
        if real.is_null() || generated.is_null() || out_report.is_null() {
            set_error("real, generated, or out_report is null");
            return SdStatus::NullPointer;
        }
        let real_view = std::slice::from_raw_parts(real, n_real * 2);
        let gen_view = std::slice::from_raw_parts(generated, n_gen * 2);
        let real_arr = match Array2::from_shape_vec((n_real, 2), real_view.to_vec()) {
            Ok(a) => a,
            Err(e) => {
                set_error(&format!("real buffer: {e}"));
                return SdStatus::BufferSize;
            }
        };
        let gen_arr = match Array2::from_shape_vec((n_gen, 2), gen_view.to_vec()) {
            Ok(a) => a,
            Err(e) => {
                set_error(&format!("generated buffer: {e}"));
                return SdStatus::BufferSize;
            }
        };
        match prdc_grid(&real_arr, &gen_arr, k) {
            Ok(r) => {
                *out_report = SdPrdcReport {
                    precision: r.precision,
                    recall: r.recall,
                    density: r.density,
                    coverage: r.coverage,
                    k: r.k,
                    n_real: r.n_real,
                    n_gen: r.n_gen,
                };
                SdStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
