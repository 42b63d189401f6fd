//! C ABI over the `dsunet` model and metrics.
//!
//! Every fallible call returns a [`DsuStatus`]; on failure the message is kept per
//! thread and can be read with [`dsu_last_error_message`]. Models are opaque
//! handles released with [`dsu_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dsunet::config::RunConfig;
use dsunet::data::Sample;
use dsunet::encoders::Encoders;
use dsunet::harness::{predict_sample, Checkpoint, OptimState};
use dsunet::image::MaskImage;
use dsunet::metrics::ImageMetrics;
use dsunet::model::DsuNet;
use dsunet::nn::ParamSet;
use dsunet::{DsuError, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Config = 6,
    NonFinite = 7,
    Panic = 8,
}

/// Trained network plus the frozen encoders it was built against.
pub struct DsuModel {
    checkpoint: Checkpoint,
    encoders: Encoders<f32>,
}

/// Per-image scores. `f_defined` is 0 when the ground truth is empty; the F fields are then NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DsuMetrics {
    pub s: f64,
    pub f_adaptive: f64,
    pub f_mean: f64,
    pub e_adaptive: f64,
    pub e_mean: f64,
    pub mae: f64,
    pub f_defined: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &DsuError) -> DsuStatus {
    match e {
        DsuError::Io { .. } => DsuStatus::Io,
        DsuError::Shape(_) | DsuError::ProfileShape { .. } => DsuStatus::Shape,
        DsuError::Config(_) | DsuError::ConfigFile { .. } => DsuStatus::Config,
        DsuError::NonFinite(_) => DsuStatus::NonFinite,
        DsuError::BadMagic { .. }
        | DsuError::BadVersion(_)
        | DsuError::Truncated { .. }
        | DsuError::MissingTensor(_)
        | DsuError::PgmHeader { .. }
        | DsuError::PgmMaxval { .. } => DsuStatus::Format,
        DsuError::Dataset(_) | DsuError::GradCheck(_) => DsuStatus::InvalidArgument,
    }
}

struct Fail(DsuStatus, String);

impl From<DsuError> for Fail {
    fn from(e: DsuError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsuStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            DsuStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DsuStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(DsuStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn into_handle(checkpoint: Checkpoint, out: *mut *mut DsuModel) {
    let m = &checkpoint.config.model;
    let encoders = Encoders::new(m.geometry(), m.encoder_seed);
    unsafe { *out = Box::into_raw(Box::new(DsuModel { checkpoint, encoders })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dsu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn dsu_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fresh model from `key = value` config text (NULL for defaults), initialised from `seed`.
///
/// # Safety
/// `config_text` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsu_model_new(config_text: *const c_char, seed: u64, out: *mut *mut DsuModel) -> DsuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_text.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(str_arg(config_text, "config_text")?, Path::new("<config>"))?
        };
        let net = DsuNet::<f32>::new(&config.model, seed)?;
        let optim = OptimState::for_params(&net.named_params());
        into_handle(Checkpoint { config, net, optim }, out);
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsu_model_load(path: *const c_char, out: *mut *mut DsuModel) -> DsuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        into_handle(ck, out);
        Ok(())
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dsu_model_save(model: *const DsuModel, path: *const c_char) -> DsuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        m.checkpoint.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dsu_model_free(model: *mut DsuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side lengths of the square main and auxiliary views.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsu_model_input_sizes(model: *const DsuModel, main_size: *mut usize, aux_size: *mut usize) -> DsuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if main_size.is_null() || aux_size.is_null() {
            return Err(null("size output"));
        }
        let g = m.checkpoint.config.model.geometry();
        *main_size = g.main_size;
        *aux_size = g.aux_size;
        Ok(())
    })
}

/// Total and trainable element counts of the network and both encoders.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dsu_model_param_counts(model: *const DsuModel, total: *mut u64, trainable: *mut u64) -> DsuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if total.is_null() || trainable.is_null() {
            return Err(null("count output"));
        }
        let (mut t, mut tr) = (0u64, 0u64);
        for (_, p) in m.encoders.named_params().into_iter().chain(m.checkpoint.net.named_params()) {
            t += p.len() as u64;
            if p.trainable {
                tr += p.len() as u64;
            }
        }
        *total = t;
        *trainable = tr;
        Ok(())
    })
}

/// Foreground probability `sigmoid(D3)` for one scene.
///
/// `main` is planar RGB `3×M×M`, `aux` planar RGB `3×A×A`, values in `[0, 1]`;
/// `out` receives `M×M` probabilities. Lengths are element counts.
///
/// # Safety
/// Buffers must hold at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn dsu_model_predict(
    model: *const DsuModel,
    main: *const f32,
    main_len: usize,
    aux: *const f32,
    aux_len: usize,
    out: *mut f32,
    out_len: usize,
) -> DsuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let g = m.checkpoint.config.model.geometry();
        let (nm, na, no) = (3 * g.main_size * g.main_size, 3 * g.aux_size * g.aux_size, g.main_size * g.main_size);
        if main_len != nm || aux_len != na || out_len != no {
            return Err(Fail(
                DsuStatus::Shape,
                format!("expected buffers of {nm}, {na} and {no} elements, got {main_len}, {aux_len} and {out_len}"),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let image_main = Tensor::from_vec(&[3, g.main_size, g.main_size], slice_arg(main, nm, "main")?.to_vec())?;
        let image_aux = Tensor::from_vec(&[3, g.aux_size, g.aux_size], slice_arg(aux, na, "aux")?.to_vec())?;
        let sample = Sample { id: String::new(), image_main, image_aux, gt: MaskImage::filled(g.main_size, g.main_size, 0.0) };
        let mask = predict_sample(&m.checkpoint.net, &m.encoders, &sample)?;
        let dst = std::slice::from_raw_parts_mut(out, no);
        for (d, v) in dst.iter_mut().zip(&mask.data) {
            *d = *v as f32;
        }
        Ok(())
    })
}

/// All per-image metrics of a `width×height` prediction against a binary ground truth.
///
/// # Safety
/// `pred` and `gt` must hold `width·height` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dsu_metrics_compute(
    pred: *const f64,
    gt: *const f64,
    width: usize,
    height: usize,
    beta2: f64,
    out: *mut DsuMetrics,
) -> DsuStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(beta2 > 0.0) {
            return Err(Fail(DsuStatus::InvalidArgument, format!("beta2 must be positive, got {beta2}")));
        }
        let n = width.checked_mul(height).ok_or_else(|| Fail(DsuStatus::Shape, "size overflow".into()))?;
        let p = MaskImage::new(width, height, slice_arg(pred, n, "pred")?.to_vec())?;
        let g = MaskImage::new(width, height, slice_arg(gt, n, "gt")?.to_vec())?;
        let m = ImageMetrics::compute("", &p, &g, beta2)?;
        *out = DsuMetrics {
            s: m.s,
            f_adaptive: m.f_adaptive.unwrap_or(f64::NAN),
            f_mean: m.f_mean.unwrap_or(f64::NAN),
            e_adaptive: m.e_adaptive,
            e_mean: m.e_mean,
            mae: m.mae,
            f_defined: m.f_adaptive.is_some() as i32,
        };
        Ok(())
    })
}
