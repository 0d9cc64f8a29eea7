//! C ABI over `stemil`.
//!
//! Datasets and models are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`StemilStatus`]; on failure the
//! message is kept per thread and read with [`stemil_last_error_message`].
//! Panics never cross the boundary, they surface as `STEMIL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stemil::data::{load_mil_csv, synth_generate, SynthConfig};
use stemil::grad::{fd_check, random_fixture};
use stemil::{cross_validate, Bag, Checkpoint, Error, MilDataset, TrainConfig, TrainedModel, Trainer};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StemilStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Dimension = 5,
    Config = 6,
    Diverged = 7,
    Checkpoint = 8,
    NonFinite = 9,
    GradcheckFailed = 10,
    Panic = 11,
}

/// Loaded bag dataset.
pub struct StemilDataset {
    inner: MilDataset,
}

/// Trained model, savable as a checkpoint.
pub struct StemilModel {
    checkpoint: Checkpoint,
    trained: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> StemilStatus {
    match err {
        Error::Parse { .. } | Error::InconsistentLabel { .. } => StemilStatus::Parse,
        Error::Dimension { .. } => StemilStatus::Dimension,
        Error::InvalidArgument(_) => StemilStatus::InvalidArgument,
        Error::NonFinite { .. } => StemilStatus::NonFinite,
        Error::Diverged { .. } => StemilStatus::Diverged,
        Error::CorruptCheckpoint(_) | Error::CheckpointVersion { .. } => StemilStatus::Checkpoint,
        Error::Config(_) => StemilStatus::Config,
        Error::Io(_) => StemilStatus::Io,
    }
}

struct Fail(StemilStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(StemilStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> StemilStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            StemilStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            StemilStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(StemilStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn config_arg(p: *const c_char) -> Result<TrainConfig, Fail> {
    if p.is_null() {
        Ok(TrainConfig::default())
    } else {
        Ok(TrainConfig::from_json(str_arg(p, "config_json")?)?)
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn stemil_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_dataset_load_csv(path: *const c_char, out: *mut *mut StemilDataset) -> StemilStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = load_mil_csv(path)?;
        write_out(out, Box::into_raw(Box::new(StemilDataset { inner })), "out")
    })
}

/// Planted-box synthetic data with bag sizes 3 to 8 and half the bags positive.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_dataset_synth(
    bags: usize,
    features: usize,
    seed: u64,
    out: *mut *mut StemilDataset,
) -> StemilStatus {
    guard(|| {
        let data = synth_generate(&SynthConfig {
            n_bags: bags,
            feature_count: features,
            seed,
            ..Default::default()
        })?;
        write_out(
            out,
            Box::into_raw(Box::new(StemilDataset { inner: data.dataset })),
            "out",
        )
    })
}

/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_dataset_num_bags(dataset: *const StemilDataset, out: *mut usize) -> StemilStatus {
    guard(|| write_out(out, deref(dataset, "dataset")?.inner.len(), "out"))
}

/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_dataset_feature_count(dataset: *const StemilDataset, out: *mut usize) -> StemilStatus {
    guard(|| write_out(out, deref(dataset, "dataset")?.inner.feature_count, "out"))
}

/// # Safety
/// `dataset` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn stemil_dataset_free(dataset: *mut StemilDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Train on the whole dataset. `config_json` may be null for the defaults.
///
/// # Safety
/// `dataset` must come from this library; `config_json` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_train(
    dataset: *const StemilDataset,
    config_json: *const c_char,
    out: *mut *mut StemilModel,
) -> StemilStatus {
    guard(|| {
        let dataset = &deref(dataset, "dataset")?.inner;
        let config = config_arg(config_json)?;
        let mut trainer = Trainer::new(dataset, &config)?;
        trainer.run_to_completion()?;
        let model = StemilModel {
            checkpoint: Checkpoint::from_trainer(&trainer),
            trained: trainer.trained,
        };
        write_out(out, Box::into_raw(Box::new(model)), "out")
    })
}

/// # Safety
/// `model` must come from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stemil_model_save(model: *const StemilModel, path: *const c_char) -> StemilStatus {
    guard(|| {
        let model = deref(model, "model")?;
        Ok(model.checkpoint.save(str_arg(path, "path")?)?)
    })
}

/// # Safety
/// `path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_model_load(path: *const c_char, out: *mut *mut StemilModel) -> StemilStatus {
    guard(|| {
        let checkpoint = Checkpoint::load(str_arg(path, "path")?)?;
        let trained = checkpoint.trained_model()?;
        write_out(out, Box::into_raw(Box::new(StemilModel { checkpoint, trained })), "out")
    })
}

/// # Safety
/// `model` must come from this library; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_model_feature_count(model: *const StemilModel, out: *mut usize) -> StemilStatus {
    guard(|| write_out(out, deref(model, "model")?.trained.model.feature_count, "out"))
}

/// Positive-class probability of one bag given as `n_instances x n_features`
/// row-major raw (unstandardized) values.
///
/// # Safety
/// `instances` must point to `n_instances * n_features` doubles; `out_probability` writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_model_predict_bag(
    model: *const StemilModel,
    instances: *const f64,
    n_instances: usize,
    n_features: usize,
    out_probability: *mut f64,
) -> StemilStatus {
    guard(|| {
        let model = deref(model, "model")?;
        if instances.is_null() {
            return Err(null("instances"));
        }
        let m = model.trained.model.feature_count;
        if n_features != m {
            return Err(Error::Dimension {
                expected: m,
                actual: n_features,
            }
            .into());
        }
        let flat = std::slice::from_raw_parts(instances, n_instances * n_features);
        let rows: Vec<Vec<f64>> = flat.chunks(n_features).map(<[f64]>::to_vec).collect();
        let bag = Bag::new("ffi", rows, 0)?;
        if bag.instances.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Fail(StemilStatus::NonFinite, "instance values must be finite".into()));
        }
        write_out(
            out_probability,
            model.trained.predict(&bag.instances).probability,
            "out_probability",
        )
    })
}

/// Fill `out_probabilities[i]` for every bag `i` in dataset order; `len` must equal the bag count.
///
/// # Safety
/// Handles must come from this library; `out_probabilities` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stemil_model_predict_dataset(
    model: *const StemilModel,
    dataset: *const StemilDataset,
    out_probabilities: *mut f64,
    len: usize,
) -> StemilStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let dataset = &deref(dataset, "dataset")?.inner;
        if out_probabilities.is_null() {
            return Err(null("out_probabilities"));
        }
        if len != dataset.len() {
            return Err(Error::Dimension {
                expected: dataset.len(),
                actual: len,
            }
            .into());
        }
        let m = model.trained.model.feature_count;
        if dataset.feature_count != m {
            return Err(Error::Dimension {
                expected: m,
                actual: dataset.feature_count,
            }
            .into());
        }
        let out = std::slice::from_raw_parts_mut(out_probabilities, len);
        for (slot, bag) in out.iter_mut().zip(&dataset.bags) {
            *slot = model.trained.predict_bag(bag).probability;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn stemil_model_free(model: *mut StemilModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Cross-validate and return the metrics report as JSON; free it with [`stemil_string_free`].
///
/// # Safety
/// `dataset` must come from this library; `config_json` null or NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_cross_validate(
    dataset: *const StemilDataset,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> StemilStatus {
    guard(|| {
        let dataset = &deref(dataset, "dataset")?.inner;
        let config = config_arg(config_json)?;
        let result = cross_validate(dataset, &config)?;
        let text = CString::new(result.metrics_json().to_string()).expect("JSON has no NUL");
        write_out(out_json, text.into_raw(), "out_json")
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stemil_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Finite-difference gradient check on a small random model. Writes the largest
/// relative error and returns `STEMIL_STATUS_GRADCHECK_FAILED` above `tolerance`.
///
/// # Safety
/// `out_max_rel_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stemil_gradcheck(seed: u64, tolerance: f64, out_max_rel_error: *mut f64) -> StemilStatus {
    guard(|| {
        let (model, bags) = random_fixture(seed);
        let refs: Vec<&Bag> = bags.iter().collect();
        let report = fd_check(&model, &refs, 1e-6)?;
        write_out(out_max_rel_error, report.max_rel_error(), "out_max_rel_error")?;
        if report.passes(tolerance) {
            Ok(())
        } else {
            Err(Fail(
                StemilStatus::GradcheckFailed,
                format!(
                    "max relative error {:.3e} exceeds {tolerance:e}",
                    report.max_rel_error()
                ),
            ))
        }
    })
}
