//! C ABI for the engine: opaque handles, integer status codes and a
//! thread-local last-error message. The header is generated by cbindgen at
//! build time into `include/adaftr.h`.
//!
//! Ownership rules: every `*_load`/`*_json` function returns memory owned by
//! the caller, released with the matching `*_free` function. Returned status
//! codes are `ADAFTR_OK` (0) on success; on any failure the error message is
//! available via `adaftr_last_error` until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use adaftr::config::{ModelConfig, TrainConfig};
use adaftr::datasets::{load_csv, Batch, Dataset, Schema};
use adaftr::error::Error;
use adaftr::metrics::evaluate;
use adaftr::model::{model_forward, ModelParams};
use adaftr::trainer::{check_shapes, infer_schema, load_checkpoint, train};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaftrStatus {
    AdaftrOk = 0,
    AdaftrInvalidArgument = 1,
    AdaftrIoError = 2,
    AdaftrConfigError = 3,
    AdaftrTrainError = 4,
    AdaftrMetricError = 5,
    AdaftrInternalError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> AdaftrStatus {
    match err {
        Error::Config(_) => AdaftrStatus::AdaftrConfigError,
        Error::Io(_) | Error::Data { .. } | Error::Checkpoint { .. } => AdaftrStatus::AdaftrIoError,
        Error::Train(_) => AdaftrStatus::AdaftrTrainError,
        Error::Metric(_) => AdaftrStatus::AdaftrMetricError,
        _ => AdaftrStatus::AdaftrInternalError,
    }
}

fn fail(err: &Error) -> AdaftrStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Loaded model: parameters plus the configuration and schema they imply.
pub struct AdaftrModel {
    params: ModelParams,
    config: ModelConfig,
    schema: Schema,
}

/// Loaded dataset handle.
pub struct AdaftrDataset {
    inner: Dataset,
}

unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, AdaftrStatus> {
    if ptr.is_null() {
        set_error(&format!("{} is null", what));
        return Err(AdaftrStatus::AdaftrInvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{} is not valid UTF-8", what));
        AdaftrStatus::AdaftrInvalidArgument
    })
}

fn guard<T>(f: impl FnOnce() -> T, fallback: T) -> T {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(_) => {
            set_error("internal panic");
            fallback
        }
    }
}

/// Returns the message of the most recent error on this thread, or null.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn adaftr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(c) => c.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Engine version as a static string.
#[no_mangle]
pub extern "C" fn adaftr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a CSV dataset with its schema file. Returns null on failure.
///
/// # Safety
/// `data_path` and `schema_path` must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn adaftr_dataset_load(
    data_path: *const c_char,
    schema_path: *const c_char,
) -> *mut AdaftrDataset {
    guard(
        || {
            let data = match cstr(data_path, "data_path") {
                Ok(s) => s,
                Err(_) => return std::ptr::null_mut(),
            };
            let schema = match cstr(schema_path, "schema_path") {
                Ok(s) => s,
                Err(_) => return std::ptr::null_mut(),
            };
            match load_csv(&PathBuf::from(data), &PathBuf::from(schema)) {
                Ok(inner) => Box::into_raw(Box::new(AdaftrDataset { inner })),
                Err(e) => {
                    fail(&e);
                    std::ptr::null_mut()
                }
            }
        },
        std::ptr::null_mut(),
    )
}

/// Number of records, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn adaftr_dataset_len(dataset: *const AdaftrDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { (*dataset).inner.records.len() }
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `dataset` must come from `adaftr_dataset_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn adaftr_dataset_free(dataset: *mut AdaftrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads a model checkpoint. Returns null on failure.
///
/// # Safety
/// `checkpoint_path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn adaftr_model_load(checkpoint_path: *const c_char) -> *mut AdaftrModel {
    guard(
        || {
            let path = match cstr(checkpoint_path, "checkpoint_path") {
                Ok(s) => s,
                Err(_) => return std::ptr::null_mut(),
            };
            let loaded = load_checkpoint(&PathBuf::from(path))
                .and_then(|(params, config)| {
                    let schema = infer_schema(&params, &config)?;
                    check_shapes(&params, &config, &schema)?;
                    Ok(AdaftrModel { params, config, schema })
                });
            match loaded {
                Ok(model) => Box::into_raw(Box::new(model)),
                Err(e) => {
                    fail(&e);
                    std::ptr::null_mut()
                }
            }
        },
        std::ptr::null_mut(),
    )
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `adaftr_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn adaftr_model_free(model: *mut AdaftrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts click and conversion probabilities for one feature-id vector.
/// `feature_ids` must hold one id per schema field, each below the field
/// cardinality.
///
/// # Safety
/// `feature_ids` must point to `field_count` readable ids; the output
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn adaftr_model_predict(
    model: *const AdaftrModel,
    feature_ids: *const usize,
    field_count: usize,
    y_ctr_out: *mut f64,
    y_cvr_out: *mut f64,
) -> AdaftrStatus {
    guard(
        || {
            if model.is_null() || feature_ids.is_null() || y_ctr_out.is_null() || y_cvr_out.is_null()
            {
                set_error("null argument");
                return AdaftrStatus::AdaftrInvalidArgument;
            }
            let m = &*model;
            if field_count != m.schema.field_count() {
                set_error(&format!(
                    "expected {} feature ids, got {}",
                    m.schema.field_count(),
                    field_count
                ));
                return AdaftrStatus::AdaftrInvalidArgument;
            }
            let ids = std::slice::from_raw_parts(feature_ids, field_count).to_vec();
            for (id, (name, card)) in ids.iter().zip(&m.schema.fields) {
                if id >= card {
                    set_error(&format!("feature id {} out of range for field {}", id, name));
                    return AdaftrStatus::AdaftrInvalidArgument;
                }
            }
            let batch = Batch {
                user_ids: vec![0],
                feature_ids: vec![ids],
                y_ctr: vec![0.0],
                y_cvr: vec![0.0],
            };
            let cfg = TrainConfig { model: m.config.clone(), ..TrainConfig::default() };
            match model_forward(&m.params, &m.schema, &batch, &cfg, None) {
                Ok(trace) => {
                    *y_ctr_out = trace.tower_ctr.y_hat[0];
                    *y_cvr_out = trace.tower_cvr.y_hat[0];
                    AdaftrStatus::AdaftrOk
                }
                Err(e) => fail(&e),
            }
        },
        AdaftrStatus::AdaftrInternalError,
    )
}

/// Evaluates a model on a dataset and returns the metrics report as a JSON
/// string, or null on failure. Free the string with `adaftr_string_free`.
///
/// # Safety
/// Both handles must be valid and outlive the call.
#[no_mangle]
pub unsafe extern "C" fn adaftr_model_evaluate_json(
    model: *const AdaftrModel,
    dataset: *const AdaftrDataset,
    percent: bool,
) -> *mut c_char {
    guard(
        || {
            if model.is_null() || dataset.is_null() {
                set_error("null argument");
                return std::ptr::null_mut();
            }
            let m = &*model;
            let ds = &(*dataset).inner;
            let cfg = TrainConfig { model: m.config.clone(), ..TrainConfig::default() };
            let result = evaluate(&m.params, &ds.schema, ds, &cfg).and_then(|report| {
                let report = if percent { report.in_percent() } else { report };
                Ok(serde_json::to_string(&report)?)
            });
            match result {
                Ok(json) => CString::new(json).map(CString::into_raw).unwrap_or_else(|_| {
                    set_error("report contains interior NUL");
                    std::ptr::null_mut()
                }),
                Err(e) => {
                    fail(&e);
                    std::ptr::null_mut()
                }
            }
        },
        std::ptr::null_mut(),
    )
}

/// Trains a model on a CSV dataset and writes a checkpoint.
/// `config_kv` may be null or hold newline-separated `key=value` overrides
/// using the same keys as the CLI config file.
///
/// # Safety
/// All path arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn adaftr_train(
    data_path: *const c_char,
    schema_path: *const c_char,
    config_kv: *const c_char,
    checkpoint_out: *const c_char,
) -> AdaftrStatus {
    guard(
        || {
            let data = match cstr(data_path, "data_path") {
                Ok(s) => s,
                Err(st) => return st,
            };
            let schema = match cstr(schema_path, "schema_path") {
                Ok(s) => s,
                Err(st) => return st,
            };
            let out = match cstr(checkpoint_out, "checkpoint_out") {
                Ok(s) => s,
                Err(st) => return st,
            };
            let mut cfg = TrainConfig::default();
            if !config_kv.is_null() {
                let text = match cstr(config_kv, "config_kv") {
                    Ok(s) => s,
                    Err(st) => return st,
                };
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let kv = line.split_once('=');
                    let (k, v) = match kv {
                        Some(p) => p,
                        None => {
                            set_error(&format!("malformed config line '{}'", line));
                            return AdaftrStatus::AdaftrConfigError;
                        }
                    };
                    if let Err(e) = cfg.apply_kv(k.trim(), v.trim()) {
                        return fail(&e);
                    }
                }
            }
            cfg.checkpoint_path = Some(PathBuf::from(out));
            let run = load_csv(&PathBuf::from(data), &PathBuf::from(schema))
                .and_then(|dataset| train(&dataset, None, &cfg, None).map(|_| ()));
            match run {
                Ok(()) => AdaftrStatus::AdaftrOk,
                Err(e) => fail(&e),
            }
        },
        AdaftrStatus::AdaftrInternalError,
    )
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn adaftr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
