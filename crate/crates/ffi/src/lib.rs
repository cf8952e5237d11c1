//! C ABI over the epialign library.
//!
//! Every fallible function returns an [`EaStatus`]; on failure a message is
//! available from [`ea_last_error_message`] on the same thread. Datasets and
//! training results are opaque handles owned by the caller and released with
//! their `_free` function. Strings returned through out-pointers are released
//! with [`ea_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use epialign::cli::TrainReport;
use epialign::data::{generate_synthetic, load_dataset, make_splits, write_dataset, Dataset, SynthSpec};
use epialign::stats::paired_t_test;
use epialign::{entropy, kl_divergence, pearson, Error, LabelDistribution, TrainConfig, TrainResult};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// The value asked for does not exist, e.g. a correlation with zero variance.
    Undefined = 5,
    Panic = 6,
}

/// Opaque dataset handle.
pub struct EaDataset(Dataset);

/// Opaque handle to a finished training run.
pub struct EaTrainResult {
    result: TrainResult,
    report_json: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

fn status_of(e: &Error) -> EaStatus {
    match e {
        _ if e.is_io() => EaStatus::Io,
        Error::Json { .. } | Error::Format(_) => EaStatus::Format,
        Error::ZeroVariance(_) => EaStatus::Undefined,
        _ => EaStatus::InvalidArgument,
    }
}

struct Fail(EaStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn fail<T>(status: EaStatus, msg: &str) -> Result<T, Fail> {
    set_error(msg);
    Err(Fail(status))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EaStatus::Ok
        }
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic");
            EaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(EaStatus::NullPointer, &format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s),
        Err(_) => fail(EaStatus::InvalidArgument, &format!("{what} is not valid UTF-8")),
    }
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return fail(EaStatus::NullPointer, &format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => fail(EaStatus::NullPointer, &format!("{what} is null")),
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    match p.as_ref() {
        Some(r) => Ok(r),
        None => fail(EaStatus::NullPointer, &format!("{what} is null")),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ea_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ea_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a dataset from its manifest file.
#[no_mangle]
pub unsafe extern "C" fn ea_dataset_load(manifest_path: *const c_char, out: *mut *mut EaDataset) -> EaStatus {
    guard(|| {
        let path = str_arg(manifest_path, "manifest_path")?;
        let out = out_arg(out, "out")?;
        let ds = load_dataset(Path::new(path))?;
        *out = Box::into_raw(Box::new(EaDataset(ds)));
        Ok(())
    })
}

/// Generates a synthetic dataset.
#[no_mangle]
pub unsafe extern "C" fn ea_dataset_synthetic(
    num_samples: usize,
    num_classes: usize,
    embedding_dim: usize,
    annotations_per_sample: u32,
    ambiguity: f64,
    noise_scale: f64,
    seed: u64,
    out: *mut *mut EaDataset,
) -> EaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = SynthSpec {
            num_samples,
            num_classes,
            embedding_dim,
            annotations_per_sample,
            ambiguity,
            noise_scale,
            seed,
        };
        *out = Box::into_raw(Box::new(EaDataset(generate_synthetic(&spec)?)));
        Ok(())
    })
}

/// Writes manifest, embeddings and annotations into `dir`.
#[no_mangle]
pub unsafe extern "C" fn ea_dataset_write(dataset: *const EaDataset, dir: *const c_char) -> EaStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let dir = str_arg(dir, "dir")?;
        write_dataset(&ds.0, Path::new(dir))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ea_dataset_free(dataset: *mut EaDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of samples; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ea_dataset_len(dataset: *const EaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn ea_dataset_num_classes(dataset: *const EaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.num_classes())
}

#[no_mangle]
pub unsafe extern "C" fn ea_dataset_embedding_dim(dataset: *const EaDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.embedding_dim())
}

/// KL(p || q) in nats for two probability vectors of length `len`.
#[no_mangle]
pub unsafe extern "C" fn ea_kl_divergence(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> EaStatus {
    guard(|| {
        let p = LabelDistribution::new(slice_arg(p, len, "p")?.to_vec())?;
        let q = LabelDistribution::new(slice_arg(q, len, "q")?.to_vec())?;
        *out_arg(out, "out")? = kl_divergence(&p, &q)?;
        Ok(())
    })
}

/// Shannon entropy in nats, or divided by ln(len) when `normalized`.
#[no_mangle]
pub unsafe extern "C" fn ea_entropy(p: *const f64, len: usize, normalized: bool, out: *mut f64) -> EaStatus {
    guard(|| {
        let p = LabelDistribution::new(slice_arg(p, len, "p")?.to_vec())?;
        *out_arg(out, "out")? = entropy(&p, normalized);
        Ok(())
    })
}

/// Pearson correlation; `EA_STATUS_UNDEFINED` when either input is constant.
#[no_mangle]
pub unsafe extern "C" fn ea_pearson(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> EaStatus {
    guard(|| {
        let r = pearson(slice_arg(x, len, "x")?, slice_arg(y, len, "y")?)?;
        *out_arg(out, "out")? = r;
        Ok(())
    })
}

/// Two-sided paired t-test of `a` against `b`.
#[no_mangle]
pub unsafe extern "C" fn ea_paired_t_test(
    a: *const f64,
    b: *const f64,
    len: usize,
    out_t: *mut f64,
    out_p: *mut f64,
) -> EaStatus {
    guard(|| {
        let r = paired_t_test(slice_arg(a, len, "a")?, slice_arg(b, len, "b")?)?;
        *out_arg(out_t, "out_t")? = r.t;
        *out_arg(out_p, "out_p")? = r.p;
        Ok(())
    })
}

/// Trains one head. `config_json` is a flat JSON object of training
/// options and may be null for defaults. The split is drawn from the
/// config's `split_ratios` and `seed`.
#[no_mangle]
pub unsafe extern "C" fn ea_train(
    dataset: *const EaDataset,
    config_json: *const c_char,
    out: *mut *mut EaTrainResult,
) -> EaStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let out = out_arg(out, "out")?;
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            let text = str_arg(config_json, "config_json")?;
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => return fail(EaStatus::InvalidArgument, &format!("config: {e}")),
            }
        };
        config.validate()?;
        let splits = make_splits(ds, config.split_ratios, config.seed)?;
        let result = epialign::train(ds, &splits, &config)?;
        let report_json = serde_json::to_string(&TrainReport::new(ds, &result)).expect("reports serialize");
        *out = Box::into_raw(Box::new(EaTrainResult { result, report_json }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ea_train_result_free(result: *mut EaTrainResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// 1-based epoch whose parameters were kept; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ea_train_result_best_epoch(result: *const EaTrainResult) -> usize {
    result.as_ref().map_or(0, |r| r.result.best_epoch)
}

/// Test-split mean KL, accuracy and entropy correlation. Any out-pointer may
/// be null. `EA_STATUS_UNDEFINED` if the test split is empty, or if the
/// correlation is undefined, in which case the other two are still written.
#[no_mangle]
pub unsafe extern "C" fn ea_train_result_test_metrics(
    result: *const EaTrainResult,
    out_mean_kl: *mut f64,
    out_accuracy: *mut f64,
    out_entropy_correlation: *mut f64,
) -> EaStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let Some(test) = &r.result.test else {
            return fail(EaStatus::Undefined, "test split is empty");
        };
        if let Some(o) = out_mean_kl.as_mut() {
            *o = test.mean_kl;
        }
        if let Some(o) = out_accuracy.as_mut() {
            *o = test.accuracy;
        }
        match (test.entropy_correlation, out_entropy_correlation.as_mut()) {
            (Some(c), Some(o)) => *o = c,
            (None, Some(_)) => return fail(EaStatus::Undefined, "entropy correlation undefined"),
            _ => {}
        }
        Ok(())
    })
}

/// JSON report of the run (everything but the parameters). Free with
/// `ea_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ea_train_result_to_json(result: *const EaTrainResult, out: *mut *mut c_char) -> EaStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let out = out_arg(out, "out")?;
        *out = CString::new(r.report_json.clone()).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ea_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
