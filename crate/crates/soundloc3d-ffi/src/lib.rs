//! C ABI over the soundloc3d pipeline. Every object crosses the boundary as
//! an opaque handle, every fallible call returns an `sl3d_status`, and the
//! last failure's message is kept per thread for retrieval with
//! [`sl3d_last_error_message`]. Panics are caught at the boundary and
//! reported as `SL3D_ERR_RUNTIME`.
//!
//! Memory rules: handles returned through `out` parameters are owned by the
//! caller and must be released with the matching `_free` function; string
//! buffers are caller-allocated and always NUL-terminated on return.

#![allow(non_camel_case_types)]

use soundloc3d::config::{ExperimentConfig, NoiseConfig, Variant};
use soundloc3d::error::Error;
use soundloc3d::oracle::{run_suite, SUITES};
use soundloc3d::train::{
    generate_dataset, load_state, run_eval_loaded, run_training, CheckpointHeader, TrainState,
};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Status of an interface call; nonzero means failure and
/// `sl3d_last_error_message` describes it.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum sl3d_status {
    /// The call succeeded.
    SL3D_OK = 0,
    /// An internal failure: numeric trouble, I/O, or a caught panic.
    SL3D_ERR_RUNTIME = 1,
    /// The configuration is invalid or inconsistent.
    SL3D_ERR_CONFIG = 2,
    /// A dataset or checkpoint is missing, corrupt, or mismatched.
    SL3D_ERR_DATA = 3,
    /// A self-check suite ran to completion and failed.
    SL3D_ERR_ORACLE = 4,
    /// A pointer argument was NULL or a string was not valid UTF-8.
    SL3D_ERR_ARGUMENT = 5,
}

/// Opaque: a fully resolved experiment configuration.
pub struct sl3d_config {
    inner: ExperimentConfig,
}

/// Opaque: a restored model checkpoint (parameters, optimizer state, and the
/// configuration it was trained under).
pub struct sl3d_model {
    state: TrainState,
    header: CheckpointHeader,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: sl3d_status, message: String) -> sl3d_status {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message);
    status
}

fn fail_error(err: &Error) -> sl3d_status {
    let status = match err {
        Error::Config(_) | Error::Invalid(_) => sl3d_status::SL3D_ERR_CONFIG,
        Error::Data(_) | Error::Checkpoint(_) => sl3d_status::SL3D_ERR_DATA,
        _ => sl3d_status::SL3D_ERR_RUNTIME,
    };
    fail(status, err.to_string())
}

/// Run `body` with panics converted into `SL3D_ERR_RUNTIME`.
fn guarded(body: impl FnOnce() -> sl3d_status) -> sl3d_status {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            fail(sl3d_status::SL3D_ERR_RUNTIME, format!("internal panic: {msg}"))
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, sl3d_status> {
    if ptr.is_null() {
        return Err(fail(sl3d_status::SL3D_ERR_ARGUMENT, format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(sl3d_status::SL3D_ERR_ARGUMENT, format!("{what} is not valid UTF-8")))
}

unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, sl3d_status> {
    Ok(PathBuf::from(str_arg(ptr, what)?))
}

/// snprintf-style copy: always NUL-terminates when `cap > 0`, returns the
/// full message length in bytes (excluding the NUL).
unsafe fn write_str(text: &str, buf: *mut c_char, cap: usize) -> usize {
    if !buf.is_null() && cap > 0 {
        let n = text.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
    }
    text.len()
}

fn noise_from(snr_db: f64, pose_delta: f64) -> NoiseConfig {
    NoiseConfig {
        snr_db: if snr_db.is_nan() { None } else { Some(snr_db) },
        pose_delta: if pose_delta.is_nan() { None } else { Some(pose_delta) },
    }
}

/// Copy the calling thread's last error message into `buf` (snprintf
/// semantics); returns the message length in bytes.
///
/// # Safety
/// `buf` must be NULL or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sl3d_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| write_str(&slot.borrow(), buf, cap))
}

/// Copy the library version into `buf` (snprintf semantics); returns the
/// version string length in bytes.
///
/// # Safety
/// `buf` must be NULL or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sl3d_version(buf: *mut c_char, cap: usize) -> usize {
    write_str(env!("CARGO_PKG_VERSION"), buf, cap)
}

/// Resolve `spec` — "paper", "desk", or a path to a config JSON file — into a
/// configuration handle stored in `*out`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl3d_config_load(spec: *const c_char, out: *mut *mut sl3d_config) -> sl3d_status {
    guarded(|| {
        if out.is_null() {
            return fail(sl3d_status::SL3D_ERR_ARGUMENT, "out is NULL".into());
        }
        let spec = match str_arg(spec, "spec") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match ExperimentConfig::resolve(spec) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(sl3d_config { inner }));
                sl3d_status::SL3D_OK
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Copy the configuration's content hash (64 hex characters) into `buf`
/// (snprintf semantics).
///
/// # Safety
/// `cfg` must come from [`sl3d_config_load`]; `buf` must be NULL or point to
/// at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sl3d_config_hash(cfg: *const sl3d_config, buf: *mut c_char, cap: usize) -> sl3d_status {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(sl3d_status::SL3D_ERR_ARGUMENT, "cfg is NULL".into());
        };
        match cfg.inner.hash() {
            Ok(hash) => {
                write_str(&hash, buf, cap);
                sl3d_status::SL3D_OK
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Release a configuration handle. NULL is a no-op.
///
/// # Safety
/// `cfg` must be NULL or an unreleased handle from [`sl3d_config_load`].
#[no_mangle]
pub unsafe extern "C" fn sl3d_config_free(cfg: *mut sl3d_config) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Render `n_scenes` scenes into the `split` of the dataset at `out_dir`,
/// using up to `threads` workers. With `force`, an existing split or a
/// directory rendered under a different config is started over.
///
/// # Safety
/// `cfg` must come from [`sl3d_config_load`]; the strings must be
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sl3d_generate_dataset(
    cfg: *const sl3d_config,
    out_dir: *const c_char,
    split: *const c_char,
    n_scenes: usize,
    force: bool,
    threads: usize,
) -> sl3d_status {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(sl3d_status::SL3D_ERR_ARGUMENT, "cfg is NULL".into());
        };
        let (out_dir, split) = match (path_arg(out_dir, "out_dir"), str_arg(split, "split")) {
            (Ok(o), Ok(s)) => (o, s),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        match generate_dataset(&cfg.inner, &out_dir, split, n_scenes, force, threads) {
            Ok(_) => sl3d_status::SL3D_OK,
            Err(e) => fail_error(&e),
        }
    })
}

/// Train on the dataset's train split and leave a checkpoint plus JSON-lines
/// log in `out_dir`. `variant` selects an ablation ("full", "noRGB",
/// "noDepth", "noCVC", "noRGBD"); with `resume`, training continues from the
/// rolling checkpoint in `out_dir`. On success the first and last step's
/// total loss are stored through the optional out pointers.
///
/// # Safety
/// `cfg` must come from [`sl3d_config_load`]; the strings must be
/// NUL-terminated; `first_loss`/`last_loss` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn sl3d_train(
    cfg: *const sl3d_config,
    variant: *const c_char,
    data_dir: *const c_char,
    out_dir: *const c_char,
    resume: bool,
    threads: usize,
    first_loss: *mut f64,
    last_loss: *mut f64,
) -> sl3d_status {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(sl3d_status::SL3D_ERR_ARGUMENT, "cfg is NULL".into());
        };
        let variant = match str_arg(variant, "variant") {
            Ok(v) => v,
            Err(status) => return status,
        };
        let variant = match Variant::parse(variant) {
            Ok(v) => v,
            Err(e) => return fail_error(&e),
        };
        let (data_dir, out_dir) = match (path_arg(data_dir, "data_dir"), path_arg(out_dir, "out_dir")) {
            (Ok(d), Ok(o)) => (d, o),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        let mut cfg = cfg.inner.clone();
        variant.apply(&mut cfg);
        match run_training(&cfg, variant, &data_dir, &out_dir, resume, threads) {
            Ok(summary) => {
                if !first_loss.is_null() {
                    *first_loss = summary.first_total;
                }
                if !last_loss.is_null() {
                    *last_loss = summary.last_total;
                }
                sl3d_status::SL3D_OK
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Restore the checkpoint at `path` into a model handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl3d_model_load(path: *const c_char, out: *mut *mut sl3d_model) -> sl3d_status {
    guarded(|| {
        if out.is_null() {
            return fail(sl3d_status::SL3D_ERR_ARGUMENT, "out is NULL".into());
        }
        let path = match path_arg(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        if !path.exists() {
            return fail(
                sl3d_status::SL3D_ERR_DATA,
                format!("checkpoint {} does not exist", path.display()),
            );
        }
        match load_state(&path) {
            Ok((state, header)) => {
                *out = Box::into_raw(Box::new(sl3d_model { state, header }));
                sl3d_status::SL3D_OK
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Number of optimizer steps the model has been trained for.
///
/// # Safety
/// `model` must come from [`sl3d_model_load`].
#[no_mangle]
pub unsafe extern "C" fn sl3d_model_trained_steps(model: *const sl3d_model) -> u64 {
    model.as_ref().map_or(0, |m| m.header.step as u64)
}

/// Total number of scalar parameters in the model.
///
/// # Safety
/// `model` must come from [`sl3d_model_load`].
#[no_mangle]
pub unsafe extern "C" fn sl3d_model_param_count(model: *const sl3d_model) -> u64 {
    model.as_ref().map_or(0, |m| m.state.store.num_values() as u64)
}

/// Score the model on the dataset's test split and write metrics JSON/CSV and
/// predictions JSON into `out_dir`. `snr_db`/`pose_delta` inject noise at
/// load time; pass NAN to disable either. On success the headline numbers are
/// stored through the optional out pointers (`*male` is NAN when the model
/// scored no true positives).
///
/// # Safety
/// `model` must come from [`sl3d_model_load`]; the strings must be
/// NUL-terminated; `map`/`mar`/`male` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn sl3d_model_eval(
    model: *const sl3d_model,
    data_dir: *const c_char,
    out_dir: *const c_char,
    snr_db: f64,
    pose_delta: f64,
    threads: usize,
    map: *mut f64,
    mar: *mut f64,
    male: *mut f64,
) -> sl3d_status {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail(sl3d_status::SL3D_ERR_ARGUMENT, "model is NULL".into());
        };
        let (data_dir, out_dir) = match (path_arg(data_dir, "data_dir"), path_arg(out_dir, "out_dir")) {
            (Ok(d), Ok(o)) => (d, o),
            (Err(status), _) | (_, Err(status)) => return status,
        };
        let noise = noise_from(snr_db, pose_delta);
        match run_eval_loaded(&model.state, &model.header, &data_dir, &out_dir, &noise, threads) {
            Ok(summary) => {
                if !map.is_null() {
                    *map = summary.metrics.map;
                }
                if !mar.is_null() {
                    *mar = summary.metrics.mar;
                }
                if !male.is_null() {
                    *male = summary.metrics.male.unwrap_or(f64::NAN);
                }
                sl3d_status::SL3D_OK
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Release a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or an unreleased handle from [`sl3d_model_load`].
#[no_mangle]
pub unsafe extern "C" fn sl3d_model_free(model: *mut sl3d_model) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Run one numerical self-check suite ("geometry", "dsp", "grad",
/// "hungarian", "zero-loss") or all of them when `suite` is NULL. The
/// measured-error report is copied into `detail` (snprintf semantics; may be
/// NULL). Returns `SL3D_ERR_ORACLE` when a suite fails.
///
/// # Safety
/// `suite` must be NULL or NUL-terminated; `detail` must be NULL or point to
/// at least `detail_cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sl3d_oracle(suite: *const c_char, detail: *mut c_char, detail_cap: usize) -> sl3d_status {
    guarded(|| {
        let picks: Vec<&str> = if suite.is_null() {
            SUITES.to_vec()
        } else {
            match str_arg(suite, "suite") {
                Ok(s) => vec![s],
                Err(status) => return status,
            }
        };
        let mut lines = Vec::with_capacity(picks.len());
        let mut all_passed = true;
        for name in picks {
            match run_suite(name) {
                Ok(outcome) => {
                    all_passed &= outcome.passed;
                    lines.push(format!(
                        "{}: {} — {}",
                        outcome.suite,
                        if outcome.passed { "pass" } else { "FAIL" },
                        outcome.detail
                    ));
                }
                Err(e) => return fail_error(&e),
            }
        }
        let report = lines.join("\n");
        write_str(&report, detail, detail_cap);
        if all_passed {
            sl3d_status::SL3D_OK
        } else {
            fail(sl3d_status::SL3D_ERR_ORACLE, report)
        }
    })
}
