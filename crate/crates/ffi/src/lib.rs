//! C ABI over `fedhypevae`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load`/`*_run`
//! functions and released by the matching `*_free`. Fallible functions
//! return [`FhveStatus`]; on failure the thread-local message is available
//! from [`fhve_last_error_message`]. Strings returned through out-pointers
//! are owned by the caller and released with [`fhve_string_free`].

mod error;

use std::ffi::{c_char, CStr, CString};
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;

use fedhypevae::config::{Checkpoint, Profile, RunConfig};
use fedhypevae::evalbench::{run_seed, stage_rng, Condition, SeedRun, SYNTH_STREAM};
use fedhypevae::model::Architecture;
use fedhypevae::privacy::{calibrate_sigma, PrivacyLedger};
use fedhypevae::synthesis::{synthesize_balanced, Generator, SamplingPrior};

pub use error::{fhve_clear_last_error, fhve_last_error_message, FhveStatus};
use error::{guard, FfiError};

type Res = Result<(), FfiError>;

/// Built-in configuration presets.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhveProfile {
    Full = 0,
    Desk = 1,
}

/// Opaque run configuration.
pub struct FhveConfig {
    inner: RunConfig,
}

/// Opaque result of one seed of the full pipeline.
pub struct FhveRun {
    inner: SeedRun,
    model: fedhypevae::model::ModelConfig,
}

/// Opaque trained generator: model shape and hypernetwork parameters.
pub struct FhveModel {
    arch: Architecture,
    checkpoint: Checkpoint,
}

/// Opaque privacy ledger.
pub struct FhveAccountant {
    inner: PrivacyLedger,
}

fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, FfiError> {
    // SAFETY: the caller passes either null or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| FfiError::null(name))
}

fn non_null_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, FfiError> {
    // SAFETY: as above, with exclusive access for the duration of the call.
    unsafe { p.as_mut() }.ok_or_else(|| FfiError::null(name))
}

fn read_str(p: *const c_char, name: &str) -> Result<String, FfiError> {
    if p.is_null() {
        return Err(FfiError::null(name));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map(str::to_owned)
        .map_err(|_| FfiError::new(FhveStatus::InvalidArgument, format!("`{name}` is not valid UTF-8")))
}

fn put<T>(out: *mut T, value: T, name: &str) -> Res {
    if out.is_null() {
        return Err(FfiError::null(name));
    }
    // SAFETY: non-null out-pointer supplied by the caller.
    unsafe { out.write(value) };
    Ok(())
}

fn put_handle<T>(out: *mut *mut T, value: T) -> Res {
    put(out, Box::into_raw(Box::new(value)), "out")
}

fn put_string(out: *mut *mut c_char, s: String) -> Res {
    let c = CString::new(s).map_err(|_| FfiError::new(FhveStatus::Internal, "string contains NUL"))?;
    put(out, c.into_raw(), "out")
}

fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `Box::into_raw` in this library and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fhve_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn fhve_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Creates a configuration from a built-in profile.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_config_profile(profile: FhveProfile, out: *mut *mut FhveConfig) -> FhveStatus {
    guard(|| {
        let p = match profile {
            FhveProfile::Full => Profile::Full,
            FhveProfile::Desk => Profile::Desk,
        };
        put_handle(out, FhveConfig { inner: RunConfig::profile(p) })
    })
}

/// Parses and validates a JSON configuration (same format as the CLI).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_config_from_json(json: *const c_char, out: *mut *mut FhveConfig) -> FhveStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        put_handle(out, FhveConfig { inner: RunConfig::from_json(&text)? })
    })
}

/// Loads and validates a JSON configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_config_load(path: *const c_char, out: *mut *mut FhveConfig) -> FhveStatus {
    guard(|| {
        let p = PathBuf::from(read_str(path, "path")?);
        put_handle(out, FhveConfig { inner: RunConfig::load(&p)? })
    })
}

/// Writes the fully resolved configuration as JSON into `*out`.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_config_to_json(config: *const FhveConfig, out: *mut *mut c_char) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let c = non_null(config, "config")?;
        put_string(out, c.inner.to_json()?)
    }))
}

/// # Safety
/// `config` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn fhve_config_free(config: *mut FhveConfig) {
    free_handle(config);
}

/// Runs data generation, federated training, meta-code fitting, synthesis
/// and probing for one seed.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_seed(config: *const FhveConfig, seed: u64, out: *mut *mut FhveRun) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let c = non_null(config, "config")?;
        c.inner.validate()?;
        let run = run_seed(&c.inner.experiment(), seed)?;
        put_handle(
            out,
            FhveRun {
                inner: run,
                model: c.inner.model.clone(),
            },
        )
    }))
}

/// Per-seed summary (scores, ε trajectory, round MMD) as JSON.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_summary_json(run: *const FhveRun, out: *mut *mut c_char) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let r = non_null(run, "run")?;
        let s = serde_json::to_string(&r.inner.summary()).map_err(fedhypevae::Error::from)?;
        put_string(out, s)
    }))
}

/// Mean over clients of the synthetic-only probe balanced accuracy.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_synthetic_bacc(run: *const FhveRun, out: *mut f64) -> FhveStatus {
    guard(AssertUnwindSafe(|| put(out, non_null(run, "run")?.inner.mean_bacc(Condition::Synthetic), "out")))
}

/// Total (ε, δ) spent, including the statistics release. `*has_epsilon`
/// is false when DP is disabled, in which case `*epsilon` is NaN.
///
/// # Safety
/// `run` must be a live handle; `epsilon` and `has_epsilon` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_total_epsilon(run: *const FhveRun, epsilon: *mut f64, has_epsilon: *mut bool) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let e = non_null(run, "run")?.inner.total_epsilon;
        put(has_epsilon, e.is_some(), "has_epsilon")?;
        put(epsilon, e.unwrap_or(f64::NAN), "epsilon")
    }))
}

/// Number of completed rounds.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_num_rounds(run: *const FhveRun, out: *mut usize) -> FhveStatus {
    guard(AssertUnwindSafe(|| put(out, non_null(run, "run")?.inner.outcome.reports.len(), "out")))
}

/// Client-averaged MMD² between real and synthetic samples after `round`
/// (1-based).
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_round_mmd(run: *const FhveRun, round: usize, out: *mut f64) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let reports = &non_null(run, "run")?.inner.outcome.reports;
        let r = round
            .checked_sub(1)
            .and_then(|i| reports.get(i))
            .ok_or_else(|| FfiError::new(FhveStatus::InvalidArgument, format!("round {round} not in 1..={}", reports.len())))?;
        put(out, r.mean_mmd(), "out")
    }))
}

/// Copies the fitted meta-code into `buf`. `*written` receives the code
/// length; if `len` is smaller the call fails with `BUFFER_TOO_SMALL`.
///
/// # Safety
/// `run` must be a live handle, `buf` valid for `len` doubles (or null when
/// `len` is 0) and `written` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_meta_code(run: *const FhveRun, buf: *mut f64, len: usize, written: *mut usize) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let code = &non_null(run, "run")?.inner.meta.code;
        put(written, code.len(), "written")?;
        copy_out(code, buf, len)
    }))
}

/// Builds a model handle from the run's trained hypernetwork.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_model(run: *const FhveRun, out: *mut *mut FhveModel) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let r = non_null(run, "run")?;
        let checkpoint = Checkpoint {
            model: r.model.clone(),
            phi: r.inner.outcome.phi.clone(),
        };
        put_handle(out, model_from(checkpoint)?)
    }))
}

/// # Safety
/// `run` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn fhve_run_free(run: *mut FhveRun) {
    free_handle(run);
}

fn model_from(checkpoint: Checkpoint) -> Result<FhveModel, FfiError> {
    Ok(FhveModel {
        arch: Architecture::new(checkpoint.model.clone())?,
        checkpoint,
    })
}

fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Res {
    if len < src.len() {
        return Err(FfiError::new(
            FhveStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(FfiError::null("buf"));
    }
    // SAFETY: `buf` is valid for `len >= src.len()` elements per the contract.
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Loads a hypernetwork checkpoint written by the CLI or `fhve_model_save`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_model_load(path: *const c_char, out: *mut *mut FhveModel) -> FhveStatus {
    guard(|| {
        let p = PathBuf::from(read_str(path, "path")?);
        put_handle(out, model_from(Checkpoint::read(&p)?)?)
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fhve_model_save(model: *const FhveModel, path: *const c_char) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let m = non_null(model, "model")?;
        let p = PathBuf::from(read_str(path, "path")?);
        m.checkpoint.write(&p)?;
        Ok(())
    }))
}

/// Embedding dimension, number of classes and code dimension.
///
/// # Safety
/// `model` must be a live handle and the out-pointers valid.
#[no_mangle]
pub unsafe extern "C" fn fhve_model_dims(
    model: *const FhveModel,
    data_dim: *mut usize,
    num_classes: *mut usize,
    code_dim: *mut usize,
) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let cfg = &non_null(model, "model")?.arch.cfg;
        put(data_dim, cfg.data_dim, "data_dim")?;
        put(num_classes, cfg.num_classes, "num_classes")?;
        put(code_dim, cfg.code_dim, "code_dim")
    }))
}

/// Draws `count` class-balanced samples from the generator at `code`,
/// using the same random stream as a run with `seed`. Rows go to `xs`
/// (row-major, `count * data_dim` doubles) and labels to `ys`.
///
/// # Safety
/// `model` must be a live handle, `code` valid for `code_len` doubles,
/// `xs` for `xs_len` doubles and `ys` for `ys_len` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fhve_model_synthesize_balanced(
    model: *const FhveModel,
    code: *const f64,
    code_len: usize,
    count: usize,
    seed: u64,
    xs: *mut f64,
    xs_len: usize,
    ys: *mut u32,
    ys_len: usize,
) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let m = non_null(model, "model")?;
        if code.is_null() {
            return Err(FfiError::null("code"));
        }
        // SAFETY: `code` is valid for `code_len` doubles per the contract.
        let code = unsafe { std::slice::from_raw_parts(code, code_len) };
        let d = m.arch.cfg.data_dim;
        let need = count
            .checked_mul(d)
            .ok_or_else(|| FfiError::new(FhveStatus::InvalidArgument, "count * data_dim overflows"))?;
        if xs_len < need || ys_len < count {
            return Err(FfiError::new(
                FhveStatus::BufferTooSmall,
                format!("need {need} doubles and {count} labels, got {xs_len} and {ys_len}"),
            ));
        }
        let phi = &m.checkpoint.phi;
        let gen = Generator::from_code(&m.arch, code, phi)?;
        let set = synthesize_balanced(
            &m.arch,
            &gen,
            phi,
            count,
            SamplingPrior::ClassPrior,
            &mut stage_rng(seed, SYNTH_STREAM),
        )?;
        let flat: Vec<f64> = set.xs.iter().flatten().copied().collect();
        let labels: Vec<u32> = set.ys.iter().map(|&y| y as u32).collect();
        copy_out(&flat, xs, xs_len)?;
        copy_out(&labels, ys, ys_len)
    }))
}

/// # Safety
/// `model` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn fhve_model_free(model: *mut FhveModel) {
    free_handle(model);
}

/// Creates an empty RDP ledger.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_accountant_new(out: *mut *mut FhveAccountant) -> FhveStatus {
    guard(|| put_handle(out, FhveAccountant { inner: PrivacyLedger::new() }))
}

/// Records `steps` subsampled Gaussian steps at rate `q` and noise `sigma`.
///
/// # Safety
/// `accountant` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fhve_accountant_add_steps(accountant: *mut FhveAccountant, q: f64, sigma: f64, steps: usize) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        non_null_mut(accountant, "accountant")?.inner.rdp_steps(q, sigma, steps)?;
        Ok(())
    }))
}

/// Smallest ε over the tracked orders at `delta`.
///
/// # Safety
/// `accountant` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_accountant_epsilon(accountant: *const FhveAccountant, delta: f64, out: *mut f64) -> FhveStatus {
    guard(AssertUnwindSafe(|| {
        let e = non_null(accountant, "accountant")?.inner.epsilon(delta)?;
        put(out, e, "out")
    }))
}

/// # Safety
/// `accountant` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn fhve_accountant_free(accountant: *mut FhveAccountant) {
    free_handle(accountant);
}

/// Smallest noise multiplier (to 0.01) whose `steps`-fold composition at
/// rate `q` stays within (`target_epsilon`, `delta`).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhve_calibrate_sigma(target_epsilon: f64, delta: f64, q: f64, steps: usize, out: *mut f64) -> FhveStatus {
    guard(|| put(out, calibrate_sigma(target_epsilon, delta, q, steps)?, "out"))
}
