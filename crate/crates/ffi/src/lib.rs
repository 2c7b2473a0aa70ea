//! C ABI over the `ethkick` library.
//!
//! Every fallible function returns an [`EthkickStatus`]; on failure the
//! message is kept in a thread-local slot readable through
//! [`ethkick_last_error`]. Systems are opaque handles created by
//! [`ethkick_system_new`] and released with [`ethkick_system_free`].
//! Panics never cross the boundary; they are reported as
//! `ETHKICK_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use ethkick::evolve::{paper_convention_kick_de, unnormalized_thermal, Dynamics, EvolutionConfig};
use ethkick::experiments::{self, ExperimentSpec};
use ethkick::linalg::{diagonalize, Eigensystem};
use ethkick::models::{Model, ModelSpec};
use ethkick::pulses::Pulse;
use ethkick::spectra::{make_state, EigenbasisObservable, StateKind};
use ethkick::Error;

/// Result codes of every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EthkickStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad input: malformed JSON, invalid model or pulse, index out of range.
    InvalidArgument = 2,
    /// A numerical stage failed (eigensolver, stability gate, quadrature).
    Numerical = 3,
    /// Reading or writing files failed.
    Io = 4,
    /// An internal panic was caught.
    Panic = 5,
}

/// Diagonalized model plus its kick/pulse propagator data.
pub struct EthkickSystem {
    model: Model,
    eig: Arc<Eigensystem>,
    obs: EigenbasisObservable,
    dynamics: Dynamics,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(EthkickStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) | Error::Csv(_) | Error::Cache { .. } => EthkickStatus::Io,
            e if e.is_usage() => EthkickStatus::InvalidArgument,
            _ => EthkickStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(EthkickStatus::InvalidArgument, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EthkickStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EthkickStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {what}"));
            EthkickStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(EthkickStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn system_arg<'a>(ptr: *const EthkickSystem) -> Result<&'a EthkickSystem, Failure> {
    ptr.as_ref().ok_or_else(|| Failure(EthkickStatus::NullPointer, "system handle is null".into()))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| Failure(EthkickStatus::NullPointer, format!("{name} is null")))
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ethkick_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Forgets the last error message of this thread.
#[no_mangle]
pub extern "C" fn ethkick_clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ethkick_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds and diagonalizes the model described by `model_json` (the `model`
/// object of an experiment spec). On success `*out` receives a handle that
/// must be released with [`ethkick_system_free`].
///
/// # Safety
/// `model_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ethkick_system_new(model_json: *const c_char, out: *mut *mut EthkickSystem) -> EthkickStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let text = str_arg(model_json, "model_json")?;
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| invalid(format!("model JSON: {e}")))?;
        let model = Model::build(&spec)?;
        let eig = Arc::new(diagonalize(&model.h0)?);
        let obs = EigenbasisObservable::new(&model.observable, eig.clone(), 1)?;
        let dynamics = Dynamics::new(&obs)?;
        *out = Box::into_raw(Box::new(EthkickSystem { model, eig, obs, dynamics }));
        Ok(())
    })
}

/// Releases a handle from [`ethkick_system_new`]. Null is a no-op.
///
/// # Safety
/// `system` must be null or a handle that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ethkick_system_free(system: *mut EthkickSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Hilbert-space dimension of the system.
///
/// # Safety
/// `system` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ethkick_system_dim(system: *const EthkickSystem, out: *mut usize) -> EthkickStatus {
    guard(|| {
        *out_arg(out, "out")? = system_arg(system)?.eig.dim();
        Ok(())
    })
}

/// Copies the ascending eigenvalues of `H0` into `buf`, which must hold at
/// least `len >= dim` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ethkick_system_energies(system: *const EthkickSystem, buf: *mut f64, len: usize) -> EthkickStatus {
    guard(|| {
        let sys = system_arg(system)?;
        let e = sys.eig.energies();
        if buf.is_null() {
            return Err(Failure(EthkickStatus::NullPointer, "buf is null".into()));
        }
        if len < e.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", e.len())));
        }
        std::slice::from_raw_parts_mut(buf, e.len()).copy_from_slice(e);
        Ok(())
    })
}

/// Largest absolute matrix element of `H0`.
///
/// # Safety
/// `system` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ethkick_system_h_max(system: *const EthkickSystem, out: *mut f64) -> EthkickStatus {
    guard(|| {
        *out_arg(out, "out")? = system_arg(system)?.model.h0.max_abs();
        Ok(())
    })
}

/// Exact energy change of eigenstate `n` after the kick `exp(-i lambda O)`.
///
/// # Safety
/// `system` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ethkick_kick_eigenstate(
    system: *const EthkickSystem,
    n: usize,
    lambda: f64,
    out: *mut f64,
) -> EthkickStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = system_arg(system)?.dynamics.kick_delta_e_eigenstate(n, lambda)?;
        Ok(())
    })
}

/// Exact energy change of the canonical state at inverse temperature `beta`
/// after the kick `exp(-i lambda O)`.
///
/// # Safety
/// `system` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ethkick_kick_thermal(
    system: *const EthkickSystem,
    beta: f64,
    lambda: f64,
    out: *mut f64,
) -> EthkickStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let sys = system_arg(system)?;
        let state = make_state(StateKind::Thermal { beta }, &sys.eig)?;
        *out = sys.dynamics.kick_delta_e(&state, lambda)?;
        Ok(())
    })
}

/// Kick energy change in the all-orders series convention, summed with the
/// unnormalized Boltzmann weights `exp(-beta E_n)`.
///
/// # Safety
/// `system` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ethkick_kick_series_convention(
    system: *const EthkickSystem,
    beta: f64,
    lambda: f64,
    out: *mut f64,
) -> EthkickStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let sys = system_arg(system)?;
        *out = paper_convention_kick_de(&sys.obs, &unnormalized_thermal(beta, &sys.eig), lambda)?;
        Ok(())
    })
}

/// Exact energy change of the canonical state at `beta` driven by the pulse
/// in `pulse_json` (e.g. `{"shape":"hann","amplitude":0.1,"duration":1}`).
/// `dt <= 0` selects the default step.
///
/// # Safety
/// `system` must be a live handle, `pulse_json` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ethkick_pulse_thermal(
    system: *const EthkickSystem,
    beta: f64,
    pulse_json: *const c_char,
    dt: f64,
    out: *mut f64,
) -> EthkickStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let sys = system_arg(system)?;
        let pulse: Pulse =
            serde_json::from_str(str_arg(pulse_json, "pulse_json")?).map_err(|e| invalid(format!("pulse JSON: {e}")))?;
        pulse.validate()?;
        let cfg = if dt > 0.0 { EvolutionConfig::with_dt(dt) } else { EvolutionConfig::default() };
        let state = make_state(StateKind::Thermal { beta }, &sys.eig)?;
        *out = sys.dynamics.pulse_delta_e(&state, &pulse, &cfg, None)?.delta_e;
        Ok(())
    })
}

/// Runs one study (`model-info`, `eth-stats`, `spectral`, `kick`, `pulse` or
/// `scaling`) on the experiment spec `spec_json` and writes its CSV tables and
/// summary into `out_dir`. `cache_dir` may be null.
///
/// # Safety
/// All non-null pointers must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ethkick_run_study(
    study: *const c_char,
    spec_json: *const c_char,
    out_dir: *const c_char,
    cache_dir: *const c_char,
) -> EthkickStatus {
    guard(|| {
        let name = str_arg(study, "study")?;
        let spec = ExperimentSpec::from_json(str_arg(spec_json, "spec_json")?)?;
        let out_dir = str_arg(out_dir, "out_dir")?;
        let cache = if cache_dir.is_null() {
            None
        } else {
            Some(ethkick::linalg::EigenCache::new(str_arg(cache_dir, "cache_dir")?))
        };
        let run = match name {
            "model-info" => experiments::run_model_info,
            "eth-stats" => experiments::run_eth_study,
            "spectral" => experiments::run_spectral_study,
            "kick" => experiments::run_kick_study,
            "pulse" => experiments::run_response_study,
            "scaling" => experiments::run_scaling_study,
            other => return Err(invalid(format!("unknown study '{other}'"))),
        };
        run(&spec, cache.as_ref())?.write(Path::new(out_dir))?;
        Ok(())
    })
}
