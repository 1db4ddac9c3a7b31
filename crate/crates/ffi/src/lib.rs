//! C ABI over the gpff engine.
//!
//! Every fallible function returns a [`GpffStatus`]; on failure the message
//! is available from [`gpff_last_error`] on the same thread until the next
//! call. Providers are opaque handles released with [`gpff_provider_free`];
//! strings returned by the library are released with [`gpff_string_free`].
//! Coordinates and forces are flat `3n` arrays of `double` in Å.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Duration;

use gpff::config::RunConfig;
use gpff::provider::{ForceProvider, OracleAlignment, OracleMode, OracleProvider};
use gpff::remote::RemoteProvider;
use gpff::sampler::{run_batch, PriorSpec};
use gpff::schedule::{build_schedule, ScheduleParams};
use gpff::{GpffError, Structure};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpffStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Provider = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Force provider handle.
pub struct GpffProvider {
    inner: Arc<dyn ForceProvider>,
    references: Vec<Structure>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(GpffStatus, String);

impl From<GpffError> for Failure {
    fn from(e: GpffError) -> Self {
        let status = match &e {
            GpffError::Parse { .. } | GpffError::Json(_) => GpffStatus::Parse,
            GpffError::Transport(_) | GpffError::Schema(_) | GpffError::ProviderAtStep { .. } => {
                GpffStatus::Provider
            }
            _ => GpffStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: GpffStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GpffStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpffStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GpffStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(GpffStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(GpffStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn coords_arg(p: *const f64, n: usize, name: &str) -> Result<Vec<[f64; 3]>, Failure> {
    if p.is_null() {
        return Err(fail(GpffStatus::NullPointer, format!("{name} is null")));
    }
    let flat = std::slice::from_raw_parts(p, 3 * n);
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(GpffStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread, or null. Owned by the
/// library.
#[no_mangle]
pub extern "C" fn gpff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn gpff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Mixture oracle over the frames of an XYZ document. `sigma <= 0` infers
/// the noise level from the query; `rigid` superimposes references first.
///
/// # Safety
/// `xyz` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpff_oracle_from_xyz(
    xyz: *const c_char,
    sigma: f64,
    rigid: bool,
    out: *mut *mut GpffProvider,
) -> GpffStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let text = str_arg(xyz, "xyz")?;
        let references = gpff::xyz::parse_xyz(text)?;
        let mode = if sigma > 0.0 {
            OracleMode::FixedSigma(sigma)
        } else {
            OracleMode::SigmaAgnostic
        };
        let align = if rigid {
            OracleAlignment::Rigid
        } else {
            OracleAlignment::None
        };
        let oracle = OracleProvider::from_structures(&references, mode)?.with_alignment(align);
        *out = Box::into_raw(Box::new(GpffProvider {
            inner: Arc::new(oracle),
            references,
        }));
        Ok(())
    })
}

/// HTTP force provider at `endpoint`; `timeout_secs == 0` keeps the default.
///
/// # Safety
/// `endpoint` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpff_remote_provider_new(
    endpoint: *const c_char,
    timeout_secs: u64,
    out: *mut *mut GpffProvider,
) -> GpffStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let url = str_arg(endpoint, "endpoint")?;
        let timeout = if timeout_secs == 0 {
            gpff::remote::DEFAULT_TIMEOUT
        } else {
            Duration::from_secs(timeout_secs)
        };
        *out = Box::into_raw(Box::new(GpffProvider {
            inner: Arc::new(RemoteProvider::with_timeout(url, timeout)?),
            references: Vec::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `provider` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gpff_provider_free(provider: *mut GpffProvider) {
    if !provider.is_null() {
        drop(Box::from_raw(provider));
    }
}

/// Evaluates forces for `n` atoms. `elements` holds `n` C strings;
/// `forces` receives `3n` values. `sigma_hint` (nullable) receives the
/// provider's noise level or NaN.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gpff_provider_evaluate(
    provider: *const GpffProvider,
    elements: *const *const c_char,
    positions: *const f64,
    n: usize,
    forces: *mut f64,
    sigma_hint: *mut f64,
) -> GpffStatus {
    guard(|| {
        let p = provider
            .as_ref()
            .ok_or_else(|| fail(GpffStatus::NullPointer, "provider is null"))?;
        out_ptr(forces, "forces")?;
        if elements.is_null() {
            return Err(fail(GpffStatus::NullPointer, "elements is null"));
        }
        let names = std::slice::from_raw_parts(elements, n)
            .iter()
            .enumerate()
            .map(|(i, &e)| str_arg(e, &format!("elements[{i}]")).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let s = Structure::new(names, coords_arg(positions, n, "positions")?)?;
        let eval = p.inner.evaluate(&s)?;
        let dst = std::slice::from_raw_parts_mut(forces, 3 * n);
        for (chunk, f) in dst.chunks_exact_mut(3).zip(&eval.forces) {
            chunk.copy_from_slice(f);
        }
        if !sigma_hint.is_null() {
            *sigma_hint = eval.sigma_hint.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Runs a batch and returns the structures as multi-frame XYZ in `out`.
/// `config_json` is a run configuration (nullable for defaults); its
/// `provider` field is ignored in favour of the handle. Failed
/// trajectories make the call fail.
///
/// # Safety
/// `provider` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpff_generate_xyz(
    provider: *const GpffProvider,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> GpffStatus {
    guard(|| {
        let p = provider
            .as_ref()
            .ok_or_else(|| fail(GpffStatus::NullPointer, "provider is null"))?;
        out_ptr(out, "out")?;
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        cfg.validate()?;
        let elements = cfg
            .elements
            .clone()
            .or_else(|| p.references.first().map(|r| r.elements.clone()))
            .ok_or_else(|| fail(GpffStatus::InvalidArgument, "config needs `elements`"))?;
        let prior = cfg.prior.clone().unwrap_or(PriorSpec::Isotropic {
            sigma: cfg.schedule.sigma_max,
            center: [0.0; 3],
        });
        let mut frames = Vec::with_capacity(cfg.count);
        for r in run_batch(
            p.inner.as_ref(),
            &cfg.sampler,
            &cfg.schedule,
            &prior,
            &elements,
            cfg.count,
            cfg.seed,
            cfg.jobs,
        ) {
            frames.push(r?.structure);
        }
        let text = CString::new(gpff::xyz::to_xyz_string(&frames))
            .map_err(|_| fail(GpffStatus::Internal, "output contains NUL"))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gpff_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the `steps + 1` noise levels (terminal zero last) into `levels`,
/// which holds `capacity` values.
///
/// # Safety
/// `levels` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn gpff_schedule(
    rho: f64,
    sigma_min: f64,
    sigma_max: f64,
    steps: usize,
    levels: *mut f64,
    capacity: usize,
) -> GpffStatus {
    guard(|| {
        out_ptr(levels, "levels")?;
        let s = build_schedule(&ScheduleParams::new(rho, sigma_min, sigma_max, steps)?)?;
        if capacity < s.levels.len() {
            return Err(fail(
                GpffStatus::BufferTooSmall,
                format!("need {} levels, capacity {capacity}", s.levels.len()),
            ));
        }
        std::slice::from_raw_parts_mut(levels, s.levels.len()).copy_from_slice(&s.levels);
        Ok(())
    })
}

/// Normalized principal-moment ratios of `n` positions.
///
/// # Safety
/// `positions` must hold `3n` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpff_shape_point(
    positions: *const f64,
    n: usize,
    npr1: *mut f64,
    npr2: *mut f64,
) -> GpffStatus {
    guard(|| {
        out_ptr(npr1, "npr1")?;
        out_ptr(npr2, "npr2")?;
        let pos = coords_arg(positions, n, "positions")?;
        let s = Structure::new(vec!["X".into(); n], pos)?;
        let sp = gpff::geometry::shape_point(&s)?;
        *npr1 = sp.npr1;
        *npr2 = sp.npr2;
        Ok(())
    })
}

/// Noise level estimated from `n` force vectors.
///
/// # Safety
/// `forces` must hold `3n` values; `sigma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpff_sigma_estimate(
    forces: *const f64,
    n: usize,
    sigma: *mut f64,
) -> GpffStatus {
    guard(|| {
        out_ptr(sigma, "sigma")?;
        *sigma = gpff::pes::sigma_estimate(&coords_arg(forces, n, "forces")?)?;
        Ok(())
    })
}
