//! C ABI for echoloc.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `_free` function. Every fallible call returns an
//! [`EcholocStatus`]; on failure, [`echoloc_last_error`] returns a message for
//! the calling thread. Panics are caught at the boundary and reported as
//! `ECHOLOC_STATUS_PANIC`.
//!
//! Observations use the ideal low-pass kernel at their sampling rate.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use echoloc::forward::{synthesize_rir, ForwardModel, Observation};
use echoloc::geometry::{enumerate_image_sources, MicArray, Room, Scenario, Vec3};
use echoloc::kernels::{FilterKernel, SamplingSpec};
use echoloc::solver::{solve, RecoveryResult, SolverConfig, StopReason};
use echoloc::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EcholocStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
}

/// Sampled multichannel observation.
pub struct EcholocObservation {
    inner: Observation,
}

/// Output of [`echoloc_solve`].
pub struct EcholocResult {
    inner: RecoveryResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> EcholocStatus {
    match e {
        Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::Format(_) => EcholocStatus::InvalidInput,
        Error::Singular { .. } | Error::Degenerate { .. } => EcholocStatus::Numerical,
        Error::Io(_) => EcholocStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), (EcholocStatus, String)>>(f: F) -> EcholocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EcholocStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            EcholocStatus::Panic
        }
    }
}

fn lib<T>(r: echoloc::Result<T>) -> Result<T, (EcholocStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (EcholocStatus, String) {
    (EcholocStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (EcholocStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn vec3(p: *const f64, name: &str) -> Result<Vec3, (EcholocStatus, String)> {
    let s = slice(p, 3, name)?;
    Ok(Vec3::new(s[0], s[1], s[2]))
}

unsafe fn mic_array(mics: *const f64, n_mics: usize) -> Result<MicArray, (EcholocStatus, String)> {
    let flat = slice(mics, 3 * n_mics, "mics")?;
    lib(MicArray::new(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(), "ffi"))
}

unsafe fn room(dims: *const f64, absorption: *const f64) -> Result<Room, (EcholocStatus, String)> {
    let dims = vec3(dims, "dims")?;
    let a = slice(absorption, 6, "absorption")?;
    lib(Room::new(dims, [a[0], a[1], a[2], a[3], a[4], a[5]]))
}

fn out_ptr<T>(out: *mut *mut T) -> Result<(), (EcholocStatus, String)> {
    if out.is_null() {
        Err(null("out"))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn echoloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn echoloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of image sources of reflection order at most `max_order`.
///
/// # Safety
/// `dims` and `src` point to 3 doubles, `absorption` to 6, `out` to a writable
/// `size_t`.
#[no_mangle]
pub unsafe extern "C" fn echoloc_image_source_count(
    dims: *const f64,
    absorption: *const f64,
    src: *const f64,
    max_order: u32,
    out: *mut usize,
) -> EcholocStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let room = room(dims, absorption)?;
        let set = lib(enumerate_image_sources(&room, vec3(src, "src")?, max_order))?;
        *out = set.len();
        Ok(())
    })
}

/// Synthesizes the RIR of a cuboid room with the image-source method.
///
/// # Safety
/// `dims` and `src` point to 3 doubles, `absorption` to 6, `mics` to
/// `3 * n_mics` doubles (x, y, z per microphone). `out` must be writable; on
/// success it receives a handle to release with
/// [`echoloc_observation_free`].
#[no_mangle]
pub unsafe extern "C" fn echoloc_simulate(
    dims: *const f64,
    absorption: *const f64,
    src: *const f64,
    mics: *const f64,
    n_mics: usize,
    fs: f64,
    t_max: f64,
    max_order: u32,
    c: f64,
    out: *mut *mut EcholocObservation,
) -> EcholocStatus {
    guard(|| {
        out_ptr(out)?;
        let scenario = lib(Scenario::new(room(dims, absorption)?, vec3(src, "src")?, mic_array(mics, n_mics)?, 0, c))?;
        let spec = lib(SamplingSpec::from_duration(fs, t_max))?;
        let (obs, _) = lib(synthesize_rir(&scenario, FilterKernel::SincLowpass { fs }, spec, max_order))?;
        *out = Box::into_raw(Box::new(EcholocObservation { inner: obs }));
        Ok(())
    })
}

/// Wraps caller-provided samples (`n_mics × n_samples`, row-major).
///
/// # Safety
/// `mics` points to `3 * n_mics` doubles, `data` to `n_mics * n_samples`
/// doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn echoloc_observation_new(
    mics: *const f64,
    n_mics: usize,
    fs: f64,
    n_samples: usize,
    c: f64,
    data: *const f64,
    out: *mut *mut EcholocObservation,
) -> EcholocStatus {
    guard(|| {
        out_ptr(out)?;
        let array = mic_array(mics, n_mics)?;
        let len = n_mics
            .checked_mul(n_samples)
            .ok_or((EcholocStatus::InvalidInput, "dimensions overflow".to_string()))?;
        let data = slice(data, len, "data")?.to_vec();
        let model = lib(ForwardModel::new(
            array,
            FilterKernel::SincLowpass { fs },
            lib(SamplingSpec::new(fs, n_samples))?,
            c,
        ))?;
        let obs = lib(Observation::new(model, data))?;
        *out = Box::into_raw(Box::new(EcholocObservation { inner: obs }));
        Ok(())
    })
}

/// Writes the number of microphones and samples.
///
/// # Safety
/// `obs` is a live handle; `n_mics` and `n_samples` are writable.
#[no_mangle]
pub unsafe extern "C" fn echoloc_observation_shape(
    obs: *const EcholocObservation,
    n_mics: *mut usize,
    n_samples: *mut usize,
) -> EcholocStatus {
    guard(|| {
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        if n_mics.is_null() || n_samples.is_null() {
            return Err(null("shape output"));
        }
        *n_mics = obs.inner.n_mics();
        *n_samples = obs.inner.n_samples();
        Ok(())
    })
}

/// Copies the samples into `buf`, which must hold `n_mics * n_samples`
/// doubles; `len` is its capacity.
///
/// # Safety
/// `obs` is a live handle and `buf` points to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn echoloc_observation_data(
    obs: *const EcholocObservation,
    buf: *mut f64,
    len: usize,
) -> EcholocStatus {
    guard(|| {
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        let data = &obs.inner.data;
        if len < data.len() {
            return Err((EcholocStatus::InvalidInput, format!("buffer holds {len} values, {} needed", data.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
        Ok(())
    })
}

/// New observation with Gaussian noise at the given peak signal-to-noise
/// ratio in dB.
///
/// # Safety
/// `obs` is a live handle, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn echoloc_observation_add_noise(
    obs: *const EcholocObservation,
    psnr_db: f64,
    seed: u64,
    out: *mut *mut EcholocObservation,
) -> EcholocStatus {
    guard(|| {
        out_ptr(out)?;
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        let noisy = lib(obs.inner.add_noise(psnr_db, seed))?;
        *out = Box::into_raw(Box::new(EcholocObservation { inner: noisy }));
        Ok(())
    })
}

/// Releases an observation. Null is ignored.
///
/// # Safety
/// `obs` is null or a handle not yet released.
#[no_mangle]
pub unsafe extern "C" fn echoloc_observation_free(obs: *mut EcholocObservation) {
    if !obs.is_null() {
        drop(Box::from_raw(obs));
    }
}

/// Recovers image sources. `config_json` holds a solver configuration
/// object (missing fields take their defaults) or is null for the defaults.
///
/// # Safety
/// `obs` is a live handle, `config_json` is null or NUL-terminated UTF-8,
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn echoloc_solve(
    obs: *const EcholocObservation,
    config_json: *const c_char,
    out: *mut *mut EcholocResult,
) -> EcholocStatus {
    guard(|| {
        out_ptr(out)?;
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        let config: SolverConfig = if config_json.is_null() {
            SolverConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| (EcholocStatus::InvalidInput, "configuration is not UTF-8".to_string()))?;
            serde_json::from_str(text).map_err(|e| (EcholocStatus::InvalidInput, format!("configuration: {e}")))?
        };
        let result = lib(solve(&obs.inner, &config))?;
        *out = Box::into_raw(Box::new(EcholocResult { inner: result }));
        Ok(())
    })
}

/// Number of recovered spikes, 0 for a null handle.
///
/// # Safety
/// `res` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn echoloc_result_spike_count(res: *const EcholocResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.measure.len())
}

/// Copies amplitudes and positions (x, y, z per spike) of the recovered
/// spikes. `capacity` is the number of spikes the buffers can hold.
///
/// # Safety
/// `res` is a live handle, `amplitudes` holds `capacity` doubles and
/// `positions` `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn echoloc_result_spikes(
    res: *const EcholocResult,
    amplitudes: *mut f64,
    positions: *mut f64,
    capacity: usize,
) -> EcholocStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        let spikes = &res.inner.measure.spikes;
        if capacity < spikes.len() {
            return Err((EcholocStatus::InvalidInput, format!("capacity {capacity} below {} spikes", spikes.len())));
        }
        if spikes.is_empty() {
            return Ok(());
        }
        if amplitudes.is_null() || positions.is_null() {
            return Err(null("spike buffers"));
        }
        for (k, s) in spikes.iter().enumerate() {
            *amplitudes.add(k) = s.amplitude;
            *positions.add(3 * k) = s.position.x;
            *positions.add(3 * k + 1) = s.position.y;
            *positions.add(3 * k + 2) = s.position.z;
        }
        Ok(())
    })
}

/// Stop reason: 0 certificate below `λ`, 1 amplitude below threshold,
/// 2 iteration limit, -1 for a null handle.
///
/// # Safety
/// `res` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn echoloc_result_stop_reason(res: *const EcholocResult) -> i32 {
    match res.as_ref().map(|r| r.inner.stop_reason) {
        Some(StopReason::CertificateBelowLambda) => 0,
        Some(StopReason::AmplitudeBelowThreshold) => 1,
        Some(StopReason::MaxIterations) => 2,
        None => -1,
    }
}

/// Final value of the regularized objective, NaN for a null handle.
///
/// # Safety
/// `res` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn echoloc_result_objective(res: *const EcholocResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.inner.final_objective)
}

/// The full result as JSON. Release the string with [`echoloc_string_free`].
///
/// # Safety
/// `res` is a live handle, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn echoloc_result_to_json(res: *const EcholocResult, out: *mut *mut c_char) -> EcholocStatus {
    guard(|| {
        out_ptr(out)?;
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        let text = serde_json::to_string(&res.inner).map_err(|e| (EcholocStatus::InvalidInput, e.to_string()))?;
        let c = CString::new(text).map_err(|e| (EcholocStatus::InvalidInput, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `res` is null or a handle not yet released.
#[no_mangle]
pub unsafe extern "C" fn echoloc_result_free(res: *mut EcholocResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string from this library not yet released.
#[no_mangle]
pub unsafe extern "C" fn echoloc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
