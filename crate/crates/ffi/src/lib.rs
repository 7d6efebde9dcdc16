//! C ABI over the waveprior core. Handles are opaque pointers owned by the
//! caller and released with the matching `_free`; every fallible call returns
//! a `WpStatus` and leaves a message for `wp_last_error_message` on failure.
//!
//! All waveform buffers are caller-allocated `double` arrays. Functions never
//! unwind across the boundary: panics are caught and reported as
//! `WP_STATUS_NUMERIC_ERROR`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use waveprior::guidance::{sample_prior, solve_inverse, GuidanceConfig, GuidanceMode, TaskSpec};
use waveprior::metrics::si_snr;
use waveprior::operators::{Clip, Lowpass, Mel, MelConfig};
use waveprior::schedule::NoiseSchedule;
use waveprior::score::{GaussianPrior, ScoreModel, ToyDenoiser};
use waveprior::signal::StftConfig;

/// Call outcome. Non-zero values mirror the CLI exit codes, with
/// `NULL_ARG` reserved for pointer misuse that only exists at this boundary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpStatus {
    Ok = 0,
    ConfigError = 2,
    IoError = 3,
    NumericError = 4,
    NullArg = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = owned);
}

fn fail(e: waveprior::Error) -> WpStatus {
    set_error(&e.to_string());
    match e.exit_code() {
        2 => WpStatus::ConfigError,
        3 => WpStatus::IoError,
        _ => WpStatus::NumericError,
    }
}

/// Runs a fallible body without letting a panic cross the ABI.
fn guarded(f: impl FnOnce() -> Result<(), WpStatus>) -> WpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WpStatus::Ok,
        Ok(Err(status)) => status,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            set_error(&format!("internal panic: {msg}"));
            WpStatus::NumericError
        }
    }
}

macro_rules! require_non_null {
    ($($p:expr),+ $(,)?) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return WpStatus::NullArg;
        })+
    };
}

/// Opaque diffusion noise schedule.
pub struct WpSchedule {
    inner: NoiseSchedule,
}

/// Opaque score model: either a trained denoiser checkpoint or an analytic
/// Gaussian prior.
pub struct WpModel {
    inner: ModelKind,
}

enum ModelKind {
    Denoiser(ToyDenoiser),
    Gaussian(GaussianPrior),
}

impl ScoreModel for ModelKind {
    fn predict_eps(
        &self,
        x_t: &[f64],
        t: usize,
        sched: &NoiseSchedule,
    ) -> waveprior::Result<Vec<f64>> {
        match self {
            ModelKind::Denoiser(m) => m.predict_eps(x_t, t, sched),
            ModelKind::Gaussian(m) => m.predict_eps(x_t, t, sched),
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn wp_version() -> *const c_char {
    c"0.1.0".as_ptr()
}

/// Creates the linear beta schedule. On success `*out` owns the handle.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn wp_schedule_linear(
    num_steps: usize,
    beta_min: f64,
    beta_max: f64,
    out: *mut *mut WpSchedule,
) -> WpStatus {
    require_non_null!(out);
    guarded(|| {
        let sched = NoiseSchedule::linear(num_steps, beta_min, beta_max).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(WpSchedule { inner: sched })) };
        Ok(())
    })
}

/// Releases a schedule handle; a null handle is ignored.
///
/// # Safety
/// `sched` must have come from this library and not been freed already.
#[no_mangle]
pub unsafe extern "C" fn wp_schedule_free(sched: *mut WpSchedule) {
    if !sched.is_null() {
        drop(unsafe { Box::from_raw(sched) });
    }
}

/// Number of diffusion steps T.
///
/// # Safety
/// `sched` must be a live schedule handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn wp_schedule_steps(sched: *const WpSchedule) -> usize {
    if sched.is_null() {
        return 0;
    }
    unsafe { &*sched }.inner.num_steps()
}

/// Writes ᾱ(t) for t in [0, T] into `*out`.
///
/// # Safety
/// `sched` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn wp_schedule_alpha_bar(
    sched: *const WpSchedule,
    t: usize,
    out: *mut f64,
) -> WpStatus {
    require_non_null!(sched, out);
    let s = unsafe { &*sched };
    if t > s.inner.num_steps() {
        set_error(&format!(
            "step {t} outside schedule of {} steps",
            s.inner.num_steps()
        ));
        return WpStatus::ConfigError;
    }
    unsafe { *out = s.inner.alpha_bar(t) };
    WpStatus::Ok
}

/// Loads a trained checkpoint; on success `*out_model` and `*out_sched` own
/// the model and the schedule it was trained with.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; out params must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_model_load_checkpoint(
    path: *const c_char,
    out_model: *mut *mut WpModel,
    out_sched: *mut *mut WpSchedule,
) -> WpStatus {
    require_non_null!(path, out_model, out_sched);
    guarded(|| {
        let path = unsafe { CStr::from_ptr(path) }.to_str().map_err(|_| {
            set_error("checkpoint path is not valid UTF-8");
            WpStatus::ConfigError
        })?;
        let (model, sched) =
            waveprior::score::checkpoint::load(std::path::Path::new(path)).map_err(fail)?;
        unsafe {
            *out_model = Box::into_raw(Box::new(WpModel {
                inner: ModelKind::Denoiser(model),
            }));
            *out_sched = Box::into_raw(Box::new(WpSchedule { inner: sched }));
        }
        Ok(())
    })
}

/// Creates an analytic AR(1) Gaussian prior of dimension `dim` with
/// correlation `rho` (|rho| < 1) as a score model.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn wp_model_gaussian_ar1(
    dim: usize,
    rho: f64,
    out: *mut *mut WpModel,
) -> WpStatus {
    require_non_null!(out);
    guarded(|| {
        let prior = GaussianPrior::ar1(dim, rho).map_err(fail)?;
        unsafe {
            *out = Box::into_raw(Box::new(WpModel {
                inner: ModelKind::Gaussian(prior),
            }))
        };
        Ok(())
    })
}

/// Releases a model handle; a null handle is ignored.
///
/// # Safety
/// `model` must have come from this library and not been freed already.
#[no_mangle]
pub unsafe extern "C" fn wp_model_free(model: *mut WpModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

unsafe fn model_ref<'a>(m: *const WpModel) -> &'a ModelKind {
    unsafe { &(*m).inner }
}

/// Draws one unconditional sample of `len` values into `out`.
///
/// # Safety
/// `model` and `sched` must be live handles; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wp_sample_prior(
    model: *const WpModel,
    sched: *const WpSchedule,
    len: usize,
    seed: u64,
    out: *mut f64,
) -> WpStatus {
    require_non_null!(model, sched, out);
    guarded(|| {
        let cfg = GuidanceConfig {
            seed,
            ..Default::default()
        };
        let x = sample_prior(
            unsafe { model_ref(model) },
            len,
            &unsafe { &*sched }.inner,
            &cfg,
        )
        .map_err(fail)?;
        unsafe { std::ptr::copy_nonoverlapping(x.as_ptr(), out, len) };
        Ok(())
    })
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize) -> &'a [f64] {
    unsafe { std::slice::from_raw_parts(p, len) }
}

fn write_out(src: &[f64], dst: *mut f64) {
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
}

/// Declips `y` (amplitude-saturated at `threshold`) with reconstruction
/// guidance of strength `xi0`; writes `len` restored samples into `out`.
///
/// # Safety
/// `y` and `out` must hold `len` doubles; the handles must be live.
#[no_mangle]
pub unsafe extern "C" fn wp_declip(
    model: *const WpModel,
    sched: *const WpSchedule,
    y: *const f64,
    len: usize,
    threshold: f64,
    xi0: f64,
    seed: u64,
    out: *mut f64,
) -> WpStatus {
    require_non_null!(model, sched, y, out);
    guarded(|| {
        let clip = Clip::new(threshold).map_err(fail)?;
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Reconstruction,
            xi0,
            seed,
            ..Default::default()
        };
        let (sols, _) = solve_inverse(
            &TaskSpec::Declip { clip: &clip },
            unsafe { slice_arg(y, len) },
            &[unsafe { model_ref(model) }],
            &unsafe { &*sched }.inner,
            &cfg,
        )
        .map_err(fail)?;
        write_out(&sols[0], out);
        Ok(())
    })
}

/// Bandwidth-extends the lowpassed observation `y` by imputation. The FIR
/// lowpass is designed from `cutoff_hz`, `sample_rate` and odd `taps`.
///
/// # Safety
/// `y` and `out` must hold `len` doubles; the handles must be live.
#[no_mangle]
pub unsafe extern "C" fn wp_bwe(
    model: *const WpModel,
    sched: *const WpSchedule,
    y: *const f64,
    len: usize,
    cutoff_hz: f64,
    sample_rate: f64,
    taps: usize,
    seed: u64,
    out: *mut f64,
) -> WpStatus {
    require_non_null!(model, sched, y, out);
    guarded(|| {
        let lpf = Lowpass::design(cutoff_hz, sample_rate, taps).map_err(fail)?;
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Imputation,
            seed,
            ..Default::default()
        };
        let (sols, _) = solve_inverse(
            &TaskSpec::Bwe { lpf: &lpf },
            unsafe { slice_arg(y, len) },
            &[unsafe { model_ref(model) }],
            &unsafe { &*sched }.inner,
            &cfg,
        )
        .map_err(fail)?;
        write_out(&sols[0], out);
        Ok(())
    })
}

/// Inverts a log-mel spectrogram. `mel_values` holds `n_mels * n_frames`
/// doubles in mel-major order; the waveform written to `out` has `out_len`
/// samples, which must analyse to exactly `n_frames` frames.
///
/// # Safety
/// `mel_values` must hold `n_mels * n_frames` doubles and `out` must hold
/// `out_len` doubles; the handles must be live.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn wp_vocode(
    model: *const WpModel,
    sched: *const WpSchedule,
    mel_values: *const f64,
    n_mels: usize,
    n_frames: usize,
    n_fft: usize,
    hop: usize,
    sample_rate: f64,
    fmin: f64,
    fmax: f64,
    out_len: usize,
    xi0: f64,
    seed: u64,
    out: *mut f64,
) -> WpStatus {
    require_non_null!(model, sched, mel_values, out);
    guarded(|| {
        let mel = Mel::new(MelConfig {
            stft: StftConfig {
                n_fft,
                hop,
                center: true,
            },
            sample_rate,
            n_mels,
            fmin,
            fmax,
            floor: 1e-5,
        })
        .map_err(fail)?;
        let n = n_mels.checked_mul(n_frames).ok_or_else(|| {
            set_error("mel tensor size overflows");
            WpStatus::ConfigError
        })?;
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Reconstruction,
            xi0,
            seed,
            ..Default::default()
        };
        let (sols, _) = solve_inverse(
            &TaskSpec::Vocode { mel: &mel, out_len },
            unsafe { slice_arg(mel_values, n) },
            &[unsafe { model_ref(model) }],
            &unsafe { &*sched }.inner,
            &cfg,
        )
        .map_err(fail)?;
        write_out(&sols[0], out);
        Ok(())
    })
}

/// Separates the two-source mixture `y`. `model2` may be null to reuse
/// `model1` for both sources; `out1`/`out2` each receive `len` samples.
///
/// # Safety
/// `y`, `out1` and `out2` must hold `len` doubles; the handles must be live.
#[no_mangle]
pub unsafe extern "C" fn wp_separate(
    model1: *const WpModel,
    model2: *const WpModel,
    sched: *const WpSchedule,
    y: *const f64,
    len: usize,
    seed: u64,
    out1: *mut f64,
    out2: *mut f64,
) -> WpStatus {
    require_non_null!(model1, sched, y, out1, out2);
    guarded(|| {
        let m1 = unsafe { model_ref(model1) };
        let mut models: Vec<&dyn ScoreModel> = vec![m1];
        if !model2.is_null() {
            models.push(unsafe { model_ref(model2) });
        }
        let cfg = GuidanceConfig {
            mode: GuidanceMode::Separation,
            seed,
            ..Default::default()
        };
        let (sols, _) = solve_inverse(
            &TaskSpec::Separate,
            unsafe { slice_arg(y, len) },
            &models,
            &unsafe { &*sched }.inner,
            &cfg,
        )
        .map_err(fail)?;
        write_out(&sols[0], out1);
        write_out(&sols[1], out2);
        Ok(())
    })
}

/// Scale-invariant SNR of `estimate` against `reference`, in dB.
///
/// # Safety
/// `reference` and `estimate` must hold `len` doubles; `out_db` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wp_si_snr(
    reference: *const f64,
    estimate: *const f64,
    len: usize,
    out_db: *mut f64,
) -> WpStatus {
    require_non_null!(reference, estimate, out_db);
    guarded(|| {
        let v = si_snr(unsafe { slice_arg(reference, len) }, unsafe {
            slice_arg(estimate, len)
        })
        .map_err(fail)?;
        unsafe { *out_db = v };
        Ok(())
    })
}
