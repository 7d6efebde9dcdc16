//! Exercises the C ABI from the Rust side: status codes, the thread-local
//! error message, handle lifecycles, and determinism of the sampling entry
//! points. Everything runs on tiny schedules so the whole file is fast.

use std::ffi::{c_char, CStr};
use std::ptr;

use waveprior_ffi::*;

fn last_msg() -> String {
    unsafe { CStr::from_ptr(wp_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn schedule(steps: usize) -> *mut WpSchedule {
    let mut s: *mut WpSchedule = ptr::null_mut();
    let st = unsafe { wp_schedule_linear(steps, 1e-4, 0.02, &mut s) };
    assert_eq!(st, WpStatus::Ok);
    assert!(!s.is_null());
    s
}

fn ar1(dim: usize, rho: f64) -> *mut WpModel {
    let mut m: *mut WpModel = ptr::null_mut();
    let st = unsafe { wp_model_gaussian_ar1(dim, rho, &mut m) };
    assert_eq!(st, WpStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn version_is_a_static_c_string() {
    let v = unsafe { CStr::from_ptr(wp_version()) };
    assert_eq!(v.to_str().unwrap(), "0.1.0");
}

#[test]
fn error_message_starts_empty_and_tracks_failures() {
    assert_eq!(last_msg(), "");
    let mut s: *mut WpSchedule = ptr::null_mut();
    let st = unsafe { wp_schedule_linear(0, 1e-4, 0.02, &mut s) };
    assert_eq!(st, WpStatus::ConfigError);
    assert!(s.is_null());
    assert!(!last_msg().is_empty());
}

#[test]
fn schedule_handle_round_trip() {
    let s = schedule(200);
    assert_eq!(unsafe { wp_schedule_steps(s) }, 200);

    let mut ab = f64::NAN;
    assert_eq!(
        unsafe { wp_schedule_alpha_bar(s, 0, &mut ab) },
        WpStatus::Ok
    );
    assert_eq!(ab, 1.0);
    assert_eq!(
        unsafe { wp_schedule_alpha_bar(s, 200, &mut ab) },
        WpStatus::Ok
    );
    assert!((ab - 0.1321827542506178).abs() < 1e-12);

    let st = unsafe { wp_schedule_alpha_bar(s, 201, &mut ab) };
    assert_eq!(st, WpStatus::ConfigError);
    assert!(last_msg().contains("201"));
    unsafe { wp_schedule_free(s) };
}

#[test]
fn null_arguments_are_rejected_with_named_pointer() {
    let st = unsafe { wp_schedule_linear(10, 1e-4, 0.02, ptr::null_mut()) };
    assert_eq!(st, WpStatus::NullArg);
    assert!(last_msg().contains("out"));

    let s = schedule(10);
    let mut buf = [0.0; 4];
    let st = unsafe { wp_sample_prior(ptr::null(), s, 4, 1, buf.as_mut_ptr()) };
    assert_eq!(st, WpStatus::NullArg);
    assert!(last_msg().contains("model"));
    unsafe { wp_schedule_free(s) };
}

#[test]
fn free_accepts_null_handles() {
    unsafe {
        wp_schedule_free(ptr::null_mut());
        wp_model_free(ptr::null_mut());
    }
}

#[test]
fn ar1_sampling_is_seed_deterministic() {
    let s = schedule(20);
    let m = ar1(32, 0.7);
    let mut a = [0.0; 32];
    let mut b = [0.0; 32];
    let mut c = [0.0; 32];
    unsafe {
        assert_eq!(wp_sample_prior(m, s, 32, 7, a.as_mut_ptr()), WpStatus::Ok);
        assert_eq!(wp_sample_prior(m, s, 32, 7, b.as_mut_ptr()), WpStatus::Ok);
        assert_eq!(wp_sample_prior(m, s, 32, 8, c.as_mut_ptr()), WpStatus::Ok);
    }
    assert_eq!(a, b, "same seed must reproduce the sample bit-for-bit");
    assert_ne!(a, c, "different seeds must give different samples");
    assert!(a.iter().all(|v| v.is_finite()));
    unsafe {
        wp_model_free(m);
        wp_schedule_free(s);
    }
}

#[test]
fn gaussian_model_rejects_bad_correlation() {
    let mut m: *mut WpModel = ptr::null_mut();
    let st = unsafe { wp_model_gaussian_ar1(16, 1.5, &mut m) };
    assert_eq!(st, WpStatus::ConfigError);
    assert!(m.is_null());
}

#[test]
fn declip_output_is_consistent_with_observation() {
    let n = 64;
    let x: Vec<f64> = (0..n)
        .map(|i| 0.9 * (2.0 * std::f64::consts::PI * 5.0 * i as f64 / n as f64).sin())
        .collect();
    let c = 0.5;
    let y: Vec<f64> = x.iter().map(|v| v.clamp(-c, c)).collect();

    let s = schedule(20);
    let m = ar1(n, 0.9);
    let mut out = vec![0.0; n];
    let st = unsafe { wp_declip(m, s, y.as_ptr(), n, c, 10.0, 3, out.as_mut_ptr()) };
    assert_eq!(st, WpStatus::Ok);
    // The solver projects onto the clip-consistent set, so re-clipping the
    // restored signal must reproduce the observation exactly.
    for i in 0..n {
        assert_eq!(out[i].clamp(-c, c), y[i]);
    }
    unsafe {
        wp_model_free(m);
        wp_schedule_free(s);
    }
}

#[test]
fn bwe_smoke() {
    let n = 64;
    let y: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 3.0 * i as f64 / n as f64).sin())
        .collect();
    let s = schedule(20);
    let m = ar1(n, 0.9);
    let mut out = vec![0.0; n];
    let st = unsafe { wp_bwe(m, s, y.as_ptr(), n, 1000.0, 4000.0, 31, 5, out.as_mut_ptr()) };
    assert_eq!(st, WpStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite()));
    unsafe {
        wp_model_free(m);
        wp_schedule_free(s);
    }
}

#[test]
fn separate_shares_model_when_second_is_null() {
    let n = 48;
    let s = schedule(20);
    let m = ar1(n, 0.8);
    let mut x1 = vec![0.0; n];
    let mut x2 = vec![0.0; n];
    unsafe {
        assert_eq!(wp_sample_prior(m, s, n, 21, x1.as_mut_ptr()), WpStatus::Ok);
        assert_eq!(wp_sample_prior(m, s, n, 22, x2.as_mut_ptr()), WpStatus::Ok);
    }
    let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();

    let mut o1 = vec![0.0; n];
    let mut o2 = vec![0.0; n];
    let st = unsafe {
        wp_separate(
            m,
            ptr::null(),
            s,
            y.as_ptr(),
            n,
            9,
            o1.as_mut_ptr(),
            o2.as_mut_ptr(),
        )
    };
    assert_eq!(st, WpStatus::Ok);
    assert!(o1.iter().chain(&o2).all(|v| v.is_finite()));
    assert_ne!(o1, o2);
    unsafe {
        wp_model_free(m);
        wp_schedule_free(s);
    }
}

#[test]
fn vocode_round_trip_and_frame_mismatch() {
    use waveprior::operators::{Mel, MelConfig, Operator};
    use waveprior::signal::StftConfig;

    let out_len = 256;
    let (n_fft, hop, n_mels) = (64, 16, 8);
    let mel = Mel::new(MelConfig {
        stft: StftConfig {
            n_fft,
            hop,
            center: true,
        },
        sample_rate: 4000.0,
        n_mels,
        fmin: 0.0,
        fmax: 1900.0,
        floor: 1e-5,
    })
    .unwrap();
    let n_frames = mel.n_frames(out_len);
    let x: Vec<f64> = (0..out_len)
        .map(|i| (2.0 * std::f64::consts::PI * 200.0 * i as f64 / 4000.0).sin())
        .collect();
    let y = mel.apply(&x);
    assert_eq!(y.len(), n_mels * n_frames);

    let s = schedule(20);
    let m = ar1(out_len, 0.9);
    let mut out = vec![0.0; out_len];
    let st = unsafe {
        wp_vocode(
            m,
            s,
            y.as_ptr(),
            n_mels,
            n_frames,
            n_fft,
            hop,
            4000.0,
            0.0,
            1900.0,
            out_len,
            10.0,
            4,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(st, WpStatus::Ok, "{}", last_msg());
    assert!(out.iter().all(|v| v.is_finite()));

    // Wrong frame count for out_len must be refused before any sampling.
    let short = vec![0.0; n_mels * 5];
    let st = unsafe {
        wp_vocode(
            m,
            s,
            short.as_ptr(),
            n_mels,
            5,
            n_fft,
            hop,
            4000.0,
            0.0,
            1900.0,
            out_len,
            10.0,
            4,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(st, WpStatus::ConfigError);
    unsafe {
        wp_model_free(m);
        wp_schedule_free(s);
    }
}

#[test]
fn checkpoint_errors_map_to_statuses() {
    let mut m: *mut WpModel = ptr::null_mut();
    let mut s: *mut WpSchedule = ptr::null_mut();

    let missing = b"/nonexistent/waveprior-abi-test.wpck\0";
    let st = unsafe { wp_model_load_checkpoint(missing.as_ptr() as *const c_char, &mut m, &mut s) };
    assert_eq!(st, WpStatus::IoError);
    assert!(!last_msg().is_empty());
    assert!(m.is_null() && s.is_null());

    let bad_utf8 = [0xFFu8 as c_char, 0];
    let st = unsafe { wp_model_load_checkpoint(bad_utf8.as_ptr(), &mut m, &mut s) };
    assert_eq!(st, WpStatus::ConfigError);
    assert!(last_msg().contains("UTF-8"));
}

#[test]
fn si_snr_matches_core_metric() {
    let reference: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let estimate: Vec<f64> = reference.iter().map(|v| 0.8 * v + 0.05).collect();
    let mut db = f64::NAN;
    let st = unsafe { wp_si_snr(reference.as_ptr(), estimate.as_ptr(), 32, &mut db) };
    assert_eq!(st, WpStatus::Ok);
    assert_eq!(
        db,
        waveprior::metrics::si_snr(&reference, &estimate).unwrap()
    );
}

#[test]
fn checkpoint_round_trip_through_abi() {
    use waveprior::schedule::NoiseSchedule;
    use waveprior::score::denoiser::DenoiserConfig;
    use waveprior::score::{checkpoint, ToyDenoiser};

    let dir = std::env::temp_dir().join(format!("wp-abi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tiny.wpck");
    let model = ToyDenoiser::new(DenoiserConfig {
        channels: 4,
        blocks: 2,
        cond_dim: 8,
        dilation_cycle: vec![1, 2],
        seed: 1,
    })
    .unwrap();
    let sched = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
    checkpoint::save(&path, &model, &sched).unwrap();

    let c_path = std::ffi::CString::new(path.to_str().unwrap()).unwrap();
    let mut m: *mut WpModel = ptr::null_mut();
    let mut s: *mut WpSchedule = ptr::null_mut();
    let st = unsafe { wp_model_load_checkpoint(c_path.as_ptr(), &mut m, &mut s) };
    assert_eq!(st, WpStatus::Ok, "{}", last_msg());
    assert_eq!(unsafe { wp_schedule_steps(s) }, 20);

    let mut a = [0.0; 16];
    let mut b = [0.0; 16];
    unsafe {
        assert_eq!(wp_sample_prior(m, s, 16, 2, a.as_mut_ptr()), WpStatus::Ok);
        assert_eq!(wp_sample_prior(m, s, 16, 2, b.as_mut_ptr()), WpStatus::Ok);
        wp_model_free(m);
        wp_schedule_free(s);
    }
    assert_eq!(a, b);
    std::fs::remove_dir_all(&dir).ok();
}
