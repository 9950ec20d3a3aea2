use std::ffi::{CStr, CString};
use std::ptr;

use rppg_ffi::*;

fn sine(bpm: f64, fs: f64, secs: f64) -> Vec<f64> {
    let n = (fs * secs) as usize;
    (0..n).map(|i| (2.0 * std::f64::consts::PI * bpm / 60.0 * i as f64 / fs).sin()).collect()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(rppg_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn psd_handle_lifecycle() {
    let x = sine(72.0, 30.0, 20.0);
    let mut psd = ptr::null_mut();
    unsafe {
        assert_eq!(rppg_psd_compute(x.as_ptr(), x.len(), 30.0, 1.0 / 600.0, &mut psd), RppgStatus::Ok);
        let n = rppg_psd_len(psd);
        assert!(n > 0);
        let (mut f, mut p) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(rppg_psd_copy(psd, f.as_mut_ptr(), p.as_mut_ptr(), n), RppgStatus::Ok);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(f[0] >= 0.66 && f[n - 1] <= 4.16 + 1e-9);
        assert_eq!(rppg_psd_copy(psd, f.as_mut_ptr(), ptr::null_mut(), n - 1), RppgStatus::BufferTooSmall);
        let mut hr = 0.0;
        assert_eq!(rppg_psd_hr(psd, &mut hr), RppgStatus::Ok);
        assert!((hr - 72.0).abs() <= 0.1);
        let mut ipr = -1.0;
        assert_eq!(rppg_psd_ipr(psd, 72.0, 0.0, &mut ipr), RppgStatus::Ok);
        assert!((0.0..0.2).contains(&ipr));
        rppg_psd_free(psd);
        rppg_psd_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_status_and_message() {
    let flat = vec![0.5; 300];
    let mut psd = ptr::null_mut();
    unsafe {
        let s = rppg_psd_compute(flat.as_ptr(), flat.len(), 30.0, 1.0 / 60.0, &mut psd);
        assert_eq!(s, RppgStatus::ConstantSignal);
        assert!(psd.is_null());
        assert!(last_error().starts_with("ConstantSignal"));
        assert_eq!(rppg_psd_compute(ptr::null(), 10, 30.0, 1.0 / 60.0, &mut psd), RppgStatus::NullPointer);
        let mut hr = 0.0;
        assert_eq!(rppg_psd_hr(ptr::null(), &mut hr), RppgStatus::NullPointer);
        assert_eq!(rppg_estimate_hr(flat.as_ptr(), 0, 30.0, &mut hr), RppgStatus::TooShort);
    }
}

#[test]
fn scalar_helpers() {
    let x = sine(90.0, 30.0, 30.0);
    let mut hr = 0.0;
    let mut agr = RppgAgreement::default();
    unsafe {
        assert_eq!(rppg_estimate_hr(x.as_ptr(), x.len(), 30.0, &mut hr), RppgStatus::Ok);
        assert!((hr - 90.0).abs() <= 0.1);
        let (p, t) = ([60.0, 70.0, 80.0], [61.0, 69.0, 82.0]);
        assert_eq!(rppg_agreement_metrics(p.as_ptr(), t.as_ptr(), 3, &mut agr), RppgStatus::Ok);
        assert!((agr.mae - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(agr.has_r, 1);
        let c = [70.0, 70.0, 70.0];
        assert_eq!(rppg_agreement_metrics(c.as_ptr(), t.as_ptr(), 3, &mut agr), RppgStatus::Ok);
        assert_eq!(agr.has_r, 0);
        assert!(agr.r.is_nan());
    }
}

#[test]
fn hrv_of_a_breathing_modulated_pulse() {
    // Heart rate swings by 6 bpm at a 0.25 Hz breathing rate.
    let fs = 30.0;
    let mut phase = 0.0;
    let x: Vec<f64> = (0..(fs * 60.0) as usize)
        .map(|i| {
            let t = i as f64 / fs;
            phase += 2.0 * std::f64::consts::PI * (75.0 + 6.0 * (2.0 * std::f64::consts::PI * 0.25 * t).sin()) / 60.0 / fs;
            phase.sin()
        })
        .collect();
    let mut h = RppgHrv::default();
    unsafe {
        assert_eq!(rppg_hrv_metrics(x.as_ptr(), x.len(), fs, &mut h), RppgStatus::Ok, "{}", last_error());
    }
    assert_eq!(h.zero_hf, 0);
    assert!((h.lf_nu + h.hf_nu - 1.0).abs() < 1e-9);
    assert!(h.hf_nu > h.lf_nu);
    assert!((h.rf_hz - 0.25).abs() < 0.03, "{}", h.rf_hz);
    let steady = sine(75.0, 30.0, 60.0);
    unsafe {
        assert_eq!(rppg_hrv_metrics(steady.as_ptr(), steady.len(), 30.0, &mut h), RppgStatus::ZeroHf);
    }
    let short = sine(75.0, 30.0, 3.0);
    unsafe {
        assert_eq!(rppg_hrv_metrics(short.as_ptr(), short.len(), 30.0, &mut h), RppgStatus::TooFewPeaks);
    }
}

#[test]
fn contrastive_loss_of_handles() {
    let mk = |bpm: f64| {
        let x = sine(bpm, 30.0, 10.0);
        let mut p = ptr::null_mut();
        assert_eq!(unsafe { rppg_psd_compute(x.as_ptr(), x.len(), 30.0, 1.0 / 60.0, &mut p) }, RppgStatus::Ok);
        p as *const RppgPsd
    };
    let a = [mk(60.0), mk(60.0)];
    let b = [mk(120.0), mk(120.0)];
    let mut l = RppgLoss::default();
    unsafe {
        assert_eq!(rppg_contrastive_loss(a.as_ptr(), 2, b.as_ptr(), 2, &mut l), RppgStatus::Ok);
        assert!(l.positive.abs() < 1e-12);
        assert!(l.negative < -0.1 && l.negative >= -2.0, "{}", l.negative);
        let mut same = RppgLoss::default();
        assert_eq!(rppg_contrastive_loss(a.as_ptr(), 2, a.as_ptr(), 2, &mut same), RppgStatus::Ok);
        assert!(same.negative.abs() < 1e-12);
        assert!((l.total - l.positive - l.negative).abs() < 1e-12);
        assert_eq!(rppg_contrastive_loss(a.as_ptr(), 1, b.as_ptr(), 2, &mut l), RppgStatus::LengthMismatch);
        assert_eq!(rppg_contrastive_loss(a.as_ptr(), 1, b.as_ptr(), 1, &mut l), RppgStatus::SingletonSet);
        for p in a.into_iter().chain(b) {
            rppg_psd_free(p as *mut _);
        }
    }
}

#[test]
fn model_round_trip_and_inference() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(rppg_model_new(2, 4, 30.0, 7, &mut m), RppgStatus::Ok);
        let frames = rppg_model_min_frames(m);
        assert!(frames > 0);
        let size = rppg_input_size();
        let clip: Vec<f32> = (0..frames * size * size * 3).map(|i| ((i * 7919) % 251) as f32 / 250.0).collect();
        let mut a = vec![0.0; frames];
        assert_eq!(rppg_model_infer(m, clip.as_ptr(), frames, 30.0, a.as_mut_ptr(), frames), RppgStatus::Ok);
        assert_eq!(rppg_model_save(m, path.as_ptr()), RppgStatus::Ok);
        rppg_model_free(m);

        let mut loaded = ptr::null_mut();
        assert_eq!(rppg_model_load(path.as_ptr(), &mut loaded), RppgStatus::Ok);
        let mut b = vec![0.0; frames];
        assert_eq!(rppg_model_infer(loaded, clip.as_ptr(), frames, 30.0, b.as_mut_ptr(), frames), RppgStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(
            rppg_model_infer(loaded, clip.as_ptr(), frames, 30.0, b.as_mut_ptr(), frames - 1),
            RppgStatus::BufferTooSmall
        );
        rppg_model_free(loaded);

        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(rppg_model_load(missing.as_ptr(), &mut loaded), RppgStatus::Io);
        assert!(loaded.is_null());
        assert_eq!(rppg_model_new(3, 4, 30.0, 0, &mut loaded), RppgStatus::InvalidArgument);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(rppg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
