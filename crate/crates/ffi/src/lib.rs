//! C ABI over `rppg-core`.
//!
//! Every fallible function returns an [`RppgStatus`]; on failure the message
//! is available from [`rppg_last_error`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_load`/`*_compute` and released with
//! the matching `*_free`. Panics never cross the boundary: they are reported
//! as `RPPG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rppg_core::eval::infer_rppg;
use rppg_core::ingest::Clip;
use rppg_core::losses::{total_loss, PsdSet};
use rppg_core::model::{checkpoint, Encoder, ModelConfig};
use rppg_core::signal::{
    agreement_metrics, compute_psd, detect_peaks, estimate_hr, hrv_metrics, irrelevant_power_ratio, BandPsd, Waveform,
    IPR_HALF_WINDOW_HZ, TEST_RESOLUTION_HZ,
};
use rppg_core::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RppgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConstantSignal = 3,
    TooShort = 4,
    OutOfBand = 5,
    NoPeaks = 6,
    TooFewPeaks = 7,
    ZeroHf = 8,
    LengthMismatch = 9,
    Empty = 10,
    BlockTooShort = 11,
    GridMismatch = 12,
    SingletonSet = 13,
    BadShape = 14,
    CorruptCheckpoint = 15,
    BufferTooSmall = 16,
    Io = 17,
    Other = 18,
    Panic = 19,
}

impl From<&Error> for RppgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ConstantSignal => Self::ConstantSignal,
            Error::TooShort { .. } => Self::TooShort,
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::OutOfBand { .. } => Self::OutOfBand,
            Error::NoPeaks { .. } => Self::NoPeaks,
            Error::TooFewPeaks { .. } => Self::TooFewPeaks,
            Error::ZeroHf => Self::ZeroHf,
            Error::LengthMismatch { .. } => Self::LengthMismatch,
            Error::Empty => Self::Empty,
            Error::BlockTooShort { .. } => Self::BlockTooShort,
            Error::GridMismatch => Self::GridMismatch,
            Error::SingletonSet { .. } => Self::SingletonSet,
            Error::BadShape(_) => Self::BadShape,
            Error::CorruptCheckpoint(_) => Self::CorruptCheckpoint,
            Error::Io(_) => Self::Io,
            _ => Self::Other,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: RppgStatus, msg: impl Into<String>) -> RppgStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), RppgStatus>) -> RppgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RppgStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(RppgStatus::Panic, "internal panic"),
    }
}

fn core(e: Error) -> RppgStatus {
    let s = RppgStatus::from(&e);
    fail(s, format!("{}: {e}", e.kind()))
}

fn null() -> RppgStatus {
    fail(RppgStatus::NullPointer, "null pointer argument")
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Result<&'a [T], RppgStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, RppgStatus> {
    p.as_mut().ok_or_else(null)
}

unsafe fn to_path<'a>(p: *const c_char) -> Result<&'a Path, RppgStatus> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(RppgStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rppg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rppg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque band-limited power spectrum.
pub struct RppgPsd(BandPsd);

/// Opaque trained encoder.
pub struct RppgModel(Encoder);

/// Band-limited, unit-sum PSD of a trace at the given grid resolution in Hz.
///
/// # Safety
/// `samples` must point to `n` doubles; `out_psd` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_psd_compute(
    samples: *const f64,
    n: usize,
    fs: f64,
    resolution_hz: f64,
    out_psd: *mut *mut RppgPsd,
) -> RppgStatus {
    guard(|| {
        let out_psd = out(out_psd)?;
        *out_psd = ptr::null_mut();
        let w = Waveform::new(slice(samples, n)?.to_vec(), fs).map_err(core)?;
        let psd = compute_psd(&w, resolution_hz).map_err(core)?;
        *out_psd = Box::into_raw(Box::new(RppgPsd(psd)));
        Ok(())
    })
}

/// Releases a PSD handle. Null is ignored.
///
/// # Safety
/// `psd` must come from [`rppg_psd_compute`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rppg_psd_free(psd: *mut RppgPsd) {
    if !psd.is_null() {
        drop(Box::from_raw(psd));
    }
}

/// Number of frequency bins, 0 for a null handle.
///
/// # Safety
/// `psd` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rppg_psd_len(psd: *const RppgPsd) -> usize {
    psd.as_ref().map_or(0, |p| p.0.len())
}

/// Copies bin frequencies (Hz) and powers into caller buffers of `capacity`
/// elements. Either buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rppg_psd_copy(
    psd: *const RppgPsd,
    freqs_out: *mut f64,
    power_out: *mut f64,
    capacity: usize,
) -> RppgStatus {
    guard(|| {
        let p = &psd.as_ref().ok_or_else(null)?.0;
        if capacity < p.len() {
            return Err(fail(RppgStatus::BufferTooSmall, format!("need {} elements", p.len())));
        }
        if !freqs_out.is_null() {
            ptr::copy_nonoverlapping(p.freqs().as_ptr(), freqs_out, p.len());
        }
        if !power_out.is_null() {
            ptr::copy_nonoverlapping(p.power().as_ptr(), power_out, p.len());
        }
        Ok(())
    })
}

/// Heart rate in bpm at the spectral peak.
///
/// # Safety
/// `psd` must be a live handle; `out_bpm` writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_psd_hr(psd: *const RppgPsd, out_bpm: *mut f64) -> RppgStatus {
    guard(|| {
        let p = &psd.as_ref().ok_or_else(null)?.0;
        *out(out_bpm)? = estimate_hr(p);
        Ok(())
    })
}

/// Fraction of band power farther than `half_window_hz` from the reference
/// heart rate. A non-positive half window selects the default.
///
/// # Safety
/// `psd` must be a live handle; `out_ipr` writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_psd_ipr(
    psd: *const RppgPsd,
    hr_true_bpm: f64,
    half_window_hz: f64,
    out_ipr: *mut f64,
) -> RppgStatus {
    guard(|| {
        let p = &psd.as_ref().ok_or_else(null)?.0;
        let hw = if half_window_hz > 0.0 { half_window_hz } else { IPR_HALF_WINDOW_HZ };
        *out(out_ipr)? = irrelevant_power_ratio(p, hr_true_bpm, hw).map_err(core)?;
        Ok(())
    })
}

/// Heart rate of a trace at test resolution.
///
/// # Safety
/// `samples` must point to `n` doubles; `out_bpm` writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_estimate_hr(samples: *const f64, n: usize, fs: f64, out_bpm: *mut f64) -> RppgStatus {
    guard(|| {
        let out_bpm = out(out_bpm)?;
        let w = Waveform::new(slice(samples, n)?.to_vec(), fs).map_err(core)?;
        *out_bpm = estimate_hr(&compute_psd(&w, TEST_RESOLUTION_HZ).map_err(core)?);
        Ok(())
    })
}

/// Contrastive loss terms between two PSD sets from different videos.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RppgLoss {
    pub total: f64,
    pub positive: f64,
    pub negative: f64,
}

unsafe fn psd_set(handles: *const *const RppgPsd, n: usize, id: &str) -> Result<PsdSet, RppgStatus> {
    let hs = slice(handles, n)?;
    let psds = hs
        .iter()
        .map(|h| h.as_ref().map(|p| p.0.clone()).ok_or_else(null))
        .collect::<Result<Vec<_>, _>>()?;
    PsdSet::new(psds, id).map_err(core)
}

/// Contrastive loss of two PSD sets; set `a` and set `b` are treated as
/// coming from different videos.
///
/// # Safety
/// `a` and `b` must point to `na`/`nb` live handles; `out_loss` writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_contrastive_loss(
    a: *const *const RppgPsd,
    na: usize,
    b: *const *const RppgPsd,
    nb: usize,
    out_loss: *mut RppgLoss,
) -> RppgStatus {
    guard(|| {
        let out_loss = out(out_loss)?;
        let l = total_loss(&psd_set(a, na, "a")?, &psd_set(b, nb, "b")?).map_err(core)?;
        *out_loss = RppgLoss { total: l.total, positive: l.positive, negative: l.negative };
        Ok(())
    })
}

/// Spectral HRV features. `rf_hz` is NaN and `lf_hf` infinite when
/// `zero_hf` is nonzero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RppgHrv {
    pub rf_hz: f64,
    pub lf_nu: f64,
    pub hf_nu: f64,
    pub lf_hf: f64,
    pub zero_hf: i32,
}

/// Peak detection followed by HRV analysis of a trace.
///
/// # Safety
/// `samples` must point to `n` doubles; `out_hrv` writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_hrv_metrics(samples: *const f64, n: usize, fs: f64, out_hrv: *mut RppgHrv) -> RppgStatus {
    guard(|| {
        let out_hrv = out(out_hrv)?;
        let w = Waveform::new(slice(samples, n)?.to_vec(), fs).map_err(core)?;
        let r = detect_peaks(&w).and_then(|p| hrv_metrics(&p, fs)).map_err(core)?;
        *out_hrv = RppgHrv { rf_hz: r.rf_hz, lf_nu: r.lf_nu, hf_nu: r.hf_nu, lf_hf: r.lf_hf, zero_hf: r.zero_hf as i32 };
        Ok(())
    })
}

/// MAE, RMSE and Pearson R. `has_r` is zero (and `r` NaN) when either
/// series is constant.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RppgAgreement {
    pub mae: f64,
    pub rmse: f64,
    pub r: f64,
    pub has_r: i32,
}

/// Agreement between predicted and reference heart rates.
///
/// # Safety
/// `pred` and `truth` must point to `n` doubles; `out_agreement` writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_agreement_metrics(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out_agreement: *mut RppgAgreement,
) -> RppgStatus {
    guard(|| {
        let o = out(out_agreement)?;
        let a = agreement_metrics(slice(pred, n)?, slice(truth, n)?).map_err(core)?;
        *o = RppgAgreement { mae: a.mae, rmse: a.rmse, r: a.r.unwrap_or(f64::NAN), has_r: a.r.is_some() as i32 };
        Ok(())
    })
}

/// Freshly initialized encoder.
///
/// # Safety
/// `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_model_new(
    s_out: usize,
    base_channels: usize,
    frame_rate: f64,
    seed: u64,
    out_model: *mut *mut RppgModel,
) -> RppgStatus {
    guard(|| {
        let out_model = out(out_model)?;
        *out_model = ptr::null_mut();
        let m = Encoder::new(ModelConfig { s_out, base_channels, frame_rate }, seed).map_err(core)?;
        *out_model = Box::into_raw(Box::new(RppgModel(m)));
        Ok(())
    })
}

/// Loads a checkpoint written by the training pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn rppg_model_load(path: *const c_char, out_model: *mut *mut RppgModel) -> RppgStatus {
    guard(|| {
        let out_model = out(out_model)?;
        *out_model = ptr::null_mut();
        let ck = checkpoint::load(to_path(path)?).map_err(core)?;
        *out_model = Box::into_raw(Box::new(RppgModel(ck.model)));
        Ok(())
    })
}

/// Writes the model as a checkpoint.
///
/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rppg_model_save(model: *const RppgModel, path: *const c_char) -> RppgStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(null)?.0;
        checkpoint::save(to_path(path)?, m, &[]).map_err(core)?;
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rppg_model_free(model: *mut RppgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fewest frames the encoder accepts, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rppg_model_min_frames(model: *const RppgModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().min_frames())
}

/// Side length of the square input frames.
#[no_mangle]
pub extern "C" fn rppg_input_size() -> usize {
    rppg_core::model::INPUT_SIZE
}

/// rPPG trace of a preprocessed clip: `n_frames` frames of
/// `rppg_input_size()`² RGB pixels, row-major, channels last, values in
/// [0, 1]. Writes `n_frames` samples.
///
/// # Safety
/// `frames` must hold `n_frames * size * size * 3` floats and `out_trace`
/// `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn rppg_model_infer(
    model: *const RppgModel,
    frames: *const f32,
    n_frames: usize,
    fps: f64,
    out_trace: *mut f64,
    capacity: usize,
) -> RppgStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(null)?.0;
        if capacity < n_frames {
            return Err(fail(RppgStatus::BufferTooSmall, format!("need {n_frames} elements")));
        }
        if out_trace.is_null() {
            return Err(null());
        }
        let data = slice(frames, n_frames * Clip::FRAME_LEN)?.to_vec();
        let clip = Clip::new(n_frames, fps, data).map_err(core)?;
        let w = infer_rppg(&clip, m).map_err(core)?;
        ptr::copy_nonoverlapping(w.samples().as_ptr(), out_trace, w.len());
        Ok(())
    })
}
