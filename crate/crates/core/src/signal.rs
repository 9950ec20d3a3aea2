//! Band-limited spectral analysis of pulse signals.
//!
//! Everything here is a pure function of its inputs. The periodogram used at
//! test time is the same one that backs the training losses, so it also
//! exposes a vector-Jacobian product ([`Periodogram::backward`]).

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plausible human heart-rate band, 40 to 250 bpm.
pub const HR_BAND_HZ: (f64, f64) = (0.66, 4.16);
/// Grid spacing used inside the training loss (1 bpm).
pub const TRAIN_RESOLUTION_HZ: f64 = 1.0 / 60.0;
/// Grid spacing used for test-time HR readout (0.1 bpm).
pub const TEST_RESOLUTION_HZ: f64 = 1.0 / 600.0;
/// Default half-width of the in-band window used by the irrelevant power ratio.
pub const IPR_HALF_WINDOW_HZ: f64 = 0.05;

const MAX_RESOLUTION_HZ: f64 = 0.05;
const GRID_EPS: f64 = 1e-9;

/// A uniformly sampled 1-D signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    fs: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::TooShort { len: samples.len(), min: 2 });
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("waveform contains non-finite samples".into()));
        }
        Ok(Self { samples, fs })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Sub-signal over `start..end` sample indices.
    pub fn slice(&self, start: usize, end: usize) -> Result<Waveform> {
        if start > end || end > self.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} out of bounds for {} samples",
                self.samples.len()
            )));
        }
        Waveform::new(self.samples[start..end].to_vec(), self.fs)
    }

    pub fn is_constant(&self) -> bool {
        let first = self.samples[0];
        self.samples.iter().all(|&v| v == first)
    }
}

/// Unit-sum power spectrum restricted to the heart-rate band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPsd {
    freqs: Vec<f64>,
    power: Vec<f64>,
    resolution: f64,
}

impl BandPsd {
    /// Builds a PSD from an explicit uniform grid; `power` is rescaled to unit sum.
    pub fn new(freqs: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Empty);
        }
        if freqs.len() != power.len() {
            return Err(Error::LengthMismatch { left: freqs.len(), right: power.len() });
        }
        let (lo, hi) = HR_BAND_HZ;
        if freqs.iter().any(|&f| !(f >= lo - GRID_EPS && f <= hi + GRID_EPS)) {
            return Err(Error::InvalidArgument("PSD grid leaves the heart-rate band".into()));
        }
        let resolution = if freqs.len() > 1 { freqs[1] - freqs[0] } else { 0.0 };
        for pair in freqs.windows(2) {
            let step = pair[1] - pair[0];
            if step <= 0.0 || (step - resolution).abs() > 1e-6 * resolution.max(1e-12) + GRID_EPS {
                return Err(Error::InvalidArgument("PSD grid must be ascending and uniform".into()));
            }
        }
        if power.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::InvalidArgument("PSD power must be finite and nonnegative".into()));
        }
        let total: f64 = power.iter().sum();
        if total <= 0.0 {
            return Err(Error::ConstantSignal);
        }
        let power = power.into_iter().map(|p| p / total).collect();
        Ok(Self { freqs, power, resolution })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn same_grid(&self, other: &BandPsd) -> bool {
        self.freqs.len() == other.freqs.len()
            && self.freqs.iter().zip(&other.freqs).all(|(a, b)| (a - b).abs() <= GRID_EPS)
    }

    /// Frequency of the highest bin; the lowest frequency wins ties.
    pub fn peak_hz(&self) -> f64 {
        let mut best = 0;
        for (i, &p) in self.power.iter().enumerate() {
            if p > self.power[best] {
                best = i;
            }
        }
        self.freqs[best]
    }
}

/// Spectral intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PsdTape {
    spectrum: Vec<Complex64>,
    power: Vec<f64>,
    total: f64,
}

/// Zero-padded periodogram for a fixed signal length and sampling rate.
///
/// The FFT length is the smallest multiple of `round(fs / resolution)` that
/// holds the whole signal, so the grid is at least as fine as requested.
#[derive(Clone)]
pub struct Periodogram {
    len: usize,
    fs: f64,
    n_fft: usize,
    lo_bin: usize,
    hi_bin: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Periodogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Periodogram")
            .field("len", &self.len)
            .field("fs", &self.fs)
            .field("n_fft", &self.n_fft)
            .field("bins", &(self.lo_bin..=self.hi_bin))
            .finish()
    }
}

impl Periodogram {
    pub fn new(len: usize, fs: f64, resolution: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::TooShort { len, min: 2 });
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling rate must be positive, got {fs}")));
        }
        if !(resolution > 0.0 && resolution <= MAX_RESOLUTION_HZ) {
            return Err(Error::InvalidArgument(format!(
                "resolution must lie in (0, {MAX_RESOLUTION_HZ}] Hz, got {resolution}"
            )));
        }
        let (lo, hi) = HR_BAND_HZ;
        if fs / 2.0 < hi {
            return Err(Error::InvalidArgument(format!(
                "sampling rate {fs} Hz cannot represent the {hi} Hz band edge"
            )));
        }
        let base = (fs / resolution).round().max(1.0) as usize;
        let n_fft = len.div_ceil(base) * base;
        let df = fs / n_fft as f64;
        let lo_bin = (lo / df - GRID_EPS).ceil() as usize;
        let hi_bin = (hi / df + GRID_EPS).floor() as usize;
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self { len, fs, n_fft, lo_bin, hi_bin, fft })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn resolution(&self) -> f64 {
        self.fs / self.n_fft as f64
    }

    pub fn num_bins(&self) -> usize {
        self.hi_bin - self.lo_bin + 1
    }

    pub fn freqs(&self) -> Vec<f64> {
        let df = self.resolution();
        (self.lo_bin..=self.hi_bin).map(|k| k as f64 * df).collect()
    }

    pub fn compute(&self, samples: &[f64]) -> Result<BandPsd> {
        self.compute_with_tape(samples).map(|(psd, _)| psd)
    }

    pub fn compute_with_tape(&self, samples: &[f64]) -> Result<(BandPsd, PsdTape)> {
        if samples.len() != self.len {
            return Err(Error::LengthMismatch { left: samples.len(), right: self.len });
        }
        if samples.iter().all(|&v| v == samples[0]) {
            return Err(Error::ConstantSignal);
        }
        let mean = samples.iter().sum::<f64>() / self.len as f64;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for (b, &x) in buf.iter_mut().zip(samples) {
            b.re = x - mean;
        }
        self.fft.process(&mut buf);
        let spectrum = buf[self.lo_bin..=self.hi_bin].to_vec();
        let power: Vec<f64> = spectrum.iter().map(|c| c.norm_sqr()).collect();
        let total: f64 = power.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::ConstantSignal);
        }
        let psd = BandPsd {
            freqs: self.freqs(),
            power: power.iter().map(|p| p / total).collect(),
            resolution: self.resolution(),
        };
        Ok((psd, PsdTape { spectrum, power, total }))
    }

    /// Pulls a gradient on the normalized band power back to the input samples.
    pub fn backward(&self, tape: &PsdTape, grad_power: &[f64]) -> Vec<f64> {
        assert_eq!(grad_power.len(), tape.power.len(), "gradient length must match the band");
        // Through the unit-sum normalization.
        let dot: f64 = grad_power.iter().zip(&tape.power).map(|(g, p)| g * p / tape.total).sum();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for (k, (g, x)) in grad_power.iter().zip(&tape.spectrum).enumerate() {
            let g_raw = (g - dot) / tape.total;
            buf[self.lo_bin + k] = x.conj() * g_raw;
        }
        // d|X_k|^2 / dy_n = 2 Re(conj(X_k) e^{-2 pi i k n / N}), summed over k by one forward FFT.
        self.fft.process(&mut buf);
        let mut grad: Vec<f64> = buf[..self.len].iter().map(|c| 2.0 * c.re).collect();
        let mean = grad.iter().sum::<f64>() / self.len as f64;
        grad.iter_mut().for_each(|g| *g -= mean);
        grad
    }
}

/// Mean-removed, zero-padded periodogram truncated to the heart-rate band.
pub fn compute_psd(w: &Waveform, resolution: f64) -> Result<BandPsd> {
    Periodogram::new(w.len(), w.fs(), resolution)?.compute(w.samples())
}

/// Heart rate in beats per minute at the highest PSD bin.
pub fn estimate_hr(psd: &BandPsd) -> f64 {
    60.0 * psd.peak_hz()
}

/// Share of band power lying more than `half_window` Hz away from the true HR frequency.
pub fn irrelevant_power_ratio(psd: &BandPsd, hr_true_bpm: f64, half_window: f64) -> Result<f64> {
    let f_true = hr_true_bpm / 60.0;
    let (lo, hi) = HR_BAND_HZ;
    if !(f_true >= lo - GRID_EPS && f_true <= hi + GRID_EPS) {
        return Err(Error::OutOfBand { hz: f_true });
    }
    if !(half_window >= 0.0) {
        return Err(Error::InvalidArgument("half window must be nonnegative".into()));
    }
    let total: f64 = psd.power.iter().sum();
    let inside: f64 = psd
        .freqs
        .iter()
        .zip(&psd.power)
        .filter(|(f, _)| (**f - f_true).abs() <= half_window + GRID_EPS)
        .map(|(_, p)| p)
        .sum();
    Ok((1.0 - inside / total).clamp(0.0, 1.0))
}

/// Zero-phase FFT band-pass with raised-cosine skirts of `taper` Hz.
pub fn bandpass(w: &Waveform, lo: f64, hi: f64, taper: f64) -> Waveform {
    let n = w.len();
    let mean = w.samples().iter().sum::<f64>() / n as f64;
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = w.samples().iter().map(|&x| Complex64::new(x - mean, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let gain = |f: f64| -> f64 {
        if f >= lo && f <= hi {
            1.0
        } else if taper > 0.0 && f < lo && f > lo - taper {
            0.5 * (1.0 + (std::f64::consts::PI * (lo - f) / taper).cos())
        } else if taper > 0.0 && f > hi && f < hi + taper {
            0.5 * (1.0 + (std::f64::consts::PI * (f - hi) / taper).cos())
        } else {
            0.0
        }
    };
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = if k <= n / 2 { k } else { n - k };
        *c *= gain(kk as f64 * w.fs() / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let samples = buf.iter().map(|c| c.re / n as f64).collect();
    Waveform { samples, fs: w.fs() }
}

/// Systolic peak indices (ascending).
///
/// The trace is band-passed to the heart-rate band, then local maxima (the
/// left sample of a two-sample plateau) are kept greedily by height with a minimum spacing of half the dominant
/// beat period.
pub fn detect_peaks(w: &Waveform) -> Result<Vec<usize>> {
    if w.is_constant() {
        return Err(Error::NoPeaks { found: 0 });
    }
    let (lo, hi) = HR_BAND_HZ;
    let filtered = bandpass(w, lo, hi, 0.1);
    let psd = match compute_psd(&filtered, TEST_RESOLUTION_HZ) {
        Ok(p) => p,
        Err(Error::ConstantSignal) => return Err(Error::NoPeaks { found: 0 }),
        Err(e) => return Err(e),
    };
    let hr = estimate_hr(&psd);
    let min_gap = 0.5 * (60.0 / hr) * w.fs();
    let x = filtered.samples();

    let mut candidates: Vec<usize> =
        (1..x.len().saturating_sub(1)).filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1]).collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| (k as f64 - c as f64).abs() >= min_gap) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    if kept.len() < 3 {
        return Err(Error::NoPeaks { found: kept.len() });
    }
    Ok(kept)
}

/// Frequency-domain HRV summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvReport {
    /// NaN when `zero_hf` is set.
    #[serde(with = "nonfinite")]
    pub rf_hz: f64,
    pub lf_nu: f64,
    pub hf_nu: f64,
    /// `+inf` when `zero_hf` is set.
    #[serde(with = "nonfinite")]
    pub lf_hf: f64,
    pub zero_hf: bool,
}

/// JSON has no NaN or infinity; those are written as the strings
/// `"NaN"`, `"inf"` and `"-inf"`.
mod nonfinite {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *v {
            v if v.is_nan() => s.serialize_str("NaN"),
            f64::INFINITY => s.serialize_str("inf"),
            f64::NEG_INFINITY => s.serialize_str("-inf"),
            v => s.serialize_f64(v),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

pub const HRV_MIN_PEAKS: usize = 8;
pub const HRV_RESAMPLE_HZ: f64 = 4.0;
pub const LF_BAND_HZ: (f64, f64) = (0.04, 0.15);
pub const HF_BAND_HZ: (f64, f64) = (0.15, 0.4);

/// Spectral HRV features from systolic peak positions.
///
/// Inter-beat intervals are linearly resampled at 4 Hz, mean-removed and
/// transformed with a zero-padded periodogram. LF and HF are reported in
/// normalized units over LF + HF.
pub fn hrv_metrics(peaks: &[usize], fs: f64) -> Result<HrvReport> {
    if peaks.len() < HRV_MIN_PEAKS {
        return Err(Error::TooFewPeaks { found: peaks.len(), required: HRV_MIN_PEAKS });
    }
    if !(fs > 0.0) {
        return Err(Error::InvalidArgument("sampling rate must be positive".into()));
    }
    if peaks.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument("peak indices must be strictly ascending".into()));
    }
    let times: Vec<f64> = peaks.iter().map(|&p| p as f64 / fs).collect();
    let ibi_t: Vec<f64> = times[1..].to_vec();
    let ibi: Vec<f64> = times.windows(2).map(|t| t[1] - t[0]).collect();

    let dt = 1.0 / HRV_RESAMPLE_HZ;
    let span = ibi_t[ibi_t.len() - 1] - ibi_t[0];
    let n = (span / dt).floor() as usize + 1;
    let mut series = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let t = ibi_t[0] + i as f64 * dt;
        while j + 2 < ibi_t.len() && ibi_t[j + 1] < t {
            j += 1;
        }
        let (t0, t1) = (ibi_t[j], ibi_t[j + 1]);
        let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        series.push(ibi[j] * (1.0 - a) + ibi[j + 1] * a);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let scale = mean * mean * n as f64;

    let n_fft = n.max(4096).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (b, v) in buf.iter_mut().zip(&series) {
        b.re = v - mean;
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    let df = HRV_RESAMPLE_HZ / n_fft as f64;

    let mut lf = 0.0;
    let mut hf = 0.0;
    let mut rf = (f64::NEG_INFINITY, HF_BAND_HZ.0);
    for (k, c) in buf.iter().enumerate().take(n_fft / 2 + 1) {
        let f = k as f64 * df;
        let p = c.norm_sqr();
        if f >= LF_BAND_HZ.0 && f < LF_BAND_HZ.1 {
            lf += p;
        } else if f >= HF_BAND_HZ.0 && f <= HF_BAND_HZ.1 {
            hf += p;
            if p > rf.0 {
                rf = (p, f);
            }
        }
    }
    // Power below this is rounding noise of the mean removal.
    let floor = 1e-20 * scale;
    if lf + hf <= floor {
        return Err(Error::ZeroHf);
    }
    if hf <= floor {
        return Ok(HrvReport { rf_hz: f64::NAN, lf_nu: 1.0, hf_nu: 0.0, lf_hf: f64::INFINITY, zero_hf: true });
    }
    let lf_nu = lf / (lf + hf);
    let hf_nu = hf / (lf + hf);
    Ok(HrvReport { rf_hz: rf.1, lf_nu, hf_nu, lf_hf: lf / hf, zero_hf: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub mae: f64,
    pub rmse: f64,
    /// Pearson correlation; `None` when either series is constant.
    pub r: Option<f64>,
}

/// MAE, RMSE and Pearson correlation between predicted and reference heart rates.
pub fn agreement_metrics(pred: &[f64], truth: &[f64]) -> Result<Agreement> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::Empty);
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let rmse = (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Agreement { mae, rmse, r: pearson(pred, truth) })
}

/// Pearson correlation, `None` for constant or mismatched inputs.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
