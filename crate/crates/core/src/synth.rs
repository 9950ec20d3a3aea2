//! Synthetic face videos with a known embedded pulse.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    self, compute_crop, crop_and_resize, Clip, ClipHeader, CropSpec, LandmarkTrack, Manifest, ManifestEntry, Rect, RgbFrame,
    Split, MANIFEST_FILE,
};
use crate::model::INPUT_SIZE;
use crate::signal::{Waveform, HR_BAND_HZ};

/// Relative pulse strength per RGB channel; blood volume modulates green most.
pub const CHANNEL_WEIGHTS: [f32; 3] = [0.33, 1.0, 0.5];
pub const SECOND_HARMONIC: f64 = 0.3;
const SKIN_COLOR: [f32; 3] = [0.72, 0.52, 0.42];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorSpec {
    /// Image-space rectangle.
    pub region: Rect,
    pub freq_hz: f64,
    /// Peak intensity swing on every channel.
    pub amplitude: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub hr_bpm: f64,
    pub duration_s: f64,
    pub fps: f64,
    /// Square image side in pixels.
    pub image_size: usize,
    pub skin_region: Rect,
    /// Green-channel intensity swing of the pulse fundamental.
    pub pulse_amplitude: f32,
    pub noise_std: f32,
    /// Largest excursion of the slowly drifting HR from `hr_bpm`.
    pub hr_drift: f64,
    pub distractor: Option<DistractorSpec>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            hr_bpm: 72.0,
            duration_s: 30.0,
            fps: 30.0,
            image_size: 160,
            skin_region: Rect { x0: 52, y0: 44, x1: 108, y1: 124 },
            pulse_amplitude: 0.01,
            noise_std: 0.03,
            hr_drift: 2.0,
            distractor: None,
        }
    }
}

/// Default distractor: the top-left corner of the face crop, left of the skin.
pub fn corner_region() -> Rect {
    Rect { x0: 32, y0: 36, x1: 52, y1: 60 }
}

fn disjoint(a: &Rect, b: &Rect) -> bool {
    a.x1 <= b.x0 || b.x1 <= a.x0 || a.y1 <= b.y0 || b.y1 <= a.y0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let (lo, hi) = (60.0 * HR_BAND_HZ.0, 60.0 * HR_BAND_HZ.1);
        if !(self.hr_drift >= 0.0 && self.hr_bpm - self.hr_drift >= lo && self.hr_bpm + self.hr_drift <= hi) {
            return bad(format!("HR {} +/- {} leaves [{lo}, {hi}] bpm", self.hr_bpm, self.hr_drift));
        }
        if !(self.fps > 2.0 * HR_BAND_HZ.1 && self.duration_s > 0.0) {
            return bad("frame rate must exceed twice the band edge and duration must be positive".into());
        }
        let r = &self.skin_region;
        if r.area() == 0 || r.x1 > self.image_size || r.y1 > self.image_size {
            return bad(format!("skin region {r:?} outside a {0}x{0} image", self.image_size));
        }
        if !(self.pulse_amplitude >= 0.0 && self.noise_std >= 0.0) {
            return bad("amplitudes must be non-negative".into());
        }
        if let Some(d) = &self.distractor {
            if d.region.area() == 0 || d.region.x1 > self.image_size || d.region.y1 > self.image_size {
                return bad(format!("distractor region {:?} outside the image", d.region));
            }
            if !disjoint(&d.region, r) {
                return bad("distractor overlaps the skin region".into());
            }
            if !(d.freq_hz > 0.0 && d.freq_hz < self.fps / 2.0) {
                return bad(format!("distractor frequency {} Hz not representable", d.freq_hz));
            }
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    /// Landmarks at the skin corners, identical on every frame.
    pub fn landmarks(&self) -> LandmarkTrack {
        let r = &self.skin_region;
        let (x0, y0, x1, y1) = (r.x0 as f64, r.y0 as f64, r.x1 as f64, r.y1 as f64);
        LandmarkTrack::new(vec![vec![(x0, y0), (x1, y0), (x0, y1), (x1, y1)]; self.frames()]).expect("nonempty")
    }
}

/// A generated video with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub frames: Vec<RgbFrame>,
    /// The exact modulation signal at frame times.
    pub ppg: Waveform,
    pub hr_per_frame: Vec<f64>,
    pub landmarks: LandmarkTrack,
}

/// Frame-by-frame renderer; every frame is a pure function of `(spec, seed, t)`.
pub struct Renderer {
    spec: SynthSpec,
    seed: u64,
    background: Vec<f32>,
    phase: Vec<f64>,
    hr: Vec<f64>,
    distractor_phase: f64,
}

impl Renderer {
    pub fn new(spec: &SynthSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.image_size;
        // Smooth static texture: a few random low-frequency cosines per channel.
        let waves: Vec<(f64, f64, f64, f64)> = (0..12)
            .map(|_| (rng.random_range(0.01..0.08), rng.random_range(0.01..0.08), rng.random_range(0.0..2.0 * PI), rng.random_range(0.02..0.06)))
            .collect();
        let mut background = vec![0.0f32; n * n * 3];
        for y in 0..n {
            for x in 0..n {
                let inside = spec.skin_region.contains(x, y);
                for c in 0..3 {
                    let mut v = if inside { SKIN_COLOR[c] as f64 } else { 0.35 + 0.1 * c as f64 };
                    for (fx, fy, ph, a) in waves.iter().skip(c).step_by(3) {
                        v += a * (2.0 * PI * (fx * x as f64 + fy * y as f64) + ph).cos();
                    }
                    background[(y * n + x) * 3 + c] = v as f32;
                }
            }
        }
        let frames = spec.frames();
        let drift_phase = rng.random_range(0.0..2.0 * PI);
        let start_phase = rng.random_range(0.0..2.0 * PI);
        let distractor_phase = rng.random_range(0.0..2.0 * PI);
        let hr: Vec<f64> = (0..frames)
            .map(|i| spec.hr_bpm + spec.hr_drift * (2.0 * PI * i as f64 / frames as f64 + drift_phase).sin())
            .collect();
        // Phase integrates the instantaneous frequency (trapezoid rule between frames).
        let mut phase = Vec::with_capacity(frames);
        let mut acc = start_phase;
        for i in 0..frames {
            if i > 0 {
                acc += 2.0 * PI * (hr[i - 1] + hr[i]) / 120.0 / spec.fps;
            }
            phase.push(acc);
        }
        Ok(Self { spec: spec.clone(), seed, background, phase, hr, distractor_phase })
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    pub fn pulse(&self, t: usize) -> f64 {
        let p = self.phase[t];
        p.sin() + SECOND_HARMONIC * (2.0 * p).sin()
    }

    pub fn hr(&self, t: usize) -> f64 {
        self.hr[t]
    }

    pub fn frame(&self, t: usize) -> RgbFrame {
        let s = &self.spec;
        let n = s.image_size;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64 + 1);
        let noise = Normal::new(0.0f32, s.noise_std.max(f32::MIN_POSITIVE)).expect("valid std");
        let pulse = self.pulse(t) as f32 * s.pulse_amplitude;
        let flash = s.distractor.map(|d| {
            let v = d.amplitude as f64 * (2.0 * PI * d.freq_hz * t as f64 / s.fps + self.distractor_phase).sin();
            (d.region, v as f32)
        });
        let mut data = self.background.clone();
        for y in 0..n {
            for x in 0..n {
                let base = (y * n + x) * 3;
                let skin = s.skin_region.contains(x, y);
                let flash = flash.filter(|(r, _)| r.contains(x, y)).map_or(0.0, |f| f.1);
                for c in 0..3 {
                    let mut v = data[base + c] + flash;
                    if skin {
                        v += pulse * CHANNEL_WEIGHTS[c];
                    }
                    if s.noise_std > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    data[base + c] = v.clamp(0.0, 1.0);
                }
            }
        }
        RgbFrame { width: n, height: n, data }
    }

    pub fn ppg(&self) -> Waveform {
        Waveform::new((0..self.len()).map(|t| self.pulse(t)).collect(), self.spec.fps).expect("positive frame rate")
    }
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthVideo> {
    let r = Renderer::new(spec, seed)?;
    Ok(SynthVideo {
        frames: (0..r.len()).map(|t| r.frame(t)).collect(),
        ppg: r.ppg(),
        hr_per_frame: r.hr.clone(),
        landmarks: spec.landmarks(),
    })
}

/// Renders and crops a video without holding the full-resolution frames, quantized to the clip-store grid.
pub fn generate_clip(spec: &SynthSpec, seed: u64) -> Result<(Clip, Waveform, CropSpec)> {
    let r = Renderer::new(spec, seed)?;
    let crop = compute_crop(&spec.landmarks())?;
    let mut data = Vec::with_capacity(r.len() * Clip::FRAME_LEN);
    for t in 0..r.len() {
        let one = CropSpec { centers: vec![crop.centers[t]], side: crop.side };
        let c = crop_and_resize(&[r.frame(t)], &one, spec.fps)?;
        data.extend(c.data.iter().map(|v| (v * 65535.0).round() / 65535.0));
    }
    Ok((Clip::new(r.len(), spec.fps, data)?, r.ppg(), crop))
}

/// Maps an image-space rectangle to the largest crop-space rectangle inside it.
pub fn rect_in_crop(r: &Rect, crop: &CropSpec, frame: usize) -> Rect {
    let (cx, cy) = crop.centers[frame];
    let half = crop.side as f64 / 2.0;
    let s = INPUT_SIZE as f64 / crop.side as f64;
    let map = |v: usize, o: f64, up: bool| {
        let m = ((v as f64 - (o - half)) * s).clamp(0.0, INPUT_SIZE as f64);
        (if up { m.ceil() } else { m.floor() }) as usize
    };
    Rect { x0: map(r.x0, cx, true), y0: map(r.y0, cy, true), x1: map(r.x1, cx, false), y1: map(r.y1, cy, false) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortOptions {
    pub template: SynthSpec,
    /// Per-video distractor frequency range in bpm; `None` disables the distractor.
    pub distractor_bpm: Option<(f64, f64)>,
    pub distractor_amplitude: f32,
    pub split: Split,
    /// Also write PNG frames, landmarks and PPG here, as input for `preprocess`.
    pub raw_dir: Option<PathBuf>,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self { template: SynthSpec::default(), distractor_bpm: None, distractor_amplitude: 0.1, split: Split::Train, raw_dir: None }
    }
}

pub const MIN_HR_GAP_BPM: f64 = 5.0;

/// `n` heart rates spread over `[lo, hi]` with pairwise gaps of at least 5 bpm.
pub fn cohort_hrs(n: usize, (lo, hi): (f64, f64), seed: u64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument("a cohort needs at least two videos".into()));
    }
    let spacing = (hi - lo) / (n - 1) as f64;
    if !(spacing >= MIN_HR_GAP_BPM) {
        return Err(Error::RangeTooNarrow { n, lo, hi, min_gap: MIN_HR_GAP_BPM });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slack = (spacing - MIN_HR_GAP_BPM) / 2.0;
    Ok((0..n)
        .map(|i| {
            let j = if slack > 0.0 { rng.random_range(-slack..=slack) } else { 0.0 };
            (lo + i as f64 * spacing + j).clamp(lo, hi)
        })
        .collect())
}

/// Generates `n` videos into the clip store at `out_dir`, appending to its manifest.
pub fn make_cohort(out_dir: &Path, n: usize, hr_range: (f64, f64), seed: u64, opts: &CohortOptions) -> Result<Manifest> {
    let hrs = cohort_hrs(n, hr_range, seed)?;
    let mut manifest = if out_dir.join(MANIFEST_FILE).exists() { Manifest::load(out_dir)? } else { Manifest::new(out_dir) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let prefix = match opts.split {
        Split::Train => "train",
        Split::Test => "test",
    };
    std::fs::create_dir_all(out_dir.join("clips"))?;
    for (i, hr) in hrs.into_iter().enumerate() {
        let mut spec = opts.template.clone();
        spec.hr_bpm = hr;
        if let Some((lo, hi)) = opts.distractor_bpm {
            let bpm = rng.random_range(lo..=hi);
            spec.distractor = Some(DistractorSpec { region: corner_region(), freq_hz: bpm / 60.0, amplitude: opts.distractor_amplitude });
        }
        let video_seed = rng.random::<u64>();
        let (clip, ppg, crop) = generate_clip(&spec, video_seed)?;
        let id = format!("synth_{prefix}_{seed}_{i:02}");
        let clip_rel = format!("clips/{id}.clip");
        let ppg_rel = format!("clips/{id}.ppg.csv");
        let header = ClipHeader {
            fps: spec.fps,
            source_id: id.clone(),
            clip_index: 0,
            frames: clip.frames,
            height: INPUT_SIZE,
            width: INPUT_SIZE,
            start_frame: 0,
        };
        ingest::write_clip(&out_dir.join(&clip_rel), &header, &clip)?;
        let samples: Vec<(f64, f64)> = ppg.samples().iter().enumerate().map(|(t, &v)| (t as f64 / spec.fps, v)).collect();
        ingest::write_ppg(&out_dir.join(&ppg_rel), &samples)?;
        manifest.entries.retain(|e| e.source_id != id);
        manifest.entries.push(ManifestEntry {
            clip: clip_rel,
            source_id: id,
            clip_index: 0,
            fps: spec.fps,
            frames: clip.frames,
            split: opts.split,
            ppg: Some(ppg_rel),
            hr_bpm: Some(spec.hr_bpm),
            skin_region: Some(rect_in_crop(&spec.skin_region, &crop, 0)),
            distractor_region: spec.distractor.map(|d| rect_in_crop(&d.region, &crop, 0)),
            synth_seed: Some(video_seed),
            distractor_hz: spec.distractor.map(|d| d.freq_hz),
        });
        if let Some(raw) = &opts.raw_dir {
            write_raw(&generate(&spec, video_seed)?, &manifest.entries.last().expect("just pushed").source_id, &raw.join("videos"), &raw.join("landmarks"))?;
        }
    }
    manifest.save()?;
    Ok(manifest)
}

/// Writes a video as raw inputs for the preprocessing path: PNG frames in
/// `videos_dir/<id>/`, landmarks in `landmarks_dir/<id>.csv`, ground truth in `landmarks_dir/<id>.ppg.csv`.
pub fn write_raw(video: &SynthVideo, id: &str, videos_dir: &Path, landmarks_dir: &Path) -> Result<()> {
    let frame_dir = videos_dir.join(id);
    std::fs::create_dir_all(&frame_dir)?;
    std::fs::create_dir_all(landmarks_dir)?;
    for (t, f) in video.frames.iter().enumerate() {
        let bytes: Vec<u8> = f.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        let img = image::RgbImage::from_raw(f.width as u32, f.height as u32, bytes).expect("frame buffer size");
        img.save(frame_dir.join(format!("{t:05}.png"))).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    std::fs::write(landmarks_dir.join(format!("{id}.csv")), video.landmarks.to_csv())?;
    let fs = video.ppg.fs();
    let samples: Vec<(f64, f64)> = video.ppg.samples().iter().enumerate().map(|(t, &v)| (t as f64 / fs, v)).collect();
    ingest::write_ppg(&landmarks_dir.join(format!("{id}.ppg.csv")), &samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{compute_psd, estimate_hr, TEST_RESOLUTION_HZ};

    fn region_trace(video: &SynthVideo, r: &Rect, c: usize) -> Waveform {
        let fs = video.ppg.fs();
        let v = video
            .frames
            .iter()
            .map(|f| {
                let mut s = 0.0;
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        s += f.data[(y * f.width + x) * 3 + c] as f64;
                    }
                }
                s / r.area() as f64
            })
            .collect();
        Waveform::new(v, fs).unwrap()
    }

    fn short(hr: f64) -> SynthSpec {
        SynthSpec { hr_bpm: hr, duration_s: 10.0, image_size: 160, hr_drift: 0.0, ..Default::default() }
    }

    #[test]
    fn clean_skin_trace_recovers_hr() {
        let spec = SynthSpec { noise_std: 0.0, ..short(72.0) };
        let v = generate(&spec, 1).unwrap();
        let hr = estimate_hr(&compute_psd(&region_trace(&v, &spec.skin_region, 1), TEST_RESOLUTION_HZ).unwrap());
        assert!((hr - 72.0).abs() <= 0.5, "{hr}");
    }

    #[test]
    fn distractor_has_its_own_peak() {
        let spec = SynthSpec {
            distractor: Some(DistractorSpec { region: corner_region(), freq_hz: 100.0 / 60.0, amplitude: 0.1 }),
            ..short(72.0)
        };
        let v = generate(&spec, 2).unwrap();
        let skin = estimate_hr(&compute_psd(&region_trace(&v, &spec.skin_region, 1), TEST_RESOLUTION_HZ).unwrap());
        let corner = estimate_hr(&compute_psd(&region_trace(&v, &corner_region(), 1), TEST_RESOLUTION_HZ).unwrap());
        assert!((skin - 72.0).abs() <= 0.5 && (corner - 100.0).abs() <= 0.5, "{skin} {corner}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec { duration_s: 1.0, ..short(90.0) };
        let a = generate(&spec, 3).unwrap();
        let b = generate(&spec, 3).unwrap();
        assert_eq!(a.frames, b.frames);
        let c = generate(&spec, 4).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(SynthSpec { hr_bpm: 30.0, ..short(0.0) }.validate(), Err(Error::InvalidSpec(_))));
        assert!(matches!(SynthSpec { hr_bpm: 248.0, hr_drift: 3.0, ..short(0.0) }.validate(), Err(Error::InvalidSpec(_))));
        let overlapping = DistractorSpec { region: Rect { x0: 60, y0: 50, x1: 70, y1: 60 }, freq_hz: 1.0, amplitude: 0.1 };
        assert!(SynthSpec { distractor: Some(overlapping), ..short(70.0) }.validate().is_err());
    }

    #[test]
    fn cohort_spacing() {
        let hrs = cohort_hrs(8, (50.0, 150.0), 7).unwrap();
        assert_eq!(hrs.len(), 8);
        for i in 0..8 {
            assert!((50.0..=150.0).contains(&hrs[i]));
            for j in 0..i {
                assert!((hrs[i] - hrs[j]).abs() >= MIN_HR_GAP_BPM);
            }
        }
        assert!(matches!(cohort_hrs(2, (60.0, 61.0), 0), Err(Error::RangeTooNarrow { .. })));
    }

    #[test]
    fn crop_geometry() {
        let spec = SynthSpec::default();
        let crop = compute_crop(&spec.landmarks()).unwrap();
        assert_eq!(crop.side, 96);
        let skin = rect_in_crop(&spec.skin_region, &crop, 0);
        let corner = rect_in_crop(&corner_region(), &crop, 0);
        assert_eq!((corner.x0, corner.y0), (0, 0));
        assert!(corner.x1 <= skin.x0 && skin.area() > 0 && corner.area() > 0);
    }
}
