//! Test-time inference and reporting: windowed HR, HRV, agreement metrics and
//! gradient saliency maps.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{segment_clips, Clip, Manifest, ManifestEntry, Rect, SegmentMode, Split};
use crate::model::checkpoint::write_atomic;
use crate::model::{Encoder, INPUT_CHANNELS, INPUT_SIZE};
use crate::signal::{
    agreement_metrics, bandpass, compute_psd, detect_peaks, estimate_hr, hrv_metrics, irrelevant_power_ratio, Agreement,
    BandPsd, HrvReport, Waveform, IPR_HALF_WINDOW_HZ, TEST_RESOLUTION_HZ,
};
use crate::strppg::spatial_average;

/// Spatially averaged rPPG of a clip.
pub fn infer_rppg(clip: &Clip, model: &Encoder) -> Result<Waveform> {
    Ok(spatial_average(&model.forward(&clip.to_input())?))
}

/// Band-limited spectrum at test resolution, `None` for a constant trace.
fn test_psd(w: &Waveform) -> Result<Option<BandPsd>> {
    match compute_psd(w, TEST_RESOLUTION_HZ) {
        Ok(p) => Ok(Some(p)),
        Err(Error::ConstantSignal) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Reference HR of a window: the ground-truth PPG through the prediction's PSD
/// path, or the manifest's nominal HR when only that is known.
fn reference_hr(gt: Option<&Waveform>, entry: &ManifestEntry) -> Result<Option<f64>> {
    if let Some(g) = gt {
        if let Some(p) = test_psd(g)? {
            return Ok(Some(estimate_hr(&p)));
        }
    }
    Ok(entry.hr_bpm)
}

/// IPR of a model's prediction on one clip window against its ground truth.
pub fn window_ipr(model: &Encoder, clip: &Clip, gt: Option<&Waveform>, entry: &ManifestEntry) -> Result<Option<f64>> {
    let Some(hr) = reference_hr(gt, entry)? else { return Ok(None) };
    let pred = infer_rppg(clip, model)?;
    match test_psd(&pred)? {
        Some(p) => irrelevant_power_ratio(&p, hr, IPR_HALF_WINDOW_HZ).map(Some),
        None => Ok(Some(1.0)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub clip_id: String,
    pub window: usize,
    pub start_s: f64,
    pub hr_pred: Option<f64>,
    pub hr_true: Option<f64>,
    pub ipr: Option<f64>,
    /// Constant prediction; excluded from aggregates.
    pub degenerate: bool,
}

impl EvalRow {
    fn valid_pair(&self) -> Option<(f64, f64)> {
        match (self.degenerate, self.hr_pred, self.hr_true) {
            (false, Some(p), Some(t)) => Some((p, t)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoHrv {
    pub clip_id: String,
    pub predicted: Option<HrvReport>,
    pub truth: Option<HrvReport>,
    /// Why a side is missing, when it is.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub agreement: Option<Agreement>,
    pub mean_ipr: Option<f64>,
    pub windows: usize,
    pub valid_windows: usize,
    pub degenerate_windows: usize,
    pub window_s: f64,
    pub checkpoint_hash: Option<String>,
    pub model: serde_json::Value,
    pub missing_ground_truth: Vec<String>,
    pub hrv: Vec<VideoHrv>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

/// Aggregates over non-degenerate rows that have both estimates.
pub fn aggregate(rows: &[EvalRow]) -> Option<Agreement> {
    let (pred, truth): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(EvalRow::valid_pair).unzip();
    agreement_metrics(&pred, &truth).ok()
}

fn mean_ipr(rows: &[EvalRow]) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| !r.degenerate).filter_map(|r| r.ipr).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub window_s: f64,
    pub split: Split,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { window_s: 30.0, split: Split::Test }
    }
}

/// Per-clip predictions kept alongside the report (the concatenated window traces).
#[derive(Debug, Clone)]
pub struct ClipTrace {
    pub clip_id: String,
    pub rppg: Waveform,
}

fn hrv_for(w: &Waveform, what: &str, notes: &mut Vec<String>) -> Option<HrvReport> {
    match detect_peaks(w).and_then(|p| hrv_metrics(&p, w.fs())) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            None
        }
    }
}

/// Windowed evaluation of every clip in one split of a manifest.
pub fn evaluate(
    manifest: &Manifest,
    model: &Encoder,
    opts: &EvalOptions,
    checkpoint_hash: Option<String>,
) -> Result<(EvalReport, Vec<ClipTrace>)> {
    let entries = manifest.split(opts.split);
    if entries.is_empty() {
        return Err(Error::Config(format!("manifest has no {:?} clips", opts.split)));
    }
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut hrv = Vec::new();
    let mut missing = Vec::new();
    let mut rng = rand::rng();
    for entry in entries {
        let id = format!("{}#{}", entry.source_id, entry.clip_index);
        let windows = segment_clips(entry.frames, entry.fps, opts.window_s, SegmentMode::Test, &mut rng)?;
        let gt = manifest.ground_truth(entry)?;
        if gt.is_none() && entry.hr_bpm.is_none() {
            missing.push(id.clone());
        }
        let mut reader = manifest.open_clip(entry)?;
        let mut pred_all = Vec::new();
        let mut gt_all = Vec::new();
        for (wi, range) in windows.iter().enumerate() {
            let clip = reader.read(range.clone())?;
            let pred = infer_rppg(&clip, model)?;
            pred_all.extend_from_slice(pred.samples());
            let gt_win = gt.as_ref().map(|g| g.slice(range.start, range.end)).transpose()?;
            if let Some(g) = &gt_win {
                gt_all.extend_from_slice(g.samples());
            }
            let hr_true = reference_hr(gt_win.as_ref(), entry)?;
            let psd = test_psd(&pred)?;
            let (hr_pred, ipr) = match (&psd, hr_true) {
                (Some(p), Some(t)) => (Some(estimate_hr(p)), Some(irrelevant_power_ratio(p, t, IPR_HALF_WINDOW_HZ)?)),
                (Some(p), None) => (Some(estimate_hr(p)), None),
                (None, _) => (None, None),
            };
            if psd.is_none() {
                warn!("{id} window {wi}: constant prediction");
            }
            rows.push(EvalRow {
                clip_id: id.clone(),
                window: wi,
                start_s: range.start as f64 / entry.fps,
                hr_pred,
                hr_true,
                ipr,
                degenerate: psd.is_none(),
            });
        }
        let rppg = Waveform::new(pred_all, entry.fps)?;
        let mut notes = Vec::new();
        let predicted = hrv_for(&rppg, "prediction", &mut notes);
        let truth = match gt_all.len() {
            0 => None,
            _ => hrv_for(&Waveform::new(gt_all, entry.fps)?, "ground truth", &mut notes),
        };
        hrv.push(VideoHrv { clip_id: id.clone(), predicted, truth, notes });
        traces.push(ClipTrace { clip_id: id, rppg });
    }
    let summary = EvalSummary {
        agreement: aggregate(&rows),
        mean_ipr: mean_ipr(&rows),
        windows: rows.len(),
        valid_windows: rows.iter().filter(|r| r.valid_pair().is_some()).count(),
        degenerate_windows: rows.iter().filter(|r| r.degenerate).count(),
        window_s: opts.window_s,
        checkpoint_hash,
        model: serde_json::to_value(model.config())?,
        missing_ground_truth: missing,
        hrv,
    };
    Ok((EvalReport { rows, summary }, traces))
}

impl EvalReport {
    /// Fails when no evaluated clip had any ground truth.
    pub fn require_ground_truth(&self) -> Result<()> {
        if self.rows.iter().all(|r| r.hr_true.is_none()) {
            return Err(Error::NoGroundTruth(self.summary.missing_ground_truth.join(", ")));
        }
        Ok(())
    }

    pub fn rows_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("clip_id,window,start_s,hr_pred,hr_true,ipr,degenerate\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.clip_id,
                r.window,
                r.start_s,
                opt(r.hr_pred),
                opt(r.hr_true),
                opt(r.ipr),
                r.degenerate
            ));
        }
        out
    }

    /// Writes `rows.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("rows.csv"), self.rows_csv().as_bytes())?;
        write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
        let text = fs::read_to_string(dir.join("rows.csv"))?;
        let parse = |s: &str| if s.is_empty() { Ok(None) } else { s.parse::<f64>().map(Some) };
        let mut rows = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::InvalidArgument(format!("bad report row {line:?}"));
            if f.len() != 7 {
                return Err(bad());
            }
            rows.push(EvalRow {
                clip_id: f[0].to_string(),
                window: f[1].parse().map_err(|_| bad())?,
                start_s: f[2].parse().map_err(|_| bad())?,
                hr_pred: parse(f[3]).map_err(|_| bad())?,
                hr_true: parse(f[4]).map_err(|_| bad())?,
                ipr: parse(f[5]).map_err(|_| bad())?,
                degenerate: f[6].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { rows, summary })
    }
}

pub fn write_traces(dir: &Path, traces: &[ClipTrace]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in traces {
        let mut text = String::from("time_s,value\n");
        for (i, v) in t.rppg.samples().iter().enumerate() {
            text.push_str(&format!("{},{v}\n", i as f64 / t.rppg.fs()));
        }
        let name = t.clip_id.replace(['#', '/', '\\'], "_");
        write_atomic(&dir.join(format!("{name}.csv")), text.as_bytes())?;
    }
    Ok(())
}

/// Second argument of the correlation whose input gradient forms the saliency map.
#[derive(Debug, Clone)]
pub enum SaliencyReference {
    /// Ground-truth PPG aligned with the clip.
    GroundTruth(Waveform),
    /// A frozen, narrow-band copy of the model's own prediction around its dominant frequency.
    SelfDetached,
}

/// Half-width of the pass band used for the self reference.
pub const SELF_REFERENCE_HALF_BAND_HZ: f64 = 0.1;

/// Per-frame 128 x 128 saliency, max-normalized over the clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub frames: usize,
    pub data: Vec<f32>,
}

impl SaliencyMap {
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = INPUT_SIZE * INPUT_SIZE;
        &self.data[t * n..(t + 1) * n]
    }

    /// Mean over all frames and pixels inside `rect`.
    pub fn region_mean(&self, rect: &Rect) -> f64 {
        let mut s = 0.0;
        let mut n = 0usize;
        for t in 0..self.frames {
            let f = self.frame(t);
            for y in rect.y0..rect.y1.min(INPUT_SIZE) {
                for x in rect.x0..rect.x1.min(INPUT_SIZE) {
                    s += f[y * INPUT_SIZE + x] as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    /// Mean outside `rect`.
    pub fn outside_mean(&self, rect: &Rect) -> f64 {
        let mut s = 0.0;
        let mut n = 0usize;
        for t in 0..self.frames {
            let f = self.frame(t);
            for y in 0..INPUT_SIZE {
                for x in 0..INPUT_SIZE {
                    if !rect.contains(x, y) {
                        s += f[y * INPUT_SIZE + x] as f64;
                        n += 1;
                    }
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    /// Time-averaged map, renormalized to max 1 (all zero stays zero).
    pub fn temporal_mean(&self) -> Vec<f32> {
        let n = INPUT_SIZE * INPUT_SIZE;
        let mut m = vec![0.0f32; n];
        for t in 0..self.frames {
            for (a, b) in m.iter_mut().zip(self.frame(t)) {
                *a += b;
            }
        }
        let max = m.iter().cloned().fold(0.0f32, f32::max);
        if max > 0.0 {
            m.iter_mut().for_each(|v| *v /= max);
        }
        m
    }
}

/// Gradient of the Pearson correlation `corr(r, s)` with respect to `r`.
pub fn pearson_grad(r: &[f64], s: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = r.len() as f64;
    let mr = r.iter().sum::<f64>() / n;
    let ms = s.iter().sum::<f64>() / n;
    let rc: Vec<f64> = r.iter().map(|v| v - mr).collect();
    let sc: Vec<f64> = s.iter().map(|v| v - ms).collect();
    let nr = rc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ns = sc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nr == 0.0 || ns == 0.0 {
        return None;
    }
    let rho = rc.iter().zip(&sc).map(|(a, b)| a * b).sum::<f64>() / (nr * ns);
    Some((rho, rc.iter().zip(&sc).map(|(a, b)| b / (nr * ns) - rho * a / (nr * nr)).collect()))
}

pub fn saliency(clip: &Clip, model: &Encoder, reference: &SaliencyReference) -> Result<SaliencyMap> {
    let x = clip.to_input();
    let (block, tape) = model.forward_eval_taped(&x)?;
    let r = spatial_average(&block);
    let s = match reference {
        SaliencyReference::GroundTruth(g) => {
            if g.len() != r.len() {
                return Err(Error::LengthMismatch { left: r.len(), right: g.len() });
            }
            g.clone()
        }
        SaliencyReference::SelfDetached => {
            let Some(psd) = test_psd(&r)? else { return Err(Error::DegenerateSaliency) };
            let f = estimate_hr(&psd) / 60.0;
            bandpass(&r, f - SELF_REFERENCE_HALF_BAND_HZ, f + SELF_REFERENCE_HALF_BAND_HZ, SELF_REFERENCE_HALF_BAND_HZ / 2.0)
        }
    };
    let Some((_, dr)) = pearson_grad(r.samples(), s.samples()) else { return Err(Error::DegenerateSaliency) };
    let cells = block.side() * block.side();
    let grad_block: Vec<f64> = dr.iter().flat_map(|&g| std::iter::repeat_n(g / cells as f64, cells)).collect();
    let dx = model.backward(tape, &grad_block, None, true).expect("input gradient requested");
    let plane = INPUT_SIZE * INPUT_SIZE;
    let mut data = vec![0.0f32; clip.frames * plane];
    for t in 0..clip.frames {
        for c in 0..INPUT_CHANNELS {
            let src = &dx.data[(t * INPUT_CHANNELS + c) * plane..(t * INPUT_CHANNELS + c + 1) * plane];
            for (d, g) in data[t * plane..(t + 1) * plane].iter_mut().zip(src) {
                *d = d.max(g.abs());
            }
        }
    }
    let max = data.iter().cloned().fold(0.0f32, f32::max);
    if !(max > 0.0) {
        return Err(Error::DegenerateSaliency);
    }
    data.iter_mut().for_each(|v| *v /= max);
    Ok(SaliencyMap { frames: clip.frames, data })
}

/// Writes per-frame grayscale maps and overlays on the clip, plus a time-averaged overlay.
pub fn write_saliency(dir: &Path, map: &SaliencyMap, clip: &Clip) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n = INPUT_SIZE as u32;
    let to_io = |e: image::ImageError| Error::Io(std::io::Error::other(e));
    let overlay = |frame: &[f32], sal: &[f32]| -> image::RgbImage {
        let mut img = image::RgbImage::new(n, n);
        for (i, px) in img.pixels_mut().enumerate() {
            let a = sal[i];
            let rgb = &frame[i * 3..i * 3 + 3];
            let gray = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
            let blend = |base: f32, heat: f32| (((1.0 - a) * base + a * heat).clamp(0.0, 1.0) * 255.0).round() as u8;
            *px = image::Rgb([blend(gray, 1.0), blend(gray, 0.0), blend(gray, 0.0)]);
        }
        img
    };
    for t in 0..map.frames {
        let gray: Vec<u8> = map.frame(t).iter().map(|v| (v * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(n, n, gray).expect("map size").save(dir.join(format!("saliency_{t:05}.png"))).map_err(to_io)?;
        overlay(clip.frame(t), map.frame(t)).save(dir.join(format!("overlay_{t:05}.png"))).map_err(to_io)?;
    }
    let mean_frame: Vec<f32> = {
        let mut m = vec![0.0f32; Clip::FRAME_LEN];
        for t in 0..clip.frames {
            for (a, b) in m.iter_mut().zip(clip.frame(t)) {
                *a += b / clip.frames as f32;
            }
        }
        m
    };
    overlay(&mean_frame, &map.temporal_mean()).save(dir.join("overlay_mean.png")).map_err(to_io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn row(id: &str, p: Option<f64>, t: Option<f64>, degenerate: bool) -> EvalRow {
        EvalRow { clip_id: id.into(), window: 0, start_s: 0.0, hr_pred: p, hr_true: t, ipr: Some(0.5), degenerate }
    }

    #[test]
    fn aggregates_skip_degenerate_rows() {
        let rows = vec![
            row("a", Some(70.0), Some(70.0), false),
            row("b", Some(90.0), Some(92.0), false),
            row("c", None, Some(100.0), true),
            row("d", Some(60.0), Some(61.0), false),
        ];
        let a = aggregate(&rows).unwrap();
        assert!((a.mae - 1.0).abs() < 1e-12);
        let exact = aggregate(&[row("x", Some(70.0), Some(70.0), false), row("y", Some(80.0), Some(80.0), false)]).unwrap();
        assert_eq!((exact.mae, exact.r), (0.0, Some(1.0)));
    }

    #[test]
    fn pearson_gradient_matches_differences() {
        let r: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() + 0.1 * i as f64).collect();
        let s: Vec<f64> = (0..40).map(|i| (i as f64 * 0.31 + 0.2).sin()).collect();
        let (_, g) = pearson_grad(&r, &s).unwrap();
        let h = 1e-6;
        for i in [0, 7, 39] {
            let mut up = r.clone();
            up[i] += h;
            let mut dn = r.clone();
            dn[i] -= h;
            let fd = (pearson_grad(&up, &s).unwrap().0 - pearson_grad(&dn, &s).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
        assert!(pearson_grad(&[1.0; 5], &s[..5]).is_none());
    }

    #[test]
    fn dead_model_gives_degenerate_saliency() {
        let mut model = Encoder::new(ModelConfig { s_out: 2, base_channels: 2, frame_rate: 8.0 }, 0).unwrap();
        for p in model.params_mut() {
            p.fill(0.0);
        }
        let clip = Clip::new(16, 8.0, (0..16 * Clip::FRAME_LEN).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap();
        let gt = Waveform::new((0..16).map(|i| (i as f64).sin()).collect(), 8.0).unwrap();
        assert!(matches!(saliency(&clip, &model, &SaliencyReference::GroundTruth(gt)), Err(Error::DegenerateSaliency)));
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("a#0", Some(70.5), Some(71.0), false), row("b#0", None, None, true)];
        let summary = EvalSummary {
            agreement: aggregate(&rows),
            mean_ipr: mean_ipr(&rows),
            windows: 2,
            valid_windows: 1,
            degenerate_windows: 1,
            window_s: 30.0,
            checkpoint_hash: None,
            model: serde_json::Value::Null,
            missing_ground_truth: vec![],
            hrv: vec![],
        };
        let report = EvalReport { rows, summary };
        report.write(dir.path()).unwrap();
        assert_eq!(EvalReport::load(dir.path()).unwrap(), report);
    }
}
