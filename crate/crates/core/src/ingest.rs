//! Face-video ingestion: landmark-driven crops, resizing, clip segmentation,
//! the on-disk clip store and ground-truth PPG files.

use std::fs;
use std::io::{Read, Seek, SeekFrom};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::write_atomic;
use crate::model::INPUT_SIZE;
use crate::signal::Waveform;

/// Crop side as a multiple of the first frame's vertical landmark range.
pub const CROP_SCALE: f64 = 1.2;
pub const MANIFEST_FILE: &str = "manifest.json";
const CLIP_MAGIC: &[u8; 8] = b"RPPGCLIP";
const FIXED_SCALE: f32 = 65535.0;

/// Per-frame facial landmarks in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrack {
    frames: Vec<Vec<(f64, f64)>>,
}

impl LandmarkTrack {
    pub fn new(frames: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(i) = frames.iter().position(|f| f.is_empty()) {
            return Err(Error::InvalidArgument(format!("frame {i} has no landmarks")));
        }
        if frames.iter().flatten().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite landmark".into()));
        }
        Ok(Self { frames })
    }

    /// Parses rows of `frame, x1, y1, x2, y2, ...`; rows are ordered by frame index.
    /// Coordinates outside `width x height` are clamped with a warning.
    pub fn parse(text: &str, width: usize, height: usize) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| Error::InvalidArgument(format!("landmarks line {}: {what}", line_no + 1));
            let Ok(frame) = fields[0].parse::<usize>() else {
                // A header row.
                if rows.is_empty() {
                    continue;
                }
                return Err(bad("bad frame index"));
            };
            if fields.len() < 3 || fields.len() % 2 == 0 {
                return Err(bad("expected x/y pairs"));
            }
            let nums: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad("bad coordinate")))
                .collect::<Result<_>>()?;
            rows.push((frame, nums.chunks_exact(2).map(|p| (p[0], p[1])).collect()));
        }
        rows.sort_by_key(|r| r.0);
        let mut track = Self::new(rows.into_iter().map(|r| r.1).collect())?;
        let clamped = track.clamp_to(width, height);
        if clamped > 0 {
            warn!("clamped {clamped} landmark coordinates to the {width}x{height} frame");
        }
        Ok(track)
    }

    pub fn load(path: &Path, width: usize, height: usize) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, width, height)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, f) in self.frames.iter().enumerate() {
            out.push_str(&i.to_string());
            for (x, y) in f {
                out.push_str(&format!(",{x},{y}"));
            }
            out.push('\n');
        }
        out
    }

    /// Clamps every coordinate into the frame; returns how many were moved.
    pub fn clamp_to(&mut self, width: usize, height: usize) -> usize {
        let (xm, ym) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
        let mut n = 0;
        for (x, y) in self.frames.iter_mut().flatten() {
            let (cx, cy) = (x.clamp(0.0, xm), y.clamp(0.0, ym));
            n += usize::from(cx != *x) + usize::from(cy != *y);
            (*x, *y) = (cx, cy);
        }
        n
    }

    pub fn frames(&self) -> &[Vec<(f64, f64)>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Square crop boxes: per-frame centers and one fixed side length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub centers: Vec<(f64, f64)>,
    pub side: usize,
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Centers follow each frame's landmark extent; the side is locked to frame 0.
pub fn compute_crop(track: &LandmarkTrack) -> Result<CropSpec> {
    let (y0, y1) = span(track.frames[0].iter().map(|p| p.1));
    let side = ((CROP_SCALE * (y1 - y0) / 2.0).round() * 2.0) as usize;
    if y1 - y0 <= 0.0 || side == 0 {
        return Err(Error::DegenerateLandmarks);
    }
    let centers = track
        .frames
        .iter()
        .map(|f| {
            let (xa, xb) = span(f.iter().map(|p| p.0));
            let (ya, yb) = span(f.iter().map(|p| p.1));
            ((xa + xb) / 2.0, (ya + yb) / 2.0)
        })
        .collect();
    Ok(CropSpec { centers, side })
}

/// An RGB image with interleaved channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::BadShape(format!("{} values for a {width}x{height} RGB frame", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self { width: w as usize, height: h as usize, data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect() }
    }

    #[inline]
    fn at_clamped(&self, x: isize, y: isize, c: usize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[(y * self.width + x) * 3 + c]
    }
}

/// A preprocessed face clip: `T x 128 x 128 x 3`, RGB in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: usize,
    pub fps: f64,
    pub data: Vec<f32>,
}

impl Clip {
    pub const FRAME_LEN: usize = INPUT_SIZE * INPUT_SIZE * 3;

    pub fn new(frames: usize, fps: f64, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * Self::FRAME_LEN {
            return Err(Error::BadShape(format!("{} values for {frames} frames", data.len())));
        }
        Ok(Self { frames, fps, data })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * Self::FRAME_LEN..(t + 1) * Self::FRAME_LEN]
    }

    pub fn window(&self, range: Range<usize>) -> Clip {
        Clip {
            frames: range.len(),
            fps: self.fps,
            data: self.data[range.start * Self::FRAME_LEN..range.end * Self::FRAME_LEN].to_vec(),
        }
    }

    /// The clip as the encoder's standardized input tensor.
    pub fn to_input(&self) -> crate::model::Tensor {
        crate::model::standardize_clip(&self.data, self.frames, INPUT_SIZE, INPUT_SIZE)
    }
}

/// Crops every frame around its center and resizes bilinearly to 128 x 128.
pub fn crop_and_resize(frames: &[RgbFrame], spec: &CropSpec, fps: f64) -> Result<Clip> {
    if frames.len() != spec.centers.len() {
        return Err(Error::DecodeFailure(format!(
            "{} frames decoded for a {}-frame landmark track",
            frames.len(),
            spec.centers.len()
        )));
    }
    if spec.side == 0 {
        return Err(Error::DegenerateLandmarks);
    }
    let n = INPUT_SIZE;
    let scale = spec.side as f64 / n as f64;
    let mut data = Vec::with_capacity(frames.len() * Clip::FRAME_LEN);
    for (frame, &(cx, cy)) in frames.iter().zip(&spec.centers) {
        if frame.width != frames[0].width || frame.height != frames[0].height {
            return Err(Error::DecodeFailure("frame size changes mid-video".into()));
        }
        let x0 = cx - spec.side as f64 / 2.0;
        let y0 = cy - spec.side as f64 / 2.0;
        for v in 0..n {
            let sy = y0 + (v as f64 + 0.5) * scale - 0.5;
            let fy = sy.floor();
            let wy = (sy - fy) as f32;
            let iy = fy as isize;
            for u in 0..n {
                let sx = x0 + (u as f64 + 0.5) * scale - 0.5;
                let fx = sx.floor();
                let wx = (sx - fx) as f32;
                let ix = fx as isize;
                for c in 0..3 {
                    let top = frame.at_clamped(ix, iy, c) * (1.0 - wx) + frame.at_clamped(ix + 1, iy, c) * wx;
                    let bot = frame.at_clamped(ix, iy + 1, c) * (1.0 - wx) + frame.at_clamped(ix + 1, iy + 1, c) * wx;
                    data.push((top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
                }
            }
        }
    }
    Clip::new(frames.len(), fps, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    /// Non-overlapping windows from the start; the short tail is dropped.
    Test,
    /// `count` windows at independent uniform offsets.
    Train { count: usize },
}

/// Frame ranges of fixed-length windows over a video of `n_frames` frames.
pub fn segment_clips<R: Rng + ?Sized>(
    n_frames: usize,
    fps: f64,
    length_s: f64,
    mode: SegmentMode,
    rng: &mut R,
) -> Result<Vec<Range<usize>>> {
    if !(length_s > 0.0 && fps > 0.0) {
        return Err(Error::InvalidArgument("clip length and frame rate must be positive".into()));
    }
    let len = (length_s * fps).round() as usize;
    if len == 0 || n_frames < len {
        return Err(Error::VideoTooShort { duration_s: n_frames as f64 / fps, required_s: length_s });
    }
    Ok(match mode {
        SegmentMode::Test => (0..n_frames / len).map(|i| i * len..(i + 1) * len).collect(),
        SegmentMode::Train { count } => (0..count)
            .map(|_| {
                let s = rng.random_range(0..=n_frames - len);
                s..s + len
            })
            .collect(),
    })
}

/// Metadata stored at the head of every clip file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipHeader {
    pub fps: f64,
    pub source_id: String,
    pub clip_index: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// First source-video frame of this clip.
    pub start_frame: usize,
}

/// Writes a clip as 16-bit fixed point.
pub fn write_clip(path: &Path, header: &ClipHeader, clip: &Clip) -> Result<()> {
    if header.frames != clip.frames || header.height != INPUT_SIZE || header.width != INPUT_SIZE {
        return Err(Error::BadShape("clip header does not describe the clip".into()));
    }
    let json = serde_json::to_vec(header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + clip.data.len() * 2);
    bytes.extend_from_slice(CLIP_MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for &v in &clip.data {
        bytes.extend_from_slice(&((v.clamp(0.0, 1.0) * FIXED_SCALE).round() as u16).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Random-access reader over a clip file.
#[derive(Debug)]
pub struct ClipReader {
    file: fs::File,
    data_offset: u64,
    pub header: ClipHeader,
}

impl ClipReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path)?;
        let mut head = [0u8; 12];
        file.read_exact(&mut head).map_err(|_| Error::DecodeFailure(format!("{}: truncated clip", path.display())))?;
        if &head[..8] != CLIP_MAGIC {
            return Err(Error::DecodeFailure(format!("{}: not a clip file", path.display())));
        }
        let len = u32::from_le_bytes(head[8..12].try_into().expect("four bytes")) as usize;
        let mut json = vec![0u8; len];
        file.read_exact(&mut json)?;
        let header: ClipHeader = serde_json::from_slice(&json)?;
        let expected = 12 + len as u64 + (header.frames * header.height * header.width * 3 * 2) as u64;
        if file.metadata()?.len() != expected {
            return Err(Error::DecodeFailure(format!("{}: size does not match header", path.display())));
        }
        Ok(Self { file, data_offset: 12 + len as u64, header })
    }

    /// Frames `[range.start, range.end)` of this clip.
    pub fn read(&mut self, range: Range<usize>) -> Result<Clip> {
        if range.end > self.header.frames || range.start > range.end {
            return Err(Error::InvalidArgument(format!("frames {range:?} outside a {}-frame clip", self.header.frames)));
        }
        let frame_bytes = Clip::FRAME_LEN * 2;
        self.file.seek(SeekFrom::Start(self.data_offset + (range.start * frame_bytes) as u64))?;
        let mut raw = vec![0u8; range.len() * frame_bytes];
        self.file.read_exact(&mut raw)?;
        let data = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]]) as f32 / FIXED_SCALE).collect();
        Clip::new(range.len(), self.header.fps, data)
    }

    pub fn read_all(&mut self) -> Result<Clip> {
        self.read(0..self.header.frames)
    }
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)` in crop (128 x 128) pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Clip file, relative to the manifest directory.
    pub clip: String,
    pub source_id: String,
    pub clip_index: usize,
    pub fps: f64,
    pub frames: usize,
    pub split: Split,
    /// Ground-truth PPG file (time_s, value), relative to the manifest directory.
    #[serde(default)]
    pub ppg: Option<String>,
    #[serde(default)]
    pub hr_bpm: Option<f64>,
    #[serde(default)]
    pub skin_region: Option<Rect>,
    #[serde(default)]
    pub distractor_region: Option<Rect>,
    /// Generator seed of a synthetic video.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_seed: Option<u64>,
    /// Flash frequency of a synthetic distractor patch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor_hz: Option<f64>,
}

/// Index of a clip store directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { entries: Vec::new(), root: root.into() }
    }

    /// Loads `dir/manifest.json`, or the file itself when given one.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", file.display())))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        write_atomic(&self.root.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn open_clip(&self, entry: &ManifestEntry) -> Result<ClipReader> {
        ClipReader::open(&self.path_of(&entry.clip))
    }

    /// Ground truth resampled to the clip's frame times, if the entry has any.
    pub fn ground_truth(&self, entry: &ManifestEntry) -> Result<Option<Waveform>> {
        let Some(rel) = &entry.ppg else { return Ok(None) };
        let samples = load_ppg(&self.path_of(rel))?;
        resample_ppg(&samples, entry.fps, entry.frames).map(Some)
    }
}

/// Reads a `time_s,value` text file.
pub fn load_ppg(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let parsed = (parts.next().map(str::parse::<f64>), parts.next().map(str::parse::<f64>));
        match parsed {
            (Some(Ok(t)), Some(Ok(v))) => out.push((t, v)),
            _ if out.is_empty() && i == 0 => continue,
            _ => return Err(Error::InvalidArgument(format!("{}: bad PPG line {}", path.display(), i + 1))),
        }
    }
    if out.len() < 2 {
        return Err(Error::TooShort { len: out.len(), min: 2 });
    }
    if out.windows(2).any(|p| p[1].0 <= p[0].0) {
        return Err(Error::InvalidArgument(format!("{}: PPG times must increase", path.display())));
    }
    Ok(out)
}

pub fn write_ppg(path: &Path, samples: &[(f64, f64)]) -> Result<()> {
    let mut text = String::from("time_s,value\n");
    for (t, v) in samples {
        text.push_str(&format!("{t},{v}\n"));
    }
    write_atomic(path, text.as_bytes())
}

/// Linear interpolation of a PPG record at frame times `i / fps`, held constant past either end.
pub fn resample_ppg(samples: &[(f64, f64)], fps: f64, n_frames: usize) -> Result<Waveform> {
    if samples.len() < 2 {
        return Err(Error::TooShort { len: samples.len(), min: 2 });
    }
    let mut j = 0;
    let out = (0..n_frames)
        .map(|i| {
            let t = i as f64 / fps;
            while j + 2 < samples.len() && samples[j + 1].0 <= t {
                j += 1;
            }
            let (t0, v0) = samples[j];
            let (t1, v1) = samples[j + 1];
            let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            v0 + a * (v1 - v0)
        })
        .collect();
    Waveform::new(out, fps)
}

/// Decodes a video: a directory of image frames (sorted by name) or, through
/// an `ffmpeg` executable, any container it understands.
pub fn decode_video(path: &Path) -> Result<Vec<RgbFrame>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp"))
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::DecodeFailure(format!("{}: no image frames", path.display())));
        }
        return files
            .iter()
            .map(|f| {
                image::open(f)
                    .map(|img| RgbFrame::from_rgb8(&img.to_rgb8()))
                    .map_err(|e| Error::DecodeFailure(format!("{}: {e}", f.display())))
            })
            .collect();
    }
    decode_with_ffmpeg(path)
}

fn decode_with_ffmpeg(path: &Path) -> Result<Vec<RgbFrame>> {
    let fail = |msg: String| Error::DecodeFailure(format!("{}: {msg}", path.display()));
    let probe = Command::new("ffprobe")
        .args(["-v", "error", "-select_streams", "v:0", "-show_entries", "stream=width,height", "-of", "csv=p=0"])
        .arg(path)
        .output()
        .map_err(|e| fail(format!("ffprobe unavailable ({e})")))?;
    if !probe.status.success() {
        return Err(fail(String::from_utf8_lossy(&probe.stderr).trim().to_string()));
    }
    let dims = String::from_utf8_lossy(&probe.stdout);
    let mut it = dims.trim().split(',').map(|s| s.trim().parse::<usize>());
    let (Some(Ok(w)), Some(Ok(h))) = (it.next(), it.next()) else {
        return Err(fail(format!("unreadable dimensions {dims:?}")));
    };
    let out = Command::new("ffmpeg")
        .args(["-v", "error", "-i"])
        .arg(path)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .output()
        .map_err(|e| fail(format!("ffmpeg unavailable ({e})")))?;
    if !out.status.success() {
        return Err(fail(String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    let frame_bytes = w * h * 3;
    if frame_bytes == 0 || out.stdout.is_empty() || out.stdout.len() % frame_bytes != 0 {
        return Err(fail("decoder output does not divide into frames".into()));
    }
    Ok(out
        .stdout
        .chunks_exact(frame_bytes)
        .map(|b| RgbFrame { width: w, height: h, data: b.iter().map(|&v| v as f32 / 255.0).collect() })
        .collect())
}

/// Options for turning raw videos into a clip store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub fps: f64,
    /// Test-mode window length; train mode stores whole videos and windows at training time.
    pub clip_length_s: f64,
    pub split: Split,
}

/// Crops one decoded video and appends its clips to `manifest`, writing clip files under its root.
pub fn ingest_video(
    manifest: &mut Manifest,
    source_id: &str,
    frames: &[RgbFrame],
    track: &LandmarkTrack,
    ppg: Option<&[(f64, f64)]>,
    opts: &PreprocessOptions,
) -> Result<usize> {
    let spec = compute_crop(track)?;
    let clip = crop_and_resize(frames, &spec, opts.fps)?;
    let windows = match opts.split {
        Split::Train => vec![0..clip.frames],
        Split::Test => segment_clips(clip.frames, opts.fps, opts.clip_length_s, SegmentMode::Test, &mut rand::rng())?,
    };
    let clip_dir = manifest.root.join("clips");
    for (idx, range) in windows.iter().enumerate() {
        let rel = format!("clips/{source_id}_{idx:03}.clip");
        let header = ClipHeader {
            fps: opts.fps,
            source_id: source_id.to_string(),
            clip_index: idx,
            frames: range.len(),
            height: INPUT_SIZE,
            width: INPUT_SIZE,
            start_frame: range.start,
        };
        fs::create_dir_all(&clip_dir)?;
        write_clip(&manifest.root.join(&rel), &header, &clip.window(range.clone()))?;
        let ppg_rel = match ppg {
            Some(samples) => {
                let rel = format!("clips/{source_id}_{idx:03}.ppg.csv");
                let t0 = range.start as f64 / opts.fps;
                let t1 = range.end as f64 / opts.fps;
                let shifted: Vec<(f64, f64)> =
                    samples.iter().filter(|(t, _)| *t >= t0 - 1.0 && *t <= t1 + 1.0).map(|(t, v)| (t - t0, *v)).collect();
                write_ppg(&manifest.root.join(&rel), &shifted)?;
                Some(rel)
            }
            None => None,
        };
        manifest.entries.push(ManifestEntry {
            clip: rel,
            source_id: source_id.to_string(),
            clip_index: idx,
            fps: opts.fps,
            frames: range.len(),
            split: opts.split,
            ppg: ppg_rel,
            hr_bpm: None,
            skin_region: None,
            distractor_region: None,
            synth_seed: None,
            distractor_hz: None,
        });
    }
    Ok(windows.len())
}

/// Preprocesses every video in `videos_dir` that has `<stem>.csv` landmarks in
/// `landmarks_dir`; an optional `<stem>.ppg.csv` beside the landmarks supplies ground truth.
pub fn preprocess_dir(videos_dir: &Path, landmarks_dir: &Path, out_dir: &Path, opts: &PreprocessOptions) -> Result<Manifest> {
    let mut manifest = if out_dir.join(MANIFEST_FILE).exists() { Manifest::load(out_dir)? } else { Manifest::new(out_dir) };
    let mut videos: Vec<PathBuf> = fs::read_dir(videos_dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    videos.sort();
    let mut found = 0;
    for video in videos {
        let Some(stem) = video.file_stem().and_then(|s| s.to_str()).map(str::to_string) else { continue };
        let lm_path = landmarks_dir.join(format!("{stem}.csv"));
        if !lm_path.exists() {
            continue;
        }
        let frames = decode_video(&video)?;
        let track = LandmarkTrack::load(&lm_path, frames[0].width, frames[0].height)?;
        let ppg_path = landmarks_dir.join(format!("{stem}.ppg.csv"));
        let ppg = if ppg_path.exists() { Some(load_ppg(&ppg_path)?) } else { None };
        manifest.entries.retain(|e| e.source_id != stem);
        ingest_video(&mut manifest, &stem, &frames, &track, ppg.as_deref(), opts)?;
        found += 1;
    }
    if found == 0 {
        return Err(Error::Config(format!("no videos with landmarks found in {}", videos_dir.display())));
    }
    manifest.save()?;
    Ok(manifest)
}
