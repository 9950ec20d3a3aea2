//! The unsupervised training loop.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::window_ipr;
use crate::ingest::{segment_clips, Clip, Manifest, ManifestEntry, SegmentMode, Split};
use crate::losses::{total_loss_with_grad, LossBreakdown, PsdSet};
use crate::model::checkpoint;
use crate::model::{Encoder, Grads, ModelConfig};
use crate::optim::{AdamW, AdamWConfig};
use crate::signal::{Periodogram, TRAIN_RESOLUTION_HZ};
use crate::strppg::{sample_block, scatter_grad};

/// Clip lengths of the sensitivity grid.
pub const CLIP_LENGTHS_S: [f64; 3] = [5.0, 10.0, 30.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub clip_length_s: f64,
    pub k: usize,
    pub s_out: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Monitor IPR every this many steps (and before the first and after the last); 0 disables it.
    pub ipr_eval_every: usize,
    /// Pairs whose gradients are averaged into one update.
    pub accumulate: usize,
    pub weight_decay: f64,
    pub base_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            clip_length_s: 10.0,
            k: 4,
            s_out: 2,
            learning_rate: 1e-5,
            epochs: 30,
            seed: 0,
            ipr_eval_every: 8,
            accumulate: 1,
            weight_decay: 0.0,
            base_channels: ModelConfig::default().base_channels,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !CLIP_LENGTHS_S.contains(&self.clip_length_s) {
            return Err(Error::Config(format!("clip_length_s must be one of {CLIP_LENGTHS_S:?}, got {}", self.clip_length_s)));
        }
        if self.k == 0 || self.accumulate == 0 {
            return Err(Error::Config("k and accumulate must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.learning_rate, weight_decay: self.weight_decay, ..Default::default() }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PAIR_STREAM: u64 = 1 << 40;
const WINDOW_STREAM: u64 = 2 << 40;

/// One epoch of cross-video pairs, as indices into `clips` (each clip's source id).
///
/// Every clip appears once; with an odd count the leftover is paired with a
/// random clip from another video.
pub fn make_pairs(sources: &[&str], seed: u64, epoch: u64) -> Result<Vec<(usize, usize)>> {
    let mut distinct: Vec<&str> = sources.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::SingleVideo);
    }
    let mut rng = stream_rng(seed, PAIR_STREAM + epoch);
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.shuffle(&mut rng);
    let mut pairs = Vec::with_capacity(sources.len().div_ceil(2));
    let mut pool = order;
    while pool.len() >= 2 {
        let a = pool.remove(0);
        match pool.iter().position(|&b| sources[b] != sources[a]) {
            Some(j) => pairs.push((a, pool.remove(j))),
            None => {
                // Only clips of `a`'s video remain: swap into an existing pair.
                let (pi, partner) = pairs
                    .iter()
                    .enumerate()
                    .find_map(|(pi, &(x, y))| (sources[x] != sources[a] && sources[y] != sources[a]).then_some((pi, x)))
                    .expect("at least two videos");
                pairs[pi].0 = a;
                pool.push(partner);
            }
        }
    }
    if let Some(&last) = pool.first() {
        let others: Vec<usize> = (0..sources.len()).filter(|&i| sources[i] != sources[last]).collect();
        let pick = others[rand::Rng::random_range(&mut rng, 0..others.len())];
        pairs.push((last, pick));
    }
    Ok(pairs)
}

/// A training input: one clip and the identity of its source video.
#[derive(Debug, Clone)]
pub struct TrainClip {
    pub source_id: String,
    pub clip: Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub loss: LossBreakdown,
    /// Encoder forwards performed by this step.
    pub forwards: u64,
}

/// Forward, loss and backward for one pair; accumulates parameter gradients into `grads`.
pub fn pair_gradients(
    model: &mut Encoder,
    a: &TrainClip,
    b: &TrainClip,
    k: usize,
    rng: &mut ChaCha8Rng,
    grads: &mut Grads,
) -> Result<StepOutput> {
    if a.clip.frames != b.clip.frames {
        return Err(Error::LengthMismatch { left: a.clip.frames, right: b.clip.frames });
    }
    let before = model.forward_count();
    let (block_a, tape_a) = model.forward_train(&a.clip.to_input())?;
    let (block_b, tape_b) = model.forward_train(&b.clip.to_input())?;
    let forwards = model.forward_count() - before;

    let samples_a = sample_block(&block_a, k, rng)?;
    let samples_b = sample_block(&block_b, k, rng)?;
    let periodogram = Periodogram::new(block_a.sample_len(), block_a.fs(), TRAIN_RESOLUTION_HZ)?;
    let spectra = |samples: &[(crate::strppg::SampleSpec, crate::signal::Waveform)]| -> Result<(Vec<_>, Vec<_>)> {
        samples.iter().map(|(_, w)| periodogram.compute_with_tape(w.samples())).collect::<Result<Vec<_>>>().map(|v| v.into_iter().unzip())
    };
    let (psds_a, tapes_a) = spectra(&samples_a)?;
    let (psds_b, tapes_b) = spectra(&samples_b)?;
    let set_a = PsdSet::new(psds_a, a.source_id.clone())?;
    let set_b = PsdSet::new(psds_b, b.source_id.clone())?;
    let (loss, g) = total_loss_with_grad(&set_a, &set_b)?;

    let side = block_a.side();
    let to_block = |samples: &[(crate::strppg::SampleSpec, crate::signal::Waveform)], tapes: &[crate::signal::PsdTape], gp: &[Vec<f64>]| {
        let mut gb = vec![0.0; block_a.values().len()];
        for ((spec, _), (tape, gpi)) in samples.iter().zip(tapes.iter().zip(gp)) {
            scatter_grad(&mut gb, side, spec, &periodogram.backward(tape, gpi));
        }
        gb
    };
    let grad_a = to_block(&samples_a, &tapes_a, &g.a);
    let grad_b = to_block(&samples_b, &tapes_b, &g.b);
    model.backward(tape_a, &grad_a, Some(grads), false);
    model.backward(tape_b, &grad_b, Some(grads), false);
    Ok(StepOutput { loss, forwards })
}

/// One optimizer step on one pair.
pub fn train_step(model: &mut Encoder, opt: &mut AdamW, a: &TrainClip, b: &TrainClip, k: usize, rng: &mut ChaCha8Rng) -> Result<StepOutput> {
    let mut grads = model.zero_grads();
    let out = pair_gradients(model, a, b, k, rng, &mut grads)?;
    opt.update(&mut model.params_mut(), &grads.0);
    Ok(out)
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed optimizer steps.
    pub step: u64,
    pub optimizer: AdamW,
    pub best_ipr: Option<f64>,
    /// Byte length of the log at this state.
    pub log_len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: u64,
    pub losses: Vec<LossBreakdown>,
    /// `(step, ipr)` for every monitor evaluation of this invocation.
    pub ipr: Vec<(u64, f64)>,
    pub best_ipr: Option<f64>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub final_hash: String,
}

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "step,epoch,loss,lp,ln,ipr";
pub const STATE_CHECKPOINT: &str = "checkpoints/last.ckpt";
pub const BEST_CHECKPOINT: &str = "checkpoints/best.ckpt";
pub const FINAL_CHECKPOINT: &str = "checkpoints/final.ckpt";

/// Hooks for long runs.
#[derive(Default)]
pub struct FitControl<'a> {
    /// Polled before every step with the number of completed steps; `true` stops the run.
    pub stop: Option<&'a (dyn Fn(u64) -> bool + Sync)>,
}

struct Monitor<'a> {
    manifest: &'a Manifest,
    entries: Vec<&'a ManifestEntry>,
    frames: usize,
}

impl Monitor<'_> {
    fn ipr(&self, model: &Encoder) -> Result<Option<f64>> {
        let mut v = Vec::new();
        for e in &self.entries {
            let n = self.frames.min(e.frames);
            let clip = self.manifest.open_clip(e)?.read(0..n)?;
            let gt = self.manifest.ground_truth(e)?.map(|g| g.slice(0, n)).transpose()?;
            if let Some(ipr) = window_ipr(model, &clip, gt.as_ref(), e)? {
                v.push(ipr);
            }
        }
        Ok((!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
    }
}

fn format_row(step: u64, epoch: u64, loss: Option<&LossBreakdown>, ipr: Option<f64>) -> String {
    let l = loss.map_or(",,".to_string(), |l| format!("{},{},{}", l.total, l.positive, l.negative));
    format!("{step},{epoch},{l},{}\n", ipr.map(|v| v.to_string()).unwrap_or_default())
}

/// Trains on the manifest's training split, monitoring IPR on its test split.
///
/// The run directory receives `train_log.csv` and `checkpoints/`. An existing
/// resume state there is continued; only `epochs` may differ from the stored
/// configuration, which extends a finished run.
pub fn fit(manifest: &Manifest, cfg: &TrainConfig, run_dir: &Path, control: &FitControl) -> Result<FitReport> {
    cfg.validate()?;
    let train = manifest.split(Split::Train);
    let sources: Vec<&str> = train.iter().map(|e| e.source_id.as_str()).collect();
    if train.is_empty() {
        return Err(Error::Config("manifest has no training clips".into()));
    }
    let fps = train[0].fps;
    if train.iter().any(|e| e.fps != fps) {
        return Err(Error::Config("training clips have different frame rates".into()));
    }
    let pairs_per_epoch = make_pairs(&sources, cfg.seed, 0)?.len() as u64;
    let steps_per_epoch = pairs_per_epoch.div_ceil(cfg.accumulate as u64);
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let window = (cfg.clip_length_s * fps).round() as usize;
    for e in &train {
        if e.frames < window {
            return Err(Error::VideoTooShort { duration_s: e.frames as f64 / fps, required_s: cfg.clip_length_s });
        }
    }
    let monitor = Monitor {
        manifest,
        entries: manifest.split(Split::Test).into_iter().filter(|e| e.ppg.is_some() || e.hr_bpm.is_some()).collect(),
        frames: window,
    };

    fs::create_dir_all(run_dir.join("checkpoints"))?;
    let log_path = run_dir.join(LOG_FILE);
    let state_path = run_dir.join(STATE_CHECKPOINT);
    let model_cfg = ModelConfig { s_out: cfg.s_out, base_channels: cfg.base_channels, frame_rate: fps };

    let (mut model, mut state) = if state_path.exists() {
        let ck = checkpoint::load(&state_path)?;
        let mut state: TrainState = serde_json::from_slice(&ck.extra)
            .map_err(|e| Error::CorruptCheckpoint(format!("resume state: {e}")))?;
        if (TrainConfig { epochs: cfg.epochs, ..state.config.clone() }) != *cfg {
            return Err(Error::Config("run directory holds a run with a different configuration".into()));
        }
        state.config.epochs = cfg.epochs;
        let f = OpenOptions::new().write(true).open(&log_path)?;
        f.set_len(state.log_len)?;
        info!("resuming at step {}", state.step);
        (ck.model, state)
    } else {
        let model = Encoder::new(model_cfg, cfg.seed)?;
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        let mut log = fs::File::create(&log_path)?;
        writeln!(log, "{LOG_HEADER}")?;
        let state = TrainState { config: cfg.clone(), step: 0, optimizer: AdamW::new(cfg.optimizer(), &shapes), best_ipr: None, log_len: 0 };
        (model, state)
    };
    let mut log = OpenOptions::new().append(true).open(&log_path)?;
    let best_path = run_dir.join(BEST_CHECKPOINT);
    let final_path = run_dir.join(FINAL_CHECKPOINT);

    let mut report_ipr = Vec::new();
    let mut losses = Vec::new();
    let started = Instant::now();

    let persist = |model: &Encoder, state: &mut TrainState, log: &mut fs::File| -> Result<()> {
        log.flush()?;
        state.log_len = log.metadata()?.len();
        checkpoint::save(&state_path, model, &serde_json::to_vec(state)?)?;
        Ok(())
    };

    let evaluate_ipr = |model: &Encoder, state: &mut TrainState, report_ipr: &mut Vec<(u64, f64)>| -> Result<Option<f64>> {
        if cfg.ipr_eval_every == 0 {
            return Ok(None);
        }
        let ipr = monitor.ipr(model)?;
        if let Some(v) = ipr {
            report_ipr.push((state.step, v));
            if state.best_ipr.is_none_or(|b| v < b) {
                state.best_ipr = Some(v);
                checkpoint::save(&best_path, model, &[])?;
            }
        }
        Ok(ipr)
    };

    if state.step == 0 && state.log_len == 0 {
        let ipr = evaluate_ipr(&model, &mut state, &mut report_ipr)?;
        log.write_all(format_row(0, 0, None, ipr).as_bytes())?;
        persist(&model, &mut state, &mut log)?;
    }

    let mut epoch_cache: Option<(u64, Vec<(usize, usize)>, Vec<std::ops::Range<usize>>)> = None;
    while state.step < total_steps {
        if control.stop.is_some_and(|f| f(state.step)) {
            persist(&model, &mut state, &mut log)?;
            return Err(Error::Interrupted { step: state.step });
        }
        let epoch = state.step / steps_per_epoch;
        let in_epoch = state.step % steps_per_epoch;
        if epoch_cache.as_ref().is_none_or(|c| c.0 != epoch) {
            let pairs = make_pairs(&sources, cfg.seed, epoch)?;
            let mut wrng = stream_rng(cfg.seed, WINDOW_STREAM + epoch);
            let windows = train
                .iter()
                .map(|e| {
                    segment_clips(e.frames, fps, cfg.clip_length_s, SegmentMode::Train { count: 1 }, &mut wrng).map(|mut v| v.remove(0))
                })
                .collect::<Result<Vec<_>>>()?;
            epoch_cache = Some((epoch, pairs, windows));
        }
        let (_, pairs, windows) = epoch_cache.as_ref().expect("filled above");
        let load = |i: usize| -> Result<TrainClip> {
            Ok(TrainClip { source_id: train[i].source_id.clone(), clip: manifest.open_clip(train[i])?.read(windows[i].clone())? })
        };
        let mut rng = stream_rng(cfg.seed, state.step);
        let mut grads = model.zero_grads();
        let first = in_epoch as usize * cfg.accumulate;
        let chunk = &pairs[first..(first + cfg.accumulate).min(pairs.len())];
        let mut sum = LossBreakdown { total: 0.0, positive: 0.0, negative: 0.0 };
        for &(ia, ib) in chunk {
            let out = pair_gradients(&mut model, &load(ia)?, &load(ib)?, cfg.k, &mut rng, &mut grads)?;
            sum.total += out.loss.total;
            sum.positive += out.loss.positive;
            sum.negative += out.loss.negative;
        }
        let n = chunk.len() as f64;
        let loss = LossBreakdown { total: sum.total / n, positive: sum.positive / n, negative: sum.negative / n };
        if chunk.len() > 1 {
            grads.scale(1.0 / chunk.len() as f32);
        }
        state.optimizer.update(&mut model.params_mut(), &grads.0);
        state.step += 1;
        losses.push(loss);

        let due = cfg.ipr_eval_every > 0 && (state.step % cfg.ipr_eval_every as u64 == 0 || state.step == total_steps);
        let ipr = if due { evaluate_ipr(&model, &mut state, &mut report_ipr)? } else { None };
        log.write_all(format_row(state.step, epoch, Some(&loss), ipr).as_bytes())?;
        writeln!(log, "# wall_time step={} seconds={:.3}", state.step, started.elapsed().as_secs_f64())?;
        info!("step {}/{} loss {:.5} (lp {:.5}, ln {:.5})", state.step, total_steps, loss.total, loss.positive, loss.negative);
        persist(&model, &mut state, &mut log)?;
    }

    let final_hash = checkpoint::save(&final_path, &model, &[])?;
    if !best_path.exists() {
        checkpoint::save(&best_path, &model, &[])?;
    }
    Ok(FitReport {
        steps: state.step,
        losses,
        ipr: report_ipr,
        best_ipr: state.best_ipr,
        final_checkpoint: final_path,
        best_checkpoint: best_path,
        final_hash,
    })
}

/// Parsed rows of a training log (comment lines skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: u64,
    pub loss: Option<LossBreakdown>,
    pub ipr: Option<f64>,
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidArgument(format!("bad log row {line:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { s.parse().map(Some).map_err(|_| bad()) } };
        let loss = match (num(f[2])?, num(f[3])?, num(f[4])?) {
            (Some(total), Some(positive), Some(negative)) => Some(LossBreakdown { total, positive, negative }),
            _ => None,
        };
        rows.push(LogRow { step: f[0].parse().map_err(|_| bad())?, epoch: f[1].parse().map_err(|_| bad())?, loss, ipr: num(f[5])? });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_videos_pair_with_each_other() {
        let p = make_pairs(&["A", "B"], 0, 0).unwrap();
        assert!(p == vec![(0, 1)] || p == vec![(1, 0)]);
        assert!(matches!(make_pairs(&["A", "A"], 0, 0), Err(Error::SingleVideo)));
        assert!(matches!(make_pairs(&["A"], 0, 0), Err(Error::SingleVideo)));
    }

    #[test]
    fn every_clip_once_across_videos() {
        let sources = ["A", "B", "C", "D"];
        for epoch in 0..20 {
            let p = make_pairs(&sources, 3, epoch).unwrap();
            assert_eq!(p.len(), 2);
            let mut seen: Vec<usize> = p.iter().flat_map(|&(a, b)| [a, b]).collect();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn clips_sharing_a_video_are_never_paired() {
        let sources = ["A", "A", "A", "B", "B", "C"];
        for epoch in 0..50 {
            let p = make_pairs(&sources, 1, epoch).unwrap();
            assert_eq!(p.len(), 3);
            assert!(p.iter().all(|&(a, b)| sources[a] != sources[b]));
            let mut seen: Vec<usize> = p.iter().flat_map(|&(a, b)| [a, b]).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..6).collect::<Vec<_>>());
        }
        let odd = make_pairs(&["A", "B", "C"], 0, 0).unwrap();
        assert_eq!(odd.len(), 2);
        assert!(odd.iter().all(|&(a, b)| a != b));
    }

    #[test]
    fn pairing_is_seeded() {
        let s: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
        let s: Vec<&str> = s.iter().map(String::as_str).collect();
        let a: Vec<_> = (0..3).map(|e| make_pairs(&s, 5, e).unwrap()).collect();
        let b: Vec<_> = (0..3).map(|e| make_pairs(&s, 5, e).unwrap()).collect();
        let c: Vec<_> = (0..3).map(|e| make_pairs(&s, 6, e).unwrap()).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { clip_length_s: 7.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { k: 0, ..Default::default() }.validate().is_err());
    }
}
