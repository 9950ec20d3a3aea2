use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use rppg_core::config::{RunConfig, SaliencyMode};
use rppg_core::eval::{self, EvalOptions, SaliencyReference};
use rppg_core::ingest::{self, Manifest, PreprocessOptions, Split};
use rppg_core::model::checkpoint;
use rppg_core::synth::{self, CohortOptions, SynthSpec};
use rppg_core::train::{self, FitControl};
use rppg_core::{plot, Error, Result};

#[derive(Parser)]
#[command(name = "rppg", version, about = "Unsupervised remote photoplethysmography")]
struct Cli {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop face videos with their landmarks into a clip store.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic cohort with known heart rates.
    Synth(SynthArgs),
    /// Train the encoder on a clip store.
    Train(TrainArgs),
    /// Windowed HR evaluation against ground truth.
    Eval(EvalArgs),
    /// Gradient saliency maps for clips of a manifest.
    Saliency(SaliencyArgs),
    /// Render training curves and agreement plots.
    Plot(PlotArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    videos_dir: PathBuf,
    #[arg(long)]
    landmarks_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Window length in seconds (test mode).
    #[arg(long)]
    clip_length: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Split>,
    /// Frame rate of image-sequence inputs.
    #[arg(long)]
    fps: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    /// Training videos.
    #[arg(long)]
    n: Option<usize>,
    /// Held-out test videos.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    hr_min: Option<f64>,
    #[arg(long)]
    hr_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    /// Add a flashing corner patch at a random 40-250 bpm to every video.
    #[arg(long)]
    distractor: bool,
    /// Also write raw PNG frames, landmarks and PPG under this directory.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Defaults to `<run root>/train-seed<seed>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    clip_length: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    s_out: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    ipr_every: Option<usize>,
    #[arg(long)]
    accumulate: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Window length in seconds.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long, value_enum)]
    saliency: Option<SaliencyMode>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Output directory; defaults to `eval/` beside the checkpoint's run.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Source id of the clip; defaults to every clip of the split.
    #[arg(long)]
    clip: Option<String>,
    #[arg(long, value_enum, default_value = "gt")]
    reference: SaliencyMode,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Seconds from the start of each clip.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Training run directory (reads its log).
    #[arg(long)]
    run: Option<PathBuf>,
    /// Evaluation output directory (reads rows.csv and summary.json).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('"', "'");
            eprintln!("error: kind={} message=\"{msg}\"", e.kind());
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Preprocess(a) => preprocess(&mut cfg, a),
        Command::Synth(a) => synth_cmd(&mut cfg, a),
        Command::Train(a) => train_cmd(&mut cfg, a),
        Command::Eval(a) => eval_cmd(&mut cfg, a),
        Command::Saliency(a) => saliency_cmd(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn preprocess(cfg: &mut RunConfig, a: PreprocessArgs) -> Result<()> {
    set(&mut cfg.ingest.clip_length_s, a.clip_length);
    set(&mut cfg.ingest.mode, a.mode);
    set(&mut cfg.ingest.fps, a.fps);
    cfg.snapshot(&a.out_dir)?;
    let opts = PreprocessOptions { fps: cfg.ingest.fps, clip_length_s: cfg.ingest.clip_length_s, split: cfg.ingest.mode };
    let m = ingest::preprocess_dir(&a.videos_dir, &a.landmarks_dir, &a.out_dir, &opts)?;
    info!("{} clips in {}", m.entries.len(), a.out_dir.display());
    Ok(())
}

fn synth_cmd(cfg: &mut RunConfig, a: SynthArgs) -> Result<()> {
    let s = &mut cfg.synth;
    set(&mut s.n, a.n);
    set(&mut s.n_test, a.n_test);
    set(&mut s.hr_min, a.hr_min);
    set(&mut s.hr_max, a.hr_max);
    set(&mut s.seed, a.seed);
    set(&mut s.duration_s, a.duration);
    set(&mut s.fps, a.fps);
    s.distractor |= a.distractor;
    let s = cfg.synth.clone();
    cfg.snapshot(&a.out)?;
    let template = SynthSpec {
        duration_s: s.duration_s,
        fps: s.fps,
        noise_std: s.noise_std,
        pulse_amplitude: s.pulse_amplitude,
        hr_drift: s.hr_drift,
        ..Default::default()
    };
    let mut opts = CohortOptions {
        template,
        distractor_bpm: s.distractor.then_some((40.0, 250.0)),
        distractor_amplitude: s.distractor_amplitude,
        split: Split::Train,
        raw_dir: a.raw.clone(),
    };
    let mut m = synth::make_cohort(&a.out, s.n, (s.hr_min, s.hr_max), s.seed, &opts)?;
    if s.n_test > 0 {
        opts.split = Split::Test;
        m = synth::make_cohort(&a.out, s.n_test, (s.hr_min, s.hr_max), s.seed.wrapping_add(1), &opts)?;
    }
    info!("{} clips in {}", m.entries.len(), a.out.display());
    Ok(())
}

fn train_cmd(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.clip_length_s, a.clip_length);
    set(&mut t.k, a.k);
    set(&mut t.s_out, a.s_out);
    set(&mut t.learning_rate, a.lr);
    set(&mut t.seed, a.seed);
    set(&mut t.base_channels, a.base_channels);
    set(&mut t.ipr_eval_every, a.ipr_every);
    set(&mut t.accumulate, a.accumulate);
    set(&mut t.weight_decay, a.weight_decay);
    let run_dir = a.run_dir.unwrap_or_else(|| cfg.run_root().join(format!("train-seed{}", cfg.train.seed)));
    let manifest = Manifest::load(&a.manifest)?;
    cfg.snapshot(&run_dir)?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
            warn!("cannot install interrupt handler: {e}");
        }
    }
    let hook = move |_: u64| stop.load(Ordering::SeqCst);
    let report = train::fit(&manifest, &cfg.train, &run_dir, &FitControl { stop: Some(&hook) })?;
    info!(
        "trained {} steps; final checkpoint {} ({}), best IPR {:?}",
        report.steps,
        report.final_checkpoint.display(),
        report.final_hash,
        report.best_ipr
    );
    Ok(())
}

fn default_out(checkpoint: &Path, name: &str) -> PathBuf {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let run = if dir.file_name().is_some_and(|n| n == "checkpoints") { dir.parent().unwrap_or(dir) } else { dir };
    run.join(name)
}

fn reference_for(manifest: &Manifest, entry: &ingest::ManifestEntry, mode: SaliencyMode, frames: usize) -> Result<SaliencyReference> {
    match mode {
        SaliencyMode::SelfRef => Ok(SaliencyReference::SelfDetached),
        _ => {
            let gt = manifest.ground_truth(entry)?.ok_or_else(|| Error::NoGroundTruth(entry.source_id.clone()))?;
            Ok(SaliencyReference::GroundTruth(gt.slice(0, frames)?))
        }
    }
}

fn eval_cmd(cfg: &mut RunConfig, a: EvalArgs) -> Result<()> {
    set(&mut cfg.eval.window_s, a.window);
    set(&mut cfg.eval.saliency, a.saliency);
    let out = a.out.unwrap_or_else(|| default_out(&a.checkpoint, "eval"));
    cfg.snapshot(&out)?;
    let ck = checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let opts = EvalOptions { window_s: cfg.eval.window_s, split: a.split };
    let (report, traces) = eval::evaluate(&manifest, &ck.model, &opts, Some(ck.hash_hex()))?;
    report.write(&out)?;
    eval::write_traces(&out.join("rppg"), &traces)?;
    if let Some(agr) = &report.summary.agreement {
        info!("MAE {:.3} bpm, RMSE {:.3} bpm, R {:?} over {} windows", agr.mae, agr.rmse, agr.r, report.summary.valid_windows);
    }
    if cfg.eval.saliency != SaliencyMode::Off {
        for entry in manifest.split(a.split).into_iter().take(cfg.eval.saliency_clips) {
            let frames = ((cfg.eval.window_s * entry.fps).round() as usize).min(entry.frames);
            let clip = manifest.open_clip(entry)?.read(0..frames)?;
            let reference = reference_for(&manifest, entry, cfg.eval.saliency, frames)?;
            let map = eval::saliency(&clip, &ck.model, &reference)?;
            eval::write_saliency(&out.join("saliency").join(&entry.source_id), &map, &clip)?;
        }
    }
    report.require_ground_truth()
}

fn saliency_cmd(a: SaliencyArgs) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let entries: Vec<_> = manifest
        .split(a.split)
        .into_iter()
        .filter(|e| a.clip.as_ref().is_none_or(|c| &e.source_id == c))
        .collect();
    if entries.is_empty() {
        return Err(Error::Config("no matching clips".into()));
    }
    for entry in entries {
        let frames = a.window.map_or(entry.frames, |w| ((w * entry.fps).round() as usize).min(entry.frames));
        let clip = manifest.open_clip(entry)?.read(0..frames)?;
        let reference = reference_for(&manifest, entry, a.reference, frames)?;
        let map = eval::saliency(&clip, &ck.model, &reference)?;
        let dir = a.out.join(&entry.source_id);
        eval::write_saliency(&dir, &map, &clip)?;
        if let Some(skin) = &entry.skin_region {
            info!("{}: mean saliency in skin {:.4}, outside {:.4}", entry.source_id, map.region_mean(skin), map.outside_mean(skin));
        }
    }
    Ok(())
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    if a.run.is_none() && a.report.is_none() {
        return Err(Error::Config("plot needs --run and/or --report".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    if let Some(run) = &a.run {
        let rows = train::read_log(&run.join(train::LOG_FILE))?;
        plot::training_curves(&rows, &a.out.join("training.svg"))?;
    }
    if let Some(dir) = &a.report {
        let report = eval::EvalReport::load(dir)?;
        plot::bland_altman(&report, &a.out.join("bland_altman.svg"))?;
        plot::hr_scatter(&report, &a.out.join("hr_scatter.svg"))?;
    }
    Ok(())
}
