//! Run configuration: one TOML file covering ingest, synthesis, training and
//! evaluation, overridable from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Split;
use crate::model::checkpoint::write_atomic;
use crate::train::TrainConfig;

/// Environment variable naming the default run root.
pub const RUN_ROOT_ENV: &str = "RPPG_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";
pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    pub fps: f64,
    pub clip_length_s: f64,
    pub mode: Split,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { fps: 30.0, clip_length_s: 30.0, mode: Split::Test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub n: usize,
    pub n_test: usize,
    pub hr_min: f64,
    pub hr_max: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub fps: f64,
    pub noise_std: f32,
    pub pulse_amplitude: f32,
    pub hr_drift: f64,
    pub distractor: bool,
    pub distractor_amplitude: f32,
}

impl Default for SynthSection {
    fn default() -> Self {
        let spec = crate::synth::SynthSpec::default();
        Self {
            n: 8,
            n_test: 0,
            hr_min: 50.0,
            hr_max: 150.0,
            seed: 0,
            duration_s: spec.duration_s,
            fps: spec.fps,
            noise_std: spec.noise_std,
            pulse_amplitude: spec.pulse_amplitude,
            hr_drift: spec.hr_drift,
            distractor: false,
            distractor_amplitude: crate::synth::CohortOptions::default().distractor_amplitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyMode {
    Off,
    Gt,
    #[value(name = "self")]
    #[serde(rename = "self")]
    SelfRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub window_s: f64,
    pub saliency: SaliencyMode,
    /// Clips per split for which saliency maps are written.
    pub saliency_clips: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { window_s: 30.0, saliency: SaliencyMode::Off, saliency_clips: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_root: Option<PathBuf>,
    pub ingest: IngestSection,
    pub synth: SynthSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The file's values, or defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Run root: the config value, else the environment, else `runs`.
    pub fn run_root(&self) -> PathBuf {
        self.run_root
            .clone()
            .or_else(|| std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
    }

    /// Writes the fully resolved configuration into a run directory.
    pub fn snapshot(&self, run_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(SNAPSHOT_FILE);
        write_atomic(&path, self.to_toml()?.as_bytes())?;
        Ok(path)
    }
}
