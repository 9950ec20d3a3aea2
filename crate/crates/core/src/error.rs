use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal is constant: zero band power, cannot normalize")]
    ConstantSignal,
    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("frequency {hz:.4} Hz lies outside the heart-rate band")]
    OutOfBand { hz: f64 },
    #[error("peak detection found {found} peaks, need at least 3")]
    NoPeaks { found: usize },
    #[error("HRV analysis needs at least {required} peaks, got {found}")]
    TooFewPeaks { found: usize, required: usize },
    #[error("inter-beat interval series has no oscillatory power")]
    ZeroHf,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("block has {frames} frames, need at least {required}")]
    BlockTooShort { frames: usize, required: usize },
    #[error("PSD frequency grids differ")]
    GridMismatch,
    #[error("PSD set has {n} member(s), the positive term needs at least 2")]
    SingletonSet { n: usize },
    #[error("both PSD sets come from video '{0}'")]
    SameVideo(String),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("degenerate landmarks: zero vertical range in the first frame")]
    DegenerateLandmarks,
    #[error("decode failure: {0}")]
    DecodeFailure(String),
    #[error("video lasts {duration_s:.2} s, shorter than the {required_s:.2} s window")]
    VideoTooShort { duration_s: f64, required_s: f64 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("cannot place {n} heart rates at least {min_gap} bpm apart in [{lo}, {hi}] bpm")]
    RangeTooNarrow { n: usize, lo: f64, hi: f64, min_gap: f64 },
    #[error("manifest must contain at least two distinct source videos")]
    SingleVideo,
    #[error("training interrupted at step {step}; resume state saved")]
    Interrupted { step: u64 },
    #[error("no ground truth available for '{0}'")]
    NoGroundTruth(String),
    #[error("saliency gradient is identically zero")]
    DegenerateSaliency,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI error line and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ConstantSignal => "ConstantSignal",
            Error::TooShort { .. } => "TooShort",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::OutOfBand { .. } => "OutOfBand",
            Error::NoPeaks { .. } => "NoPeaks",
            Error::TooFewPeaks { .. } => "TooFewPeaks",
            Error::ZeroHf => "ZeroHF",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::Empty => "Empty",
            Error::BlockTooShort { .. } => "BlockTooShort",
            Error::GridMismatch => "GridMismatch",
            Error::SingletonSet { .. } => "SingletonSet",
            Error::SameVideo(_) => "SameVideo",
            Error::BadShape(_) => "BadShape",
            Error::CorruptCheckpoint(_) => "CorruptCheckpoint",
            Error::DegenerateLandmarks => "DegenerateLandmarks",
            Error::DecodeFailure(_) => "DecodeFailure",
            Error::VideoTooShort { .. } => "VideoTooShort",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::RangeTooNarrow { .. } => "RangeTooNarrow",
            Error::SingleVideo => "SingleVideo",
            Error::Interrupted { .. } => "Interrupted",
            Error::NoGroundTruth(_) => "NoGroundTruth",
            Error::DegenerateSaliency => "DegenerateSaliency",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
