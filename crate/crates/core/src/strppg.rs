//! Spatiotemporal rPPG blocks and the sampler that draws training clips from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Output spatial side lengths the encoder supports.
pub const SPATIAL_SIZES: [usize; 4] = [1, 2, 4, 8];

/// A `T x S x S` grid of rPPG signals, one per coarse spatial cell, stored frame-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StBlock {
    values: Vec<f64>,
    frames: usize,
    side: usize,
    fs: f64,
}

impl StBlock {
    pub fn new(values: Vec<f64>, frames: usize, side: usize, fs: f64) -> Result<Self> {
        if !SPATIAL_SIZES.contains(&side) {
            return Err(Error::BadShape(format!("spatial side {side} not in {SPATIAL_SIZES:?}")));
        }
        if values.len() != frames * side * side {
            return Err(Error::BadShape(format!(
                "{} values for a {frames}x{side}x{side} block",
                values.len()
            )));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidArgument(format!("frame rate must be positive, got {fs}")));
        }
        let required = min_frames(fs);
        if frames < required {
            return Err(Error::BlockTooShort { frames, required });
        }
        Ok(Self { values, frames, side, fs })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, t: usize, h: usize, w: usize) -> f64 {
        self.values[(t * self.side + h) * self.side + w]
    }

    /// The full trace at one spatial cell.
    pub fn trace(&self, h: usize, w: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.at(t, h, w)).collect()
    }

    /// Length of every training sample, `floor(T / 2)`.
    pub fn sample_len(&self) -> usize {
        self.frames / 2
    }
}

/// Blocks need at least two seconds (and four frames) so half-length samples carry a spectrum.
pub fn min_frames(fs: f64) -> usize {
    ((2.0 * fs).ceil() as usize).max(4)
}

/// Provenance of one spatiotemporal sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleSpec {
    pub h: usize,
    pub w: usize,
    pub t0: usize,
    pub dt: usize,
}

/// Draws `K` clips per spatial cell with independent uniform start frames.
///
/// Output order is row-major over cells, then draw index.
pub fn sample_block<R: Rng + ?Sized>(block: &StBlock, k: usize, rng: &mut R) -> Result<Vec<(SampleSpec, Waveform)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let required = min_frames(block.fs);
    if block.frames < required {
        return Err(Error::BlockTooShort { frames: block.frames, required });
    }
    let dt = block.sample_len();
    let max_start = block.frames - dt;
    let mut out = Vec::with_capacity(block.side * block.side * k);
    for h in 0..block.side {
        for w in 0..block.side {
            for _ in 0..k {
                let t0 = rng.random_range(0..=max_start);
                let spec = SampleSpec { h, w, t0, dt };
                out.push((spec, extract(block, &spec)?));
            }
        }
    }
    Ok(out)
}

/// The waveform a spec points at.
pub fn extract(block: &StBlock, spec: &SampleSpec) -> Result<Waveform> {
    if spec.h >= block.side || spec.w >= block.side || spec.t0 + spec.dt > block.frames {
        return Err(Error::InvalidArgument(format!("sample {spec:?} outside block")));
    }
    Waveform::new((spec.t0..spec.t0 + spec.dt).map(|t| block.at(t, spec.h, spec.w)).collect(), block.fs)
}

/// Accumulates a gradient on a sample back into a block-shaped gradient buffer.
pub fn scatter_grad(grad_block: &mut [f64], side: usize, spec: &SampleSpec, grad: &[f64]) {
    debug_assert_eq!(grad.len(), spec.dt);
    for (i, g) in grad.iter().enumerate() {
        grad_block[((spec.t0 + i) * side + spec.h) * side + spec.w] += g;
    }
}

/// Test-time readout: mean over all cells per frame.
pub fn spatial_average(block: &StBlock) -> Waveform {
    let cells = block.side * block.side;
    let samples = block
        .values
        .chunks_exact(cells)
        .map(|frame| frame.iter().sum::<f64>() / cells as f64)
        .collect();
    Waveform::new(samples, block.fs).expect("blocks have at least four frames")
}
