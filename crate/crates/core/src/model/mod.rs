//! The 3-D spatiotemporal encoder mapping a `T x 128 x 128 x 3` face clip to a
//! `T x S x S` block of rPPG signals.
//!
//! Topology: a `1x5x5` stem; four encoder stages that each halve the spatial
//! resolution (stages 2 and 3 also halve time) before a `3x3x3` convolution;
//! two temporal transposed convolutions restoring the input length; adaptive
//! spatial average pooling to `S x S`; a `1x1x1` projection to one channel.
//! Every convolution is followed by batch normalization and ELU.

pub mod checkpoint;
pub mod layers;
pub mod tensor;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strppg::{StBlock, SPATIAL_SIZES};
use layers::{AvgPool, BatchNorm, BnStats, Conv3d, Projection, TemporalUpConv};
pub use tensor::Tensor;

pub const INPUT_SIZE: usize = 128;
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Output spatial side `S`.
    pub s_out: usize,
    /// Channel width of the stem; deeper stages use twice this.
    pub base_channels: usize,
    pub frame_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { s_out: 2, base_channels: 8, frame_rate: 30.0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !SPATIAL_SIZES.contains(&self.s_out) {
            return Err(Error::InvalidArgument(format!("s_out {} not in {SPATIAL_SIZES:?}", self.s_out)));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be positive".into()));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::InvalidArgument("frame_rate must be positive".into()));
        }
        Ok(())
    }

    /// Shortest accepted clip, two seconds.
    pub fn min_frames(&self) -> usize {
        crate::strppg::min_frames(self.frame_rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBlock {
    conv: Conv3d,
    bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
struct UpBlock {
    up: TemporalUpConv,
    bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Block(ConvBlock),
    Pool(AvgPool),
    Up(UpBlock),
    Adaptive,
    Project(Projection),
}

enum Entry {
    Block { input: Tensor, z: Tensor, stats: BnStats },
    Pool { in_shape: [usize; 4] },
    Up { input: Tensor, z: Tensor, stats: BnStats },
    Adaptive { in_shape: [usize; 4] },
    Project { input: Tensor },
}

/// Activations recorded by a taped forward pass, consumed by [`Encoder::backward`].
pub struct Tape {
    entries: Vec<Entry>,
    out_shape: [usize; 4],
}

/// Per-parameter gradient buffers, in [`Encoder::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn scale(&mut self, k: f32) {
        self.0.iter_mut().flatten().for_each(|g| *g *= k);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
pub struct Encoder {
    cfg: ModelConfig,
    layers: Vec<Layer>,
    forwards: AtomicU64,
}

impl Clone for Encoder {
    fn clone(&self) -> Self {
        Self { cfg: self.cfg, layers: self.layers.clone(), forwards: AtomicU64::new(0) }
    }
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.layers == other.layers
    }
}

impl Encoder {
    /// Freshly initialized network; initialization is a pure function of `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.base_channels;
        let c2 = 2 * c;
        let block = |cin, cout, kernel, rng: &mut ChaCha8Rng| {
            Layer::Block(ConvBlock { conv: Conv3d::new(cin, cout, kernel, rng), bn: BatchNorm::new(cout) })
        };
        let up = |ch, rng: &mut ChaCha8Rng| Layer::Up(UpBlock { up: TemporalUpConv::new(ch, ch, rng), bn: BatchNorm::new(ch) });
        let layers = vec![
            block(INPUT_CHANNELS, c, [1, 5, 5], &mut rng),
            Layer::Pool(AvgPool { factor: [1, 2, 2] }),
            block(c, c, [3, 3, 3], &mut rng),
            Layer::Pool(AvgPool { factor: [2, 2, 2] }),
            block(c, c2, [3, 3, 3], &mut rng),
            Layer::Pool(AvgPool { factor: [2, 2, 2] }),
            block(c2, c2, [3, 3, 3], &mut rng),
            Layer::Pool(AvgPool { factor: [1, 2, 2] }),
            block(c2, c2, [3, 3, 3], &mut rng),
            up(c2, &mut rng),
            up(c2, &mut rng),
            Layer::Adaptive,
            Layer::Project(Projection::new(c2, &mut rng)),
        ];
        Ok(Self { cfg, layers, forwards: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Same weights, different output grid. Parameters do not depend on `S`.
    pub fn with_s_out(&self, s_out: usize) -> Result<Self> {
        let cfg = ModelConfig { s_out, ..self.cfg };
        cfg.validate()?;
        Ok(Self { cfg, layers: self.layers.clone(), forwards: AtomicU64::new(0) })
    }

    /// Number of encoder forward passes run so far (any mode).
    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn params(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Block(b) => out.extend([&b.conv.weight[..], &b.conv.bias, &b.bn.gamma, &b.bn.beta]),
                Layer::Up(u) => out.extend([&u.up.weight[..], &u.up.bias, &u.bn.gamma, &u.bn.beta]),
                Layer::Project(p) => out.extend([&p.weight[..], &p.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Block(b) => out.extend([&mut b.conv.weight[..], &mut b.conv.bias, &mut b.bn.gamma, &mut b.bn.beta]),
                Layer::Up(u) => out.extend([&mut u.up.weight[..], &mut u.up.bias, &mut u.bn.gamma, &mut u.bn.beta]),
                Layer::Project(p) => out.extend([&mut p.weight[..], &mut p.bias]),
                _ => {}
            }
        }
        out
    }

    /// Normalization running statistics, `[mean, var]` per normalization layer.
    pub fn buffers(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Block(ConvBlock { bn, .. }) | Layer::Up(UpBlock { bn, .. }) => {
                    out.extend([&bn.running_mean[..], &bn.running_var])
                }
                _ => {}
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Block(ConvBlock { bn, .. }) | Layer::Up(UpBlock { bn, .. }) => {
                    out.extend([&mut bn.running_mean[..], &mut bn.running_var])
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != INPUT_CHANNELS || x.h != INPUT_SIZE || x.w != INPUT_SIZE {
            return Err(Error::BadShape(format!(
                "expected T x {INPUT_SIZE} x {INPUT_SIZE} x {INPUT_CHANNELS}, got {} x {} x {} x {}",
                x.t, x.h, x.w, x.c
            )));
        }
        let min = self.cfg.min_frames();
        if x.t < min {
            return Err(Error::TooShort { len: x.t, min });
        }
        Ok(())
    }

    /// Inference-mode forward (running normalization statistics, no tape).
    pub fn forward(&self, x: &Tensor) -> Result<StBlock> {
        self.check_input(x)?;
        let (out, _, _) = self.run(x, Mode::Eval, false);
        self.to_block(&out)
    }

    /// Inference-mode forward that records a tape for input gradients.
    pub fn forward_eval_taped(&self, x: &Tensor) -> Result<(StBlock, Tape)> {
        self.check_input(x)?;
        let (out, tape, _) = self.run(x, Mode::Eval, true);
        Ok((self.to_block(&out)?, tape.expect("taped run")))
    }

    /// Training-mode forward: batch statistics, running-average update, taped.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(StBlock, Tape)> {
        self.check_input(x)?;
        let (out, tape, updates) = self.run(x, Mode::Train, true);
        let mut updates = updates.into_iter();
        for layer in &mut self.layers {
            if let Layer::Block(ConvBlock { bn, .. }) | Layer::Up(UpBlock { bn, .. }) = layer {
                let (mean, var) = updates.next().expect("one update per normalization layer");
                bn.update_running(&mean, &var);
            }
        }
        Ok((self.to_block(&out)?, tape.expect("taped run")))
    }

    fn to_block(&self, out: &Tensor) -> Result<StBlock> {
        let values = out.data.iter().map(|&v| v as f64).collect();
        StBlock::new(values, out.t, self.cfg.s_out, self.cfg.frame_rate)
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, x: &Tensor, mode: Mode, record: bool) -> (Tensor, Option<Tape>, Vec<(Vec<f32>, Vec<f32>)>) {
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let mut entries = Vec::new();
        let mut updates = Vec::new();
        let mut lengths = Vec::new();
        let mut cur: Option<Tensor> = None;
        for layer in &self.layers {
            let input = cur.as_ref().unwrap_or(x);
            let stats_for = |bn: &BatchNorm, z: &Tensor, updates: &mut Vec<(Vec<f32>, Vec<f32>)>| match mode {
                Mode::Train => {
                    let (stats, unbiased) = bn.batch_stats(z);
                    updates.push((stats.mean.clone(), unbiased));
                    stats
                }
                Mode::Eval => bn.running_stats(),
            };
            let next = match layer {
                Layer::Block(b) => {
                    let z = b.conv.forward(input);
                    let stats = stats_for(&b.bn, &z, &mut updates);
                    let a = b.bn.normalize_elu(&z, &stats);
                    if record {
                        let input = cur.take().unwrap_or_else(|| x.clone());
                        entries.push(Entry::Block { input, z, stats });
                    }
                    a
                }
                Layer::Pool(p) => {
                    if p.factor[0] > 1 {
                        lengths.push(input.t);
                    }
                    if record {
                        entries.push(Entry::Pool { in_shape: input.shape() });
                    }
                    p.forward(input)
                }
                Layer::Up(u) => {
                    let target = lengths.pop().expect("every upsampling stage has a matching temporal pool");
                    let z = u.up.forward(input, target);
                    let stats = stats_for(&u.bn, &z, &mut updates);
                    let a = u.bn.normalize_elu(&z, &stats);
                    if record {
                        let input = cur.take().expect("upsampling never runs first");
                        entries.push(Entry::Up { input, z, stats });
                    }
                    a
                }
                Layer::Adaptive => {
                    if record {
                        entries.push(Entry::Adaptive { in_shape: input.shape() });
                    }
                    layers::adaptive_pool_forward(input, self.cfg.s_out)
                }
                Layer::Project(p) => {
                    let y = p.forward(input);
                    if record {
                        let input = cur.take().expect("projection never runs first");
                        entries.push(Entry::Project { input });
                    }
                    y
                }
            };
            cur = Some(next);
        }
        let out = cur.expect("network has layers");
        let tape = record.then(|| Tape { entries, out_shape: out.shape() });
        (out, tape, updates)
    }

    /// Backpropagates a gradient on the output block (frame-major `T x S x S`).
    ///
    /// Parameter gradients are accumulated into `grads` when given; the input
    /// gradient is returned when `want_input`.
    pub fn backward(&self, tape: Tape, grad_block: &[f64], mut grads: Option<&mut Grads>, want_input: bool) -> Option<Tensor> {
        let [t, c, h, w] = tape.out_shape;
        assert_eq!(grad_block.len(), t * c * h * w, "gradient does not match the output block");
        let mut g = Tensor::from_vec(t, c, h, w, grad_block.iter().map(|&v| v as f32).collect());

        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += match l {
                    Layer::Block(_) | Layer::Up(_) => 4,
                    Layer::Project(_) => 2,
                    _ => 0,
                };
                Some(start)
            })
            .collect();

        let mut entries = tape.entries;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let entry = entries.pop().expect("tape matches layers");
            let first = idx == 0;
            let slot = offsets[idx];
            match (layer, entry) {
                (Layer::Block(b), Entry::Block { input, z, stats }) => {
                    b.bn.backward_elu(&z, &stats, &mut g, grads.as_deref_mut().map(|gr| &mut gr.0[slot + 2..slot + 4]));
                    drop(z);
                    let dx = b.conv.backward(&input, &g, grads.as_deref_mut().map(|gr| &mut gr.0[slot..slot + 2]), !first || want_input);
                    match dx {
                        Some(dx) => g = dx,
                        None => return None,
                    }
                }
                (Layer::Pool(p), Entry::Pool { in_shape }) => g = p.backward(in_shape, &g),
                (Layer::Up(u), Entry::Up { input, z, stats }) => {
                    u.bn.backward_elu(&z, &stats, &mut g, grads.as_deref_mut().map(|gr| &mut gr.0[slot + 2..slot + 4]));
                    g = u
                        .up
                        .backward(&input, &g, grads.as_deref_mut().map(|gr| &mut gr.0[slot..slot + 2]), true)
                        .expect("input gradient requested");
                }
                (Layer::Adaptive, Entry::Adaptive { in_shape }) => g = layers::adaptive_pool_backward(in_shape, &g),
                (Layer::Project(p), Entry::Project { input }) => {
                    g = p.backward(&input, &g, grads.as_deref_mut().map(|gr| &mut gr.0[slot..slot + 2]));
                }
                _ => unreachable!("tape entry does not match layer"),
            }
        }
        want_input.then_some(g)
    }

    /// Largest input frame index that can influence output frame `t` in inference mode.
    pub fn temporal_reach(&self, t: usize) -> usize {
        let mut idx = t;
        for layer in self.layers.iter().rev() {
            idx = match layer {
                Layer::Block(b) => idx + b.conv.kernel[0] / 2,
                Layer::Pool(p) => idx * p.factor[0] + p.factor[0] - 1,
                Layer::Up(_) => (idx + 1) / 2,
                Layer::Adaptive | Layer::Project(_) => idx,
            };
        }
        idx
    }

    /// Inclusive input pixel rows and columns that can influence output cell `(i, j)`.
    pub fn spatial_field(&self, i: usize, j: usize) -> ((usize, usize), (usize, usize)) {
        // Spatial size seen by the adaptive pool.
        let mut side = INPUT_SIZE;
        for layer in &self.layers {
            if let Layer::Pool(p) = layer {
                side /= p.factor[1];
            }
        }
        let cell = |k: usize| {
            let (a, b) = layers::adaptive_bounds(side, self.cfg.s_out, k);
            (a as isize, b as isize - 1)
        };
        let (mut rows, mut cols) = (cell(i), cell(j));
        let mut size = side as isize;
        let adaptive_at = self.layers.iter().position(|l| matches!(l, Layer::Adaptive)).unwrap_or(self.layers.len());
        for layer in self.layers[..adaptive_at].iter().rev() {
            match layer {
                Layer::Block(b) => {
                    let pad = (b.conv.kernel[1] / 2) as isize;
                    rows = ((rows.0 - pad).max(0), (rows.1 + pad).min(size - 1));
                    cols = ((cols.0 - pad).max(0), (cols.1 + pad).min(size - 1));
                }
                Layer::Pool(p) => {
                    let f = p.factor[1] as isize;
                    size *= f;
                    rows = (rows.0 * f, rows.1 * f + f - 1);
                    cols = (cols.0 * f, cols.1 * f + f - 1);
                }
                _ => {}
            }
        }
        ((rows.0 as usize, rows.1 as usize), (cols.0 as usize, cols.1 as usize))
    }
}

/// Parameter count of a configuration.
pub fn parameter_count(cfg: &ModelConfig) -> Result<usize> {
    Ok(Encoder::new(*cfg, 0)?.parameter_count())
}

/// Per-channel zero-mean, unit-variance standardization of an RGB clip stored as
/// `[T][H][W][3]` values, producing the encoder's `[T, C, H, W]` input.
pub fn standardize_clip(frames: &[f32], t: usize, h: usize, w: usize) -> Tensor {
    assert_eq!(frames.len(), t * h * w * INPUT_CHANNELS, "clip data does not match shape");
    let n = (t * h * w) as f64;
    let mut mean = [0.0f64; INPUT_CHANNELS];
    for px in frames.chunks_exact(INPUT_CHANNELS) {
        for c in 0..INPUT_CHANNELS {
            mean[c] += px[c] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0f64; INPUT_CHANNELS];
    for px in frames.chunks_exact(INPUT_CHANNELS) {
        for c in 0..INPUT_CHANNELS {
            var[c] += (px[c] as f64 - mean[c]).powi(2);
        }
    }
    let inv: Vec<f64> = var.iter().map(|v| if *v > 0.0 { 1.0 / (v / n).sqrt() } else { 1.0 }).collect();
    let hw = h * w;
    let mut out = Tensor::zeros(t, INPUT_CHANNELS, h, w);
    for ti in 0..t {
        for p in 0..hw {
            let px = &frames[(ti * hw + p) * INPUT_CHANNELS..(ti * hw + p + 1) * INPUT_CHANNELS];
            for c in 0..INPUT_CHANNELS {
                out.data[(ti * INPUT_CHANNELS + c) * hw + p] = ((px[c] as f64 - mean[c]) * inv[c]) as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t * INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE;
        Tensor::from_vec(t, INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn small_cfg(s_out: usize) -> ModelConfig {
        ModelConfig { s_out, base_channels: 2, frame_rate: 8.0 }
    }

    #[test]
    fn output_shape_and_determinism() {
        let enc = Encoder::new(small_cfg(2), 1).unwrap();
        let x = random_input(21, 2);
        let a = enc.forward(&x).unwrap();
        assert_eq!((a.frames(), a.side()), (21, 2));
        let b = enc.forward(&x).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn bad_inputs() {
        let enc = Encoder::new(small_cfg(2), 1).unwrap();
        let x = Tensor::zeros(20, 3, 64, 64);
        assert!(matches!(enc.forward(&x), Err(Error::BadShape(_))));
        let x = Tensor::zeros(10, 3, 128, 128);
        assert!(matches!(enc.forward(&x), Err(Error::TooShort { .. })));
        assert!(Encoder::new(ModelConfig { s_out: 3, ..small_cfg(2) }, 0).is_err());
    }

    #[test]
    fn coarse_grid_is_mean_of_fine_grid() {
        let enc8 = Encoder::new(small_cfg(8), 5).unwrap();
        let enc1 = enc8.with_s_out(1).unwrap();
        let x = random_input(16, 6);
        let fine = enc8.forward(&x).unwrap();
        let coarse = enc1.forward(&x).unwrap();
        for t in 0..16 {
            let mean = fine.values()[t * 64..(t + 1) * 64].iter().sum::<f64>() / 64.0;
            assert!((mean - coarse.values()[t]).abs() < 1e-5);
        }
    }

    #[test]
    fn wider_network_has_more_parameters() {
        let a = parameter_count(&ModelConfig { base_channels: 4, ..Default::default() }).unwrap();
        let b = parameter_count(&ModelConfig { base_channels: 8, ..Default::default() }).unwrap();
        assert!(b > a);
    }

    #[test]
    fn no_leakage_past_temporal_reach() {
        let enc = Encoder::new(small_cfg(2), 7).unwrap();
        let x = random_input(40, 8);
        let probe = 9;
        let reach = enc.temporal_reach(probe);
        assert!(reach > probe && reach < 39, "reach {reach}");
        let mut y = x.clone();
        let frame = y.frame_len();
        for v in &mut y.data[(reach + 1) * frame..] {
            *v = -*v + 0.5;
        }
        let a = enc.forward(&x).unwrap();
        let b = enc.forward(&y).unwrap();
        for cell in 0..4 {
            assert_eq!(a.values()[probe * 4 + cell].to_bits(), b.values()[probe * 4 + cell].to_bits());
        }
        // The reach is tight: touching frame `reach` does change the probe.
        let mut z = x.clone();
        for v in &mut z.data[reach * frame..(reach + 1) * frame] {
            *v += 1.0;
        }
        let c = enc.forward(&z).unwrap();
        assert!((0..4).any(|cell| a.values()[probe * 4 + cell] != c.values()[probe * 4 + cell]));
    }

    #[test]
    fn input_gradient_is_confined_to_the_spatial_field() {
        let enc = Encoder::new(small_cfg(8), 9).unwrap();
        let x = random_input(16, 10);
        let (block, tape) = enc.forward_eval_taped(&x).unwrap();
        let (ci, cj) = (1, 6);
        let mut grad = vec![0.0; block.values().len()];
        for t in 0..16 {
            grad[(t * 8 + ci) * 8 + cj] = 1.0;
        }
        let dx = enc.backward(tape, &grad, None, true).unwrap();
        let ((r0, r1), (c0, c1)) = enc.spatial_field(ci, cj);
        assert!(r1 - r0 < INPUT_SIZE / 2 && c1 - c0 < INPUT_SIZE / 2);
        let (mut inside, mut nonzero) = (0usize, 0usize);
        for t in 0..16 {
            for c in 0..3 {
                for h in 0..INPUT_SIZE {
                    for w in 0..INPUT_SIZE {
                        let g = dx.data[dx.index(t, c, h, w)];
                        if (r0..=r1).contains(&h) && (c0..=c1).contains(&w) {
                            inside += 1;
                            nonzero += usize::from(g != 0.0);
                        } else {
                            assert_eq!(g, 0.0, "gradient leaks to ({h}, {w})");
                        }
                    }
                }
            }
        }
        assert!(nonzero as f64 > 0.9 * inside as f64, "{nonzero}/{inside}");
    }

    #[test]
    fn parameter_gradient_matches_differences() {
        let mut enc = Encoder::new(small_cfg(2), 11).unwrap();
        let x = random_input(16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let probe: Vec<f64> = (0..16 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |enc: &Encoder| -> f64 {
            let mut e = enc.clone();
            let (b, _) = e.forward_train(&x).unwrap();
            b.values().iter().zip(&probe).map(|(v, p)| v * p).sum()
        };
        let mut grads = enc.zero_grads();
        let (_, tape) = enc.forward_train(&x).unwrap();
        enc.backward(tape, &probe, Some(&mut grads), false);
        let base = enc.clone();
        // A few entries from several tensors: stem conv, a deep conv, an upsampler, the projection.
        for (tensor, idx) in [(0usize, 3usize), (1, 0), (12, 7), (16, 5), (21, 1), (24, 0), (25, 0)] {
            let h = 1e-2f32;
            let mut up = base.clone();
            up.params_mut()[tensor][idx] += h;
            let mut dn = base.clone();
            dn.params_mut()[tensor][idx] -= h;
            let fd = (objective(&up) - objective(&dn)) / (2.0 * h as f64);
            let an = grads.0[tensor][idx] as f64;
            assert!((fd - an).abs() < 2e-2 * an.abs().max(1e-1), "tensor {tensor}[{idx}]: fd {fd} vs {an}");
        }
    }
}
