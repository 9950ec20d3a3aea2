//! Layer kernels with hand-written backward passes.
//!
//! Every kernel partitions work so each output element (or each partial
//! gradient chunk) is produced by exactly one task, and partial sums are
//! reduced in a fixed order. Results are therefore bit-identical regardless
//! of the rayon pool size.

use rand::Rng;
use rayon::prelude::*;

use super::tensor::Tensor;

/// Frames per partial weight-gradient buffer.
const GRAD_CHUNK: usize = 16;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// `C = A * B + beta * C` on strided row/column views.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa);
    debug_assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the debug assertions above spell out the extent each operand is
    // read or written at; callers pass slices that cover it.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn uniform_init<R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Stride-1 3-D convolution with "same" zero padding and odd kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    /// `[cout][cin][kt][kh][kw]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, kernel: [usize; 3], rng: &mut R) -> Self {
        assert!(kernel.iter().all(|k| k % 2 == 1), "kernels must be odd");
        let fan_in = cin * kernel.iter().product::<usize>();
        Self {
            cin,
            cout,
            kernel,
            weight: uniform_init(cout * fan_in, fan_in, rng),
            bias: uniform_init(cout, fan_in, rng),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        conv_same(x, &self.weight, Some(&self.bias), self.cout, self.kernel)
    }

    /// Accumulates parameter gradients into `grads` (`[weight, bias]`) when given,
    /// and returns the input gradient when `want_dx`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: Option<&mut [Vec<f32>]>, want_dx: bool) -> Option<Tensor> {
        if let Some(grads) = grads {
            let k = self.patch_len();
            let hw = x.plane();
            let chunks = x.t.div_ceil(GRAD_CHUNK);
            let partials: Vec<Vec<f32>> = (0..chunks)
                .into_par_iter()
                .map(|chunk| {
                    let mut gw = vec![0.0f32; self.cout * k];
                    let mut col = vec![0.0f32; k * hw];
                    for t in chunk * GRAD_CHUNK..((chunk + 1) * GRAD_CHUNK).min(x.t) {
                        im2col(x, t, self.kernel, &mut col);
                        gemm(self.cout, hw, k, dy.frame(t), hw, 1, &col, 1, hw, 1.0, &mut gw, k);
                    }
                    gw
                })
                .collect();
            for part in partials {
                for (g, p) in grads[0].iter_mut().zip(&part) {
                    *g += p;
                }
            }
            for co in 0..self.cout {
                let mut s = 0.0f64;
                for t in 0..dy.t {
                    s += dy.frame(t)[co * hw..(co + 1) * hw].iter().map(|&v| v as f64).sum::<f64>();
                }
                grads[1][co] += s as f32;
            }
        }
        if !want_dx {
            return None;
        }
        // Input gradient of a same-padded stride-1 convolution is a convolution of
        // the output gradient with the flipped, channel-transposed kernel.
        let [kt, kh, kw] = self.kernel;
        let vol = kt * kh * kw;
        let mut flipped = vec![0.0f32; self.weight.len()];
        for co in 0..self.cout {
            for ci in 0..self.cin {
                for a in 0..kt {
                    for b in 0..kh {
                        for c in 0..kw {
                            let src = (co * self.cin + ci) * vol + (a * kh + b) * kw + c;
                            let dst = (ci * self.cout + co) * vol + ((kt - 1 - a) * kh + (kh - 1 - b)) * kw + (kw - 1 - c);
                            flipped[dst] = self.weight[src];
                        }
                    }
                }
            }
        }
        Some(conv_same(dy, &flipped, None, self.cin, self.kernel))
    }
}

/// Unfolds the receptive fields of output frame `t` into `col` (`[patch][h*w]`).
fn im2col(x: &Tensor, t: usize, kernel: [usize; 3], col: &mut [f32]) {
    let [kt, kh, kw] = kernel;
    let (pt, ph, pw) = (kt / 2, kh / 2, kw / 2);
    let (hgt, wid) = (x.h, x.w);
    let hw = hgt * wid;
    for ci in 0..x.c {
        for a in 0..kt {
            let tt = t as isize + a as isize - pt as isize;
            for b in 0..kh {
                for c in 0..kw {
                    let row = ((ci * kt + a) * kh + b) * kw + c;
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    if tt < 0 || tt >= x.t as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let base = x.index(tt as usize, ci, 0, 0);
                    let src = &x.data[base..base + hw];
                    let w_lo = pw.saturating_sub(c).min(wid);
                    let w_hi = (wid + pw).saturating_sub(c).min(wid);
                    for h in 0..hgt {
                        let drow = &mut dst[h * wid..(h + 1) * wid];
                        let hh = h as isize + b as isize - ph as isize;
                        if hh < 0 || hh >= hgt as isize || w_lo >= w_hi {
                            drow.fill(0.0);
                            continue;
                        }
                        let srow = &src[hh as usize * wid..(hh as usize + 1) * wid];
                        drow[..w_lo].fill(0.0);
                        drow[w_lo..w_hi].copy_from_slice(&srow[w_lo + c - pw..w_hi + c - pw]);
                        drow[w_hi..].fill(0.0);
                    }
                }
            }
        }
    }
}

fn conv_same(x: &Tensor, weight: &[f32], bias: Option<&[f32]>, cout: usize, kernel: [usize; 3]) -> Tensor {
    let k = x.c * kernel.iter().product::<usize>();
    assert_eq!(weight.len(), cout * k, "conv weight shape");
    let hw = x.plane();
    let mut out = Tensor::zeros(x.t, cout, x.h, x.w);
    out.data.par_chunks_mut(cout * hw).enumerate().for_each_init(
        || vec![0.0f32; k * hw],
        |col, (t, of)| {
            im2col(x, t, kernel, col);
            gemm(cout, k, hw, weight, k, 1, col, hw, 1, 0.0, of, hw);
            if let Some(bias) = bias {
                for (co, b) in bias.iter().enumerate() {
                    of[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += b);
                }
            }
        },
    );
    out
}

/// Non-overlapping average pooling; trailing remainders are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool {
    pub factor: [usize; 3],
}

impl AvgPool {
    pub fn out_shape(&self, x: [usize; 4]) -> [usize; 4] {
        let [pt, ph, pw] = self.factor;
        [x[0] / pt, x[1], x[2] / ph, x[3] / pw]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let [pt, ph, pw] = self.factor;
        let [t, c, h, w] = self.out_shape(x.shape());
        let scale = 1.0 / (pt * ph * pw) as f32;
        let mut out = Tensor::zeros(t, c, h, w);
        let frame = c * h * w;
        out.data.par_chunks_mut(frame).enumerate().for_each(|(to, of)| {
            for ci in 0..c {
                for ho in 0..h {
                    for wo in 0..w {
                        let mut s = 0.0f32;
                        for a in 0..pt {
                            for b in 0..ph {
                                let row = x.index(to * pt + a, ci, ho * ph + b, wo * pw);
                                s += x.data[row..row + pw].iter().sum::<f32>();
                            }
                        }
                        of[(ci * h + ho) * w + wo] = s * scale;
                    }
                }
            }
        });
        out
    }

    pub fn backward(&self, in_shape: [usize; 4], dy: &Tensor) -> Tensor {
        let [pt, ph, pw] = self.factor;
        let mut dx = Tensor::zeros(in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let scale = 1.0 / (pt * ph * pw) as f32;
        for to in 0..dy.t {
            for ci in 0..dy.c {
                for ho in 0..dy.h {
                    for wo in 0..dy.w {
                        let g = dy.data[dy.index(to, ci, ho, wo)] * scale;
                        for a in 0..pt {
                            for b in 0..ph {
                                let row = dx.index(to * pt + a, ci, ho * ph + b, wo * pw);
                                dx.data[row..row + pw].iter_mut().for_each(|v| *v = g);
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Per-channel normalization statistics used by one forward pass.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
    /// Batch statistics (training) rather than running statistics.
    pub batch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self { gamma: vec![1.0; c], beta: vec![0.0; c], running_mean: vec![0.0; c], running_var: vec![1.0; c] }
    }

    /// Batch statistics of `z` plus the unbiased variances for the running update.
    pub fn batch_stats(&self, z: &Tensor) -> (BnStats, Vec<f32>) {
        let hw = z.plane();
        let n = (z.t * hw) as f64;
        let mut mean = Vec::with_capacity(z.c);
        let mut inv_std = Vec::with_capacity(z.c);
        let mut unbiased = Vec::with_capacity(z.c);
        for c in 0..z.c {
            let (mut s, mut ss) = (0.0f64, 0.0f64);
            for t in 0..z.t {
                for &v in &z.frame(t)[c * hw..(c + 1) * hw] {
                    s += v as f64;
                }
            }
            let mu = s / n;
            for t in 0..z.t {
                for &v in &z.frame(t)[c * hw..(c + 1) * hw] {
                    ss += (v as f64 - mu) * (v as f64 - mu);
                }
            }
            let var = ss / n;
            unbiased.push(if n > 1.0 { ss / (n - 1.0) } else { var } as f32);
            mean.push(mu as f32);
            inv_std.push((1.0 / (var + BN_EPS).sqrt()) as f32);
        }
        (BnStats { mean, inv_std, batch: true }, unbiased)
    }

    pub fn update_running(&mut self, mean: &[f32], unbiased_var: &[f32]) {
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * unbiased_var[c];
        }
    }

    pub fn running_stats(&self) -> BnStats {
        BnStats {
            mean: self.running_mean.clone(),
            inv_std: self.running_var.iter().map(|&v| (1.0 / (v as f64 + BN_EPS).sqrt()) as f32).collect(),
            batch: false,
        }
    }

    /// `elu(gamma * (z - mean) * inv_std + beta)`
    pub fn normalize_elu(&self, z: &Tensor, stats: &BnStats) -> Tensor {
        let hw = z.plane();
        let mut out = Tensor::zeros(z.t, z.c, z.h, z.w);
        let (scale, shift) = self.affine(stats);
        out.data.par_chunks_mut(z.frame_len()).zip(z.data.par_chunks(z.frame_len())).for_each(|(of, zf)| {
            for c in 0..z.c {
                for (o, &v) in of[c * hw..(c + 1) * hw].iter_mut().zip(&zf[c * hw..(c + 1) * hw]) {
                    *o = elu(v * scale[c] + shift[c]);
                }
            }
        });
        out
    }

    fn affine(&self, stats: &BnStats) -> (Vec<f32>, Vec<f32>) {
        let scale: Vec<f32> = self.gamma.iter().zip(&stats.inv_std).map(|(g, s)| g * s).collect();
        let shift: Vec<f32> = (0..self.gamma.len()).map(|c| self.beta[c] - stats.mean[c] * scale[c]).collect();
        (scale, shift)
    }

    /// Backward through ELU and normalization. `da` is overwritten with the gradient
    /// on `z`; `grads` receives `[gamma, beta]`.
    pub fn backward_elu(&self, z: &Tensor, stats: &BnStats, da: &mut Tensor, grads: Option<&mut [Vec<f32>]>) {
        let hw = z.plane();
        let n = (z.t * hw) as f64;
        let (scale, shift) = self.affine(stats);
        let mut sum_dy = vec![0.0f64; z.c];
        let mut sum_dy_xhat = vec![0.0f64; z.c];
        for t in 0..z.t {
            let base = t * z.frame_len();
            for c in 0..z.c {
                let (mu, inv) = (stats.mean[c], stats.inv_std[c]);
                let (mut s1, mut s2) = (0.0f64, 0.0f64);
                let range = base + c * hw..base + (c + 1) * hw;
                for (g, &zv) in da.data[range.clone()].iter_mut().zip(&z.data[range]) {
                    let y = zv * scale[c] + shift[c];
                    *g *= elu_grad(y);
                    s1 += *g as f64;
                    s2 += (*g * (zv - mu) * inv) as f64;
                }
                sum_dy[c] += s1;
                sum_dy_xhat[c] += s2;
            }
        }
        if let Some(grads) = grads {
            for c in 0..z.c {
                grads[0][c] += sum_dy_xhat[c] as f32;
                grads[1][c] += sum_dy[c] as f32;
            }
        }
        for t in 0..z.t {
            let base = t * z.frame_len();
            for c in 0..z.c {
                let (mu, inv, gamma) = (stats.mean[c], stats.inv_std[c], self.gamma[c]);
                let range = base + c * hw..base + (c + 1) * hw;
                if stats.batch {
                    let k = gamma * inv;
                    let m1 = (sum_dy[c] / n) as f32;
                    let m2 = (sum_dy_xhat[c] / n) as f32;
                    for (g, &zv) in da.data[range.clone()].iter_mut().zip(&z.data[range]) {
                        let xhat = (zv - mu) * inv;
                        *g = k * (*g - m1 - xhat * m2);
                    }
                } else {
                    let k = gamma * inv;
                    da.data[range].iter_mut().for_each(|g| *g *= k);
                }
            }
        }
    }
}

#[inline]
pub fn elu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(y: f32) -> f32 {
    if y > 0.0 {
        1.0
    } else {
        y.exp()
    }
}

/// Temporal transposed convolution: kernel 4, stride 2, padding 1, explicit output length.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalUpConv {
    pub cin: usize,
    pub cout: usize,
    /// `[k][cout][cin]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub const UP_KERNEL: usize = 4;

impl TemporalUpConv {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let fan_in = cin * UP_KERNEL;
        Self {
            cin,
            cout,
            weight: uniform_init(UP_KERNEL * cout * cin, fan_in, rng),
            bias: uniform_init(cout, fan_in, rng),
        }
    }

    /// `(k, i)` pairs feeding output frame `o`: `o = 2 i - 1 + k`.
    fn taps(o: usize, len_in: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..UP_KERNEL).filter_map(move |k| {
            let num = o as isize + 1 - k as isize;
            if num >= 0 && num % 2 == 0 && ((num / 2) as usize) < len_in {
                Some((k, (num / 2) as usize))
            } else {
                None
            }
        })
    }

    pub fn forward(&self, x: &Tensor, out_len: usize) -> Tensor {
        assert_eq!(x.c, self.cin, "upconv input channels");
        let hw = x.plane();
        let mut out = Tensor::zeros(out_len, self.cout, x.h, x.w);
        out.data.par_chunks_mut(self.cout * hw).enumerate().for_each(|(o, of)| {
            for (co, b) in self.bias.iter().enumerate() {
                of[co * hw..(co + 1) * hw].fill(*b);
            }
            for (k, i) in Self::taps(o, x.t) {
                let wk = &self.weight[k * self.cout * self.cin..(k + 1) * self.cout * self.cin];
                gemm(self.cout, self.cin, hw, wk, self.cin, 1, x.frame(i), hw, 1, 1.0, of, hw);
            }
        });
        out
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: Option<&mut [Vec<f32>]>, want_dx: bool) -> Option<Tensor> {
        let hw = x.plane();
        let block = self.cout * self.cin;
        if let Some(grads) = grads {
            for o in 0..dy.t {
                for (k, i) in Self::taps(o, x.t) {
                    let gw = &mut grads[0][k * block..(k + 1) * block];
                    gemm(self.cout, hw, self.cin, dy.frame(o), hw, 1, x.frame(i), 1, hw, 1.0, gw, self.cin);
                }
            }
            for co in 0..self.cout {
                let mut s = 0.0f64;
                for o in 0..dy.t {
                    s += dy.frame(o)[co * hw..(co + 1) * hw].iter().map(|&v| v as f64).sum::<f64>();
                }
                grads[1][co] += s as f32;
            }
        }
        if !want_dx {
            return None;
        }
        let mut dx = Tensor::zeros(x.t, x.c, x.h, x.w);
        for o in 0..dy.t {
            for (k, i) in Self::taps(o, x.t) {
                let wk = &self.weight[k * block..(k + 1) * block];
                let n = x.frame_len();
                let df = &mut dx.data[i * n..(i + 1) * n];
                gemm(self.cin, self.cout, hw, wk, 1, self.cin, dy.frame(o), hw, 1, 1.0, df, hw);
            }
        }
        Some(dx)
    }
}

/// Spatial adaptive average pooling to `side x side` cells.
pub fn adaptive_bounds(len: usize, side: usize, i: usize) -> (usize, usize) {
    (i * len / side, ((i + 1) * len).div_ceil(side))
}

pub fn adaptive_pool_forward(x: &Tensor, side: usize) -> Tensor {
    let mut out = Tensor::zeros(x.t, x.c, side, side);
    for t in 0..x.t {
        for c in 0..x.c {
            for i in 0..side {
                let (h0, h1) = adaptive_bounds(x.h, side, i);
                for j in 0..side {
                    let (w0, w1) = adaptive_bounds(x.w, side, j);
                    let mut s = 0.0f32;
                    for h in h0..h1 {
                        let row = x.index(t, c, h, 0);
                        s += x.data[row + w0..row + w1].iter().sum::<f32>();
                    }
                    let idx = out.index(t, c, i, j);
                    out.data[idx] = s / ((h1 - h0) * (w1 - w0)) as f32;
                }
            }
        }
    }
    out
}

pub fn adaptive_pool_backward(in_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [t_len, c_len, h_len, w_len] = in_shape;
    let side = dy.h;
    let mut dx = Tensor::zeros(t_len, c_len, h_len, w_len);
    for t in 0..t_len {
        for c in 0..c_len {
            for i in 0..side {
                let (h0, h1) = adaptive_bounds(h_len, side, i);
                for j in 0..side {
                    let (w0, w1) = adaptive_bounds(w_len, side, j);
                    let g = dy.data[dy.index(t, c, i, j)] / ((h1 - h0) * (w1 - w0)) as f32;
                    for h in h0..h1 {
                        let row = dx.index(t, c, h, 0);
                        dx.data[row + w0..row + w1].iter_mut().for_each(|v| *v += g);
                    }
                }
            }
        }
    }
    dx
}

/// 1x1x1 projection to a single channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Projection {
    pub fn new<R: Rng + ?Sized>(cin: usize, rng: &mut R) -> Self {
        Self { weight: uniform_init(cin, cin, rng), bias: uniform_init(1, cin, rng) }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let hw = x.plane();
        let mut out = Tensor::zeros(x.t, 1, x.h, x.w);
        for t in 0..x.t {
            let f = x.frame(t);
            for s in 0..hw {
                let mut acc = self.bias[0];
                for (c, w) in self.weight.iter().enumerate() {
                    acc += w * f[c * hw + s];
                }
                out.data[t * hw + s] = acc;
            }
        }
        out
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grads: Option<&mut [Vec<f32>]>) -> Tensor {
        let hw = x.plane();
        let mut dx = Tensor::zeros(x.t, x.c, x.h, x.w);
        let mut gw = vec![0.0f64; x.c];
        let mut gb = 0.0f64;
        for t in 0..x.t {
            let f = x.frame(t);
            for s in 0..hw {
                let g = dy.data[t * hw + s];
                gb += g as f64;
                for c in 0..x.c {
                    gw[c] += (g * f[c * hw + s]) as f64;
                    let idx = dx.index(t, c, 0, 0) + s;
                    dx.data[idx] = g * self.weight[c];
                }
            }
        }
        if let Some(grads) = grads {
            for c in 0..x.c {
                grads[0][c] += gw[c] as f32;
            }
            grads[1][0] += gb as f32;
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape[0], shape[1], shape[2], shape[3], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
    }

    /// Direct nested-loop convolution.
    fn conv_reference(x: &Tensor, conv: &Conv3d) -> Tensor {
        let [kt, kh, kw] = conv.kernel;
        let mut out = Tensor::zeros(x.t, conv.cout, x.h, x.w);
        for t in 0..x.t {
            for co in 0..conv.cout {
                for h in 0..x.h {
                    for w in 0..x.w {
                        let mut s = conv.bias[co] as f64;
                        for ci in 0..conv.cin {
                            for a in 0..kt {
                                for b in 0..kh {
                                    for c in 0..kw {
                                        let (tt, hh, ww) = (
                                            t as isize + a as isize - (kt / 2) as isize,
                                            h as isize + b as isize - (kh / 2) as isize,
                                            w as isize + c as isize - (kw / 2) as isize,
                                        );
                                        if tt < 0 || hh < 0 || ww < 0 || tt >= x.t as isize || hh >= x.h as isize || ww >= x.w as isize {
                                            continue;
                                        }
                                        let wi = (((co * conv.cin + ci) * kt + a) * kh + b) * kw + c;
                                        s += conv.weight[wi] as f64
                                            * x.data[x.index(tt as usize, ci, hh as usize, ww as usize)] as f64;
                                    }
                                }
                            }
                        }
                        let idx = out.index(t, co, h, w);
                        out.data[idx] = s as f32;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kernel in [[3, 3, 3], [1, 5, 5], [1, 1, 1]] {
            let conv = Conv3d::new(2, 3, kernel, &mut rng);
            let x = random_tensor([5, 2, 7, 6], &mut rng);
            let a = conv.forward(&x);
            let b = conv_reference(&x, &conv);
            for (p, q) in a.data.iter().zip(&b.data) {
                assert!((p - q).abs() < 1e-5);
            }
        }
    }

    /// Adjoint identity <dy, J dx> = <J^T dy, dx> checks the backward pass of a linear map.
    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv3d::new(2, 3, [3, 3, 3], &mut rng);
        conv.bias.iter_mut().for_each(|b| *b = 0.0);
        let x = random_tensor([6, 2, 5, 5], &mut rng);
        let dy = random_tensor([6, 3, 5, 5], &mut rng);
        let dx = conv.backward(&x, &dy, None, true).unwrap();
        let lhs = dot(&dy, &conv.forward(&x));
        let rhs = dot(&dx, &x);
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0), "{lhs} vs {rhs}");

        // Weight gradient: <dy, conv_w(x)> is linear in w.
        let mut grads = vec![vec![0.0; conv.weight.len()], vec![0.0; conv.cout]];
        conv.backward(&x, &dy, Some(&mut grads), false);
        let lhs: f64 = grads[0].iter().zip(&conv.weight).map(|(g, w)| (*g as f64) * (*w as f64)).sum();
        assert!((lhs - dot(&dy, &conv.forward(&x))).abs() < 1e-3 * lhs.abs().max(1.0));
    }

    #[test]
    fn upconv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut up = TemporalUpConv::new(3, 2, &mut rng);
        up.bias.iter_mut().for_each(|b| *b = 0.0);
        let x = random_tensor([5, 3, 2, 2], &mut rng);
        for out_len in [10, 11] {
            let y = up.forward(&x, out_len);
            let dy = random_tensor([out_len, 2, 2, 2], &mut rng);
            let dx = up.backward(&x, &dy, None, true).unwrap();
            assert!((dot(&dy, &y) - dot(&dx, &x)).abs() < 1e-4);
            let mut grads = vec![vec![0.0; up.weight.len()], vec![0.0; 2]];
            up.backward(&x, &dy, Some(&mut grads), false);
            let lhs: f64 = grads[0].iter().zip(&up.weight).map(|(g, w)| (*g as f64) * (*w as f64)).sum();
            assert!((lhs - dot(&dy, &y)).abs() < 1e-4);
        }
    }

    #[test]
    fn pools_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor([7, 2, 8, 8], &mut rng);
        let pool = AvgPool { factor: [2, 2, 2] };
        let y = pool.forward(&x);
        assert_eq!(y.shape(), [3, 2, 4, 4]);
        let dy = random_tensor(y.shape(), &mut rng);
        assert!((dot(&dy, &y) - dot(&pool.backward(x.shape(), &dy), &x)).abs() < 1e-4);

        let y = adaptive_pool_forward(&x, 3);
        let dy = random_tensor(y.shape(), &mut rng);
        assert!((dot(&dy, &y) - dot(&adaptive_pool_backward(x.shape(), &dy), &x)).abs() < 1e-4);
    }

    #[test]
    fn batchnorm_elu_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bn = BatchNorm::new(2);
        bn.gamma = vec![1.3, 0.7];
        bn.beta = vec![0.2, -0.4];
        let z = random_tensor([3, 2, 2, 2], &mut rng);
        let probe = random_tensor([3, 2, 2, 2], &mut rng);
        let objective = |bn: &BatchNorm, z: &Tensor| -> f64 {
            let (stats, _) = bn.batch_stats(z);
            dot(&bn.normalize_elu(z, &stats), &probe)
        };
        let (stats, _) = bn.batch_stats(&z);
        let mut dz = probe.clone();
        let mut grads = vec![vec![0.0; 2], vec![0.0; 2]];
        bn.backward_elu(&z, &stats, &mut dz, Some(&mut grads));
        let h = 1e-2f32;
        for i in [0, 5, 11, 17, 23] {
            let mut up = z.clone();
            up.data[i] += h;
            let mut dn = z.clone();
            dn.data[i] -= h;
            let fd = (objective(&bn, &up) - objective(&bn, &dn)) / (2.0 * h as f64);
            assert!((fd - dz.data[i] as f64).abs() < 2e-3, "{fd} vs {}", dz.data[i]);
        }
        let mut up = bn.clone();
        up.gamma[1] += h;
        let mut dn = bn.clone();
        dn.gamma[1] -= h;
        let fd = (objective(&up, &z) - objective(&dn, &z)) / (2.0 * h as f64);
        assert!((fd - grads[0][1] as f64).abs() < 2e-3);
    }

    #[test]
    fn forward_is_deterministic_across_pool_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let conv = Conv3d::new(3, 4, [3, 3, 3], &mut rng);
        let x = random_tensor([40, 3, 9, 9], &mut rng);
        let dy = random_tensor([40, 4, 9, 9], &mut rng);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                let mut grads = vec![vec![0.0; conv.weight.len()], vec![0.0; 4]];
                let y = conv.forward(&x);
                conv.backward(&x, &dy, Some(&mut grads), false);
                (y, grads)
            })
        };
        let (y1, g1) = run(1);
        let (y3, g3) = run(3);
        assert_eq!(y1, y3);
        assert_eq!(g1, g3);
    }
}
