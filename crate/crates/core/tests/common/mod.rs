//! Test-only oracles, written independently of the library's code paths.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tone(f: f64, fs: f64, n: usize, phase: f64, amp: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs + phase).sin()).collect()
}

pub fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Power of the mean-removed signal at frequency `f` by a direct DFT sum.
pub fn dft_power(x: &[f64], fs: f64, f: f64) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, v) in x.iter().enumerate() {
        let a = -2.0 * PI * f * n as f64 / fs;
        re += (v - mean) * a.cos();
        im += (v - mean) * a.sin();
    }
    re * re + im * im
}

/// Unit-sum direct-DFT spectrum over the given frequencies.
pub fn oracle_psd(x: &[f64], fs: f64, freqs: &[f64]) -> Vec<f64> {
    let p: Vec<f64> = freqs.iter().map(|&f| dft_power(x, fs, f)).collect();
    let total: f64 = p.iter().sum();
    p.into_iter().map(|v| v / total).collect()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Positive and negative terms by the literal ordered double sums.
pub fn brute_losses(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
    let n = a.len();
    let mut pos = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                pos += sq(&a[i], &a[j]) + sq(&b[i], &b[j]);
                pairs += 1;
            }
        }
    }
    let mut neg = 0.0;
    for fa in a {
        for fb in b {
            neg -= sq(fa, fb);
        }
    }
    (pos / (2 * pairs) as f64, neg / (n * n) as f64)
}

/// Random point on the probability simplex.
pub fn simplex(bins: usize, r: &mut impl Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..bins).map(|_| -r.random_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    up[i] += h;
    let mut dn = x.to_vec();
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

/// `||a - b|| / ||b||`, the usual gradient-check relative error.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
