//! Contrastive objective over power spectra.
//!
//! Spectra sampled from the same video are pulled together (positive term)
//! and spectra from the two different videos are pushed apart (negative
//! term). Both terms use squared Euclidean distance summed over bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::BandPsd;

/// The spectra of all samples drawn from one video's block.
#[derive(Debug, Clone)]
pub struct PsdSet {
    pub psds: Vec<BandPsd>,
    pub video_id: String,
}

impl PsdSet {
    pub fn new(psds: Vec<BandPsd>, video_id: impl Into<String>) -> Result<Self> {
        if psds.is_empty() {
            return Err(Error::Empty);
        }
        if psds.iter().any(|p| !p.same_grid(&psds[0])) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { psds, video_id: video_id.into() })
    }

    pub fn len(&self) -> usize {
        self.psds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psds.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub positive: f64,
    pub negative: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_pair(a: &PsdSet, b: &PsdSet) -> Result<()> {
    if a.video_id == b.video_id {
        return Err(Error::SameVideo(a.video_id.clone()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty);
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if !a.psds[0].same_grid(&b.psds[0]) || a.psds.iter().chain(&b.psds).any(|p| !p.same_grid(&a.psds[0])) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Mean squared distance over ordered within-video pairs of both videos.
pub fn positive_loss(a: &PsdSet, b: &PsdSet) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    if n < 2 {
        return Err(Error::SingletonSet { n });
    }
    // Unordered pairs, doubled: identical to the ordered double sum.
    let mut sum = 0.0;
    for set in [a, b] {
        for i in 0..n {
            for j in i + 1..n {
                sum += 2.0 * sq_dist(set.psds[i].power(), set.psds[j].power());
            }
        }
    }
    Ok(sum / (2.0 * n as f64 * (n - 1) as f64))
}

/// Negated mean squared distance over all cross-video pairs.
pub fn negative_loss(a: &PsdSet, b: &PsdSet) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let mut sum = 0.0;
    for fa in &a.psds {
        for fb in &b.psds {
            sum += sq_dist(fa.power(), fb.power());
        }
    }
    Ok(-sum / (n * n) as f64)
}

pub fn total_loss(a: &PsdSet, b: &PsdSet) -> Result<LossBreakdown> {
    let positive = positive_loss(a, b)?;
    let negative = negative_loss(a, b)?;
    Ok(LossBreakdown { total: positive + negative, positive, negative })
}

/// Gradients of the total loss with respect to every member's normalized power vector.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

pub fn total_loss_with_grad(a: &PsdSet, b: &PsdSet) -> Result<(LossBreakdown, LossGrad)> {
    let loss = total_loss(a, b)?;
    let n = a.len();
    let bins = a.psds[0].len();
    let pos_scale = 2.0 / (n as f64 * (n - 1) as f64);
    let neg_scale = 2.0 / (n * n) as f64;

    let positive_grad = |set: &PsdSet| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let fi = set.psds[i].power();
                let mut g = vec![0.0; bins];
                for (j, fj) in set.psds.iter().enumerate() {
                    if j != i {
                        for (gk, (x, y)) in g.iter_mut().zip(fi.iter().zip(fj.power())) {
                            *gk += pos_scale * (x - y);
                        }
                    }
                }
                g
            })
            .collect()
    };
    let mut ga = positive_grad(a);
    let mut gb = positive_grad(b);
    for (i, fa) in a.psds.iter().enumerate() {
        for (j, fb) in b.psds.iter().enumerate() {
            for (k, (x, y)) in fa.power().iter().zip(fb.power()).enumerate() {
                let d = neg_scale * (x - y);
                ga[i][k] -= d;
                gb[j][k] += d;
            }
        }
    }
    Ok((loss, LossGrad { a: ga, b: gb }))
}
