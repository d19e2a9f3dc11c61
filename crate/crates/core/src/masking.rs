//! Learnable offset masks and anchor pruning.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sigmoid;

/// Default threshold on `sigmoid(logit)`.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Hard forward value of a mask: `sigmoid(logit) > threshold`.
#[inline]
pub fn hard_mask(logit: f64, threshold: f64) -> bool {
    sigmoid(logit) > threshold
}

/// Forward value and `d value / d logit` of a mask entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Hard threshold forward, sigmoid derivative backward.
    Ste,
    /// Sigmoid both ways; used for gradient checks.
    Sigmoid,
}

impl MaskMode {
    #[inline]
    pub fn eval(self, logit: f64, threshold: f64) -> (f64, f64) {
        let s = sigmoid(logit);
        let d = s * (1.0 - s);
        match self {
            MaskMode::Ste => (if s > threshold { 1.0 } else { 0.0 }, d),
            MaskMode::Sigmoid => (s, d),
        }
    }
}

/// `N x K` mask logits with a shared threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub n: usize,
    pub k: usize,
    pub logits: Vec<f64>,
    pub threshold: f64,
}

impl MaskSet {
    pub fn new(n: usize, k: usize, initial_logit: f64) -> Self {
        Self { n, k, logits: alloc::vec![initial_logit; n * k], threshold: DEFAULT_THRESHOLD }
    }

    /// Mask set whose hard bits reproduce `bits` exactly.
    pub fn from_bits(n: usize, k: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != n * k {
            return Err(Error::Shape(alloc::format!("{} mask bits for {n} x {k}", bits.len())));
        }
        let logits = bits.iter().map(|&b| if b { 10.0 } else { -10.0 }).collect();
        Ok(Self { n, k, logits, threshold: DEFAULT_THRESHOLD })
    }

    pub fn hard(&self) -> Vec<bool> {
        self.logits.iter().map(|&l| hard_mask(l, self.threshold)).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.k..(i + 1) * self.k]
    }

    /// Fraction of offsets whose hard mask is zero.
    pub fn masked_fraction(&self) -> f64 {
        if self.logits.is_empty() {
            return 0.0;
        }
        self.hard().iter().filter(|&&b| !b).count() as f64 / self.logits.len() as f64
    }
}

/// Mean of `sigmoid(logit)` over all entries.
pub fn mask_loss(masks: &MaskSet) -> Result<f64> {
    if masks.logits.is_empty() {
        return Err(Error::Shape("mask loss of an empty mask set".into()));
    }
    Ok(masks.logits.iter().map(|&l| sigmoid(l)).sum::<f64>() / masks.logits.len() as f64)
}

/// Adds `scale * d mask_loss / d logit` to `grad`.
pub fn mask_loss_grad(masks: &MaskSet, scale: f64, grad: &mut [f64]) {
    let inv = scale / masks.logits.len().max(1) as f64;
    for (g, &l) in grad.iter_mut().zip(&masks.logits) {
        let s = sigmoid(l);
        *g += inv * s * (1.0 - s);
    }
}

/// Anchors and offsets that survive masking.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pruned {
    pub kept_anchors: Vec<usize>,
    /// Surviving offset slots of each kept anchor, ascending.
    pub kept_offsets: Vec<Vec<usize>>,
}

impl Pruned {
    pub fn kept_offset_count(&self) -> usize {
        self.kept_offsets.iter().map(Vec::len).sum()
    }
}

/// Drops masked offsets, and anchors whose every offset is masked.
pub fn prune_bits(n: usize, k: usize, hard: &[bool]) -> Result<Pruned> {
    if hard.len() != n * k {
        return Err(Error::Shape(alloc::format!("{} mask bits for {n} anchors x {k} offsets", hard.len())));
    }
    let mut out = Pruned::default();
    for i in 0..n {
        let row: Vec<usize> = (0..k).filter(|&j| hard[i * k + j]).collect();
        if !row.is_empty() {
            out.kept_anchors.push(i);
            out.kept_offsets.push(row);
        }
    }
    Ok(out)
}

pub fn prune(scene: &crate::scene::AnchorScene, masks: &MaskSet) -> Result<Pruned> {
    if masks.n != scene.n || masks.k != scene.k_offsets {
        return Err(Error::Shape(alloc::format!(
            "masks are {} x {}, scene is {} x {}",
            masks.n,
            masks.k,
            scene.n,
            scene.k_offsets
        )));
    }
    prune_bits(masks.n, masks.k, &masks.hard())
}
