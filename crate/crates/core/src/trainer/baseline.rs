//! Context-free reference rate: one Gaussian per attribute family.

use crate::error::{Error, Result};
use crate::math::round_half_away;
use crate::ratemodel::{bits_of, interval_probability, FamilyBits, SigmaBounds, DEFAULT_Q0};
use crate::scene::{AnchorScene, Family};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaselineBits {
    pub bits: FamilyBits,
    pub counts: [usize; 3],
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
}

impl BaselineBits {
    pub fn per_param(&self, family: Family) -> f64 {
        let c = self.counts[family.index()];
        if c == 0 {
            0.0
        } else {
            self.bits.get(family) / c as f64
        }
    }

    pub fn pooled(&self) -> f64 {
        let c: usize = self.counts.iter().sum();
        if c == 0 {
            0.0
        } else {
            self.bits.total() / c as f64
        }
    }
}

/// Bits of every value under a single per-family Gaussian at step `q0`.
pub fn baseline_bits(scene: &AnchorScene, q0: [f64; 3]) -> Result<BaselineBits> {
    if scene.n == 0 {
        return Err(Error::EmptyScene);
    }
    let mut out = BaselineBits::default();
    for fam in Family::ALL {
        let c = fam.index();
        let values: &[f32] = match fam {
            Family::Feature => &scene.features,
            Family::Scaling => &scene.scalings,
            Family::Offset => &scene.offsets,
        };
        if values.is_empty() {
            continue;
        }
        let len = values.len() as f64;
        let mu = values.iter().map(|&v| v as f64).sum::<f64>() / len;
        let var = values.iter().map(|&v| (v as f64 - mu) * (v as f64 - mu)).sum::<f64>() / len;
        let b = SigmaBounds::for_step(q0[c]);
        let sigma = libm::sqrt(var).clamp(b.min, b.max);
        let q = q0[c];
        let mut bits = 0.0;
        for &v in values {
            let x = round_half_away(v as f64 / q) * q;
            bits += bits_of(interval_probability(x, mu, sigma, q));
        }
        out.bits.bits[c] = bits;
        out.counts[c] = values.len();
        out.mu[c] = mu;
        out.sigma[c] = sigma;
    }
    Ok(out)
}

/// [`baseline_bits`] at the default base steps.
pub fn baseline_bits_default(scene: &AnchorScene) -> Result<BaselineBits> {
    baseline_bits(scene, DEFAULT_Q0)
}
