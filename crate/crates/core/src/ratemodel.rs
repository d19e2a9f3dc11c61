//! Context MLP, adaptive quantization and the discretized Gaussian rate model.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{log2, normal_mass, normal_pdf, LN_2};
use crate::scene::{AttributeLayout, Family};

/// Base quantization steps for (feature, scaling, offset).
pub const DEFAULT_Q0: [f64; 3] = [1.0, 0.001, 0.2];

/// Probability floor used wherever a probability enters a logarithm.
pub const P_MIN: f64 = 1.0 / (1u64 << 24) as f64;

/// Symbol range shared by the quantizer and the coder.
pub const SYMBOL_MIN: i32 = -(1 << 15);
pub const SYMBOL_MAX: i32 = (1 << 15) - 1;

/// Pre-activation clamp for the step refinement; keeps `tanh(r)` strictly
/// inside `(-1, 1)` in floating point.
pub const REFINEMENT_CLAMP: f64 = 8.0;

pub const DEFAULT_HIDDEN: usize = 96;

/// Admissible standard deviations for one family, `[1e-3 Q0, 1e3 Q0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaBounds {
    pub min: f64,
    pub max: f64,
}

impl SigmaBounds {
    pub const LOW_FACTOR: f64 = 1e-3;
    pub const HIGH_FACTOR: f64 = 1e3;

    pub fn for_step(q0: f64) -> Self {
        Self { min: Self::LOW_FACTOR * q0, max: Self::HIGH_FACTOR * q0 }
    }

    /// Geometric centre of the interval (equal to `Q0`).
    pub fn center(&self) -> f64 {
        libm::sqrt(self.min * self.max)
    }
}

/// Per-anchor outputs of the context model, aligned to `[f | l | o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateParams {
    pub q: [f64; 3],
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl RateParams {
    #[inline]
    pub fn step(&self, family: Family) -> f64 {
        self.q[family.index()]
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    pub z1: Vec<f64>,
    pub h1: Vec<f64>,
    pub z2: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

/// A three-layer ReLU MLP shared by the step refinement and the Gaussian
/// parameters. Output layout: `[r (3) | mu (nv) | s (nv)]` where
/// `sigma = exp(clamp(s, ln sigma_min, ln sigma_max))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextModel {
    pub input: usize,
    pub hidden: usize,
    pub layout: AttributeLayout,
    pub q0: [f64; 3],
    /// `W1 (hidden x input), b1, W2 (hidden x hidden), b2, W3 (out x hidden), b3`.
    pub params: Vec<f64>,
}

impl ContextModel {
    pub fn output_dim(layout: AttributeLayout) -> usize {
        2 * layout.values_per_anchor() + 3
    }

    pub fn param_count(input: usize, hidden: usize, layout: AttributeLayout) -> usize {
        let out = Self::output_dim(layout);
        hidden * input + hidden + hidden * hidden + hidden + out * hidden + out
    }

    /// Uniform `±1/sqrt(fan_in)` hidden weights, zero output layer.
    pub fn new(input: usize, hidden: usize, layout: AttributeLayout, q0: [f64; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; Self::param_count(input, hidden, layout)];
        let mut m = Self { input, hidden, layout, q0, params: Vec::new() };
        let (w1, w2, _) = m.weight_ranges();
        let b1 = 1.0 / libm::sqrt(input as f64);
        for p in &mut params[w1] {
            *p = rng.random_range(-b1..b1);
        }
        let b2 = 1.0 / libm::sqrt(hidden as f64);
        for p in &mut params[w2] {
            *p = rng.random_range(-b2..b2);
        }
        m.params = params;
        m
    }

    /// Every parameter uniform in `±scale`.
    pub fn random(input: usize, hidden: usize, layout: AttributeLayout, q0: [f64; 3], seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..Self::param_count(input, hidden, layout)).map(|_| rng.random_range(-scale..scale)).collect();
        Self { input, hidden, layout, q0, params }
    }

    pub fn from_params(input: usize, hidden: usize, layout: AttributeLayout, q0: [f64; 3], params: Vec<f64>) -> Result<Self> {
        let want = Self::param_count(input, hidden, layout);
        if params.len() != want {
            return Err(Error::Shape(alloc::format!("model has {} parameters, expected {want}", params.len())));
        }
        Ok(Self { input, hidden, layout, q0, params })
    }

    /// Same model with every parameter and `Q0` rounded through `f32`.
    pub fn rounded_to_f32(&self) -> Self {
        let mut m = self.clone();
        m.params.iter_mut().for_each(|p| *p = *p as f32 as f64);
        m.q0.iter_mut().for_each(|p| *p = *p as f32 as f64);
        m
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        Self::output_dim(self.layout)
    }

    pub fn sigma_bounds(&self, family: Family) -> SigmaBounds {
        SigmaBounds::for_step(self.q0[family.index()])
    }

    fn weight_ranges(&self) -> (core::ops::Range<usize>, core::ops::Range<usize>, core::ops::Range<usize>) {
        let (i, h, o) = (self.input, self.hidden, self.out_dim());
        let w1 = 0..h * i;
        let w2 = w1.end + h..w1.end + h + h * h;
        let w3 = w2.end + h..w2.end + h + o * h;
        (w1, w2, w3)
    }

    /// Output-layer bias range.
    pub fn output_bias_range(&self) -> core::ops::Range<usize> {
        let (_, _, w3) = self.weight_ranges();
        w3.end..w3.end + self.out_dim()
    }

    /// Starts the Gaussian head at per-value statistics: `mu` biases at the
    /// means, `s` biases at `ln(std)`; step refinements at zero.
    pub fn warm_start(&mut self, means: &[f64], stds: &[f64]) {
        let nv = self.layout.values_per_anchor();
        assert_eq!(means.len(), nv);
        assert_eq!(stds.len(), nv);
        let start = self.output_bias_range().start;
        for j in 0..nv {
            let b = self.sigma_bounds(self.layout.family_of(j));
            self.params[start + 3 + j] = means[j];
            self.params[start + 3 + nv + j] = libm::log(stds[j].clamp(b.min, b.max));
        }
    }

    pub fn check_input(&self, fh: &[f64]) -> Result<()> {
        if fh.len() != self.input {
            return Err(Error::Shape(alloc::format!("model expects {} inputs, got {}", self.input, fh.len())));
        }
        Ok(())
    }

    pub fn forward(&self, fh: &[f64], cache: &mut ForwardCache) {
        let (i, h, o) = (self.input, self.hidden, self.out_dim());
        let p = &self.params;
        let (w1, w2, w3) = self.weight_ranges();
        dense(&p[w1.clone()], &p[w1.end..w1.end + h], fh, i, &mut cache.z1);
        relu(&cache.z1, &mut cache.h1);
        dense(&p[w2.clone()], &p[w2.end..w2.end + h], &cache.h1, h, &mut cache.z2);
        relu(&cache.z2, &mut cache.h2);
        dense(&p[w3.clone()], &p[w3.end..w3.end + o], &cache.h2, h, &mut cache.out);
    }

    /// Accumulates parameter gradients into `grad` and, if requested, writes
    /// the input gradient to `grad_input`.
    pub fn backward(&self, fh: &[f64], cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64], grad_input: Option<&mut Vec<f64>>) {
        let (i, h, o) = (self.input, self.hidden, self.out_dim());
        let p = &self.params;
        let (w1, w2, w3) = self.weight_ranges();

        let mut g_h2 = vec![0.0; h];
        dense_backward(&p[w3.clone()], &cache.h2, grad_out, o, h, &mut grad[w3.start..w3.end + o], &mut g_h2);
        let g_z2: Vec<f64> = g_h2.iter().zip(&cache.z2).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();

        let mut g_h1 = vec![0.0; h];
        dense_backward(&p[w2.clone()], &cache.h1, &g_z2, h, h, &mut grad[w2.start..w2.end + h], &mut g_h1);
        let g_z1: Vec<f64> = g_h1.iter().zip(&cache.z1).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();

        let mut g_in = vec![0.0; i];
        dense_backward(&p[w1.clone()], fh, &g_z1, h, i, &mut grad[w1.start..w1.end + h], &mut g_in);
        if let Some(out) = grad_input {
            *out = g_in;
        }
    }

    /// Splits a raw output vector into quantization steps and Gaussians.
    pub fn rate_params(&self, out: &[f64]) -> RateParams {
        let nv = self.layout.values_per_anchor();
        let mut q = [0.0; 3];
        for f in Family::ALL {
            q[f.index()] = adaptive_step(self.q0[f.index()], out[f.index()]);
        }
        let mu = out[3..3 + nv].to_vec();
        let sigma = (0..nv)
            .map(|j| {
                let b = self.sigma_bounds(self.layout.family_of(j));
                sigma_from_logit(out[3 + nv + j], b)
            })
            .collect();
        RateParams { q, mu, sigma }
    }
}

#[inline]
fn dense(w: &[f64], b: &[f64], x: &[f64], fan_in: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, &bias)| {
        let row = &w[r * fan_in..(r + 1) * fan_in];
        bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

#[inline]
fn relu(z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(z.iter().map(|&v| v.max(0.0)));
}

/// `grad_wb` holds the weight block followed by the bias block.
#[inline]
fn dense_backward(w: &[f64], x: &[f64], g_out: &[f64], rows: usize, fan_in: usize, grad_wb: &mut [f64], g_x: &mut [f64]) {
    let (gw, gb) = grad_wb.split_at_mut(rows * fan_in);
    for r in 0..rows {
        let g = g_out[r];
        if g == 0.0 {
            continue;
        }
        gb[r] += g;
        let row = &w[r * fan_in..(r + 1) * fan_in];
        let grow = &mut gw[r * fan_in..(r + 1) * fan_in];
        for c in 0..fan_in {
            grow[c] += g * x[c];
            g_x[c] += g * row[c];
        }
    }
}

/// `q = Q0 (1 + tanh r)` with `r` clamped to `±REFINEMENT_CLAMP`.
#[inline]
pub fn adaptive_step(q0: f64, r: f64) -> f64 {
    q0 * (1.0 + libm::tanh(r.clamp(-REFINEMENT_CLAMP, REFINEMENT_CLAMP)))
}

/// `d q / d r`; zero outside the clamp.
#[inline]
pub fn adaptive_step_derivative(q0: f64, r: f64) -> f64 {
    if r.abs() > REFINEMENT_CLAMP {
        return 0.0;
    }
    let t = libm::tanh(r);
    q0 * (1.0 - t * t)
}

#[inline]
pub fn sigma_from_logit(s: f64, b: SigmaBounds) -> f64 {
    libm::exp(s.clamp(libm::log(b.min), libm::log(b.max)))
}

/// `d sigma / d s`; zero where the clamp is active.
#[inline]
pub fn sigma_derivative(s: f64, b: SigmaBounds) -> f64 {
    if s < libm::log(b.min) || s > libm::log(b.max) {
        0.0
    } else {
        libm::exp(s)
    }
}

/// Additive-noise quantization surrogate `f + u q`, `u` in `[-1/2, 1/2]`.
pub fn quantize_train(f: f64, q: f64, u: f64) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::InvalidStep(q));
    }
    Ok(f + u * q)
}

/// Hard quantization: symbol `round(f / q)` (ties away from zero) and its
/// reconstruction `k q`.
pub fn quantize_test(f: f64, q: f64) -> Result<(i32, f64)> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::InvalidStep(q));
    }
    if !f.is_finite() {
        return Err(Error::NonFiniteValue);
    }
    let k = libm::round(f / q);
    if k < SYMBOL_MIN as f64 || k > SYMBOL_MAX as f64 {
        return Err(Error::SymbolRange { symbol: k as i64, min: SYMBOL_MIN, max: SYMBOL_MAX });
    }
    let k = k as i32;
    Ok((k, k as f64 * q))
}

/// Gaussian mass of the bin `[k q - q/2, k q + q/2]`.
#[inline]
pub fn bin_probability(k: i32, mu: f64, sigma: f64, q: f64) -> f64 {
    interval_probability(k as f64 * q, mu, sigma, q)
}

/// Gaussian mass of `[v - q/2, v + q/2]` for a continuous centre `v`.
#[inline]
pub fn interval_probability(v: f64, mu: f64, sigma: f64, q: f64) -> f64 {
    normal_mass((v - 0.5 * q - mu) / sigma, (v + 0.5 * q - mu) / sigma)
}

/// `-log2 max(p, P_MIN)`.
#[inline]
pub fn bits_of(p: f64) -> f64 {
    -log2(p.max(P_MIN))
}

/// Interval mass and its partial derivatives.
#[derive(Debug, Clone, Copy)]
pub struct MassGrad {
    pub p: f64,
    pub d_v: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
    /// Partial with respect to the bin width only (centre held fixed).
    pub d_q: f64,
}

#[inline]
pub fn interval_probability_grad(v: f64, mu: f64, sigma: f64, q: f64) -> MassGrad {
    let lo = (v - 0.5 * q - mu) / sigma;
    let hi = (v + 0.5 * q - mu) / sigma;
    let p = normal_mass(lo, hi);
    let (phi_lo, phi_hi) = (normal_pdf(lo), normal_pdf(hi));
    let d_v = (phi_hi - phi_lo) / sigma;
    MassGrad {
        p,
        d_v,
        d_mu: -d_v,
        d_sigma: -(phi_hi * hi - phi_lo * lo) / sigma,
        d_q: 0.5 * (phi_hi + phi_lo) / sigma,
    }
}

/// `d bits / d p` for `bits = -log2 max(p, P_MIN)`; zero on the floor.
#[inline]
pub fn bits_derivative(p: f64) -> f64 {
    if p <= P_MIN {
        0.0
    } else {
        -1.0 / (p * LN_2)
    }
}

/// Bits split by attribute family.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyBits {
    pub bits: [f64; 3],
}

impl FamilyBits {
    pub fn total(&self) -> f64 {
        self.bits.iter().sum()
    }

    pub fn get(&self, f: Family) -> f64 {
        self.bits[f.index()]
    }

    pub fn add(&mut self, other: &FamilyBits) {
        for i in 0..3 {
            self.bits[i] += other.bits[i];
        }
    }
}

/// Estimated bits of one anchor's hard-quantized symbols. Values of masked
/// offsets are skipped; an anchor with no surviving offset costs nothing.
pub fn anchor_bits(layout: AttributeLayout, rate: &RateParams, symbols: &[i32], mask: &[bool]) -> Result<FamilyBits> {
    let nv = layout.values_per_anchor();
    if symbols.len() != nv || rate.mu.len() != nv || rate.sigma.len() != nv || mask.len() != layout.k_offsets {
        return Err(Error::Shape("anchor symbols, rate parameters and mask row disagree".into()));
    }
    let mut out = FamilyBits::default();
    if !mask.iter().any(|&m| m) {
        return Ok(out);
    }
    for j in 0..nv {
        if let Some(slot) = layout.offset_slot(j) {
            if !mask[slot] {
                continue;
            }
        }
        let fam = layout.family_of(j);
        let p = bin_probability(symbols[j], rate.mu[j], rate.sigma[j], rate.step(fam));
        out.bits[fam.index()] += bits_of(p);
    }
    Ok(out)
}

/// Sum of [`anchor_bits`] over anchors; `symbols` is `N x nv`, `mask` is `N x K`.
pub fn entropy_bits(layout: AttributeLayout, rates: &[RateParams], symbols: &[i32], mask: &[bool]) -> Result<FamilyBits> {
    let (nv, k) = (layout.values_per_anchor(), layout.k_offsets);
    let n = rates.len();
    if symbols.len() != n * nv || mask.len() != n * k {
        return Err(Error::Shape(alloc::format!(
            "entropy_bits: {n} anchors but {} symbols and {} mask bits",
            symbols.len(),
            mask.len()
        )));
    }
    let mut total = FamilyBits::default();
    for (i, rate) in rates.iter().enumerate() {
        let b = anchor_bits(layout, rate, &symbols[i * nv..(i + 1) * nv], &mask[i * k..(i + 1) * k])?;
        total.add(&b);
    }
    Ok(total)
}

/// `distortion + lambda_e (entropy + hash) / (N (D + 6 + 3K)) + lambda_m mask_loss`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(distortion: f64, entropy: f64, hash: f64, mask_loss: f64, lambda_e: f64, lambda_m: f64, n: usize, layout: AttributeLayout) -> f64 {
    let norm = (n * layout.values_per_anchor()) as f64;
    distortion + lambda_e * (entropy + hash) / norm + lambda_m * mask_loss
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> AttributeLayout {
        AttributeLayout::new(3, 2)
    }

    #[test]
    fn zero_model_gives_base_step() {
        let l = layout();
        let m = ContextModel::from_params(8, 5, l, DEFAULT_Q0, vec![0.0; ContextModel::param_count(8, 5, l)]).unwrap();
        let mut cache = ForwardCache::default();
        m.forward(&[0.3; 8], &mut cache);
        let rp = m.rate_params(&cache.out);
        assert_eq!(rp.q, DEFAULT_Q0);
        assert!(rp.mu.iter().all(|&v| v == 0.0));
        assert!(rp.sigma.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn step_saturates_below_twice_base() {
        let q = adaptive_step(0.2, 1e6);
        assert!(q < 0.4 && q > 0.3999);
        let q = adaptive_step(0.2, -1e6);
        assert!(q > 0.0);
    }

    #[test]
    fn quantizers() {
        assert_eq!(quantize_train(0.7, 0.3, 0.0).unwrap(), 0.7);
        assert!((quantize_train(1.0, 0.2, 0.5).unwrap() - 1.1).abs() < 1e-15);
        assert!(quantize_train(1.0, 0.0, 0.1).is_err());
        let (k, v) = quantize_test(0.37, 0.2).unwrap();
        assert_eq!(k, 2);
        assert!((v - 0.4).abs() < 1e-15);
        assert_eq!(quantize_test(0.5, 1.0).unwrap().0, 1);
        assert_eq!(quantize_test(-0.5, 1.0).unwrap().0, -1);
        assert_eq!(quantize_test(0.0, 0.3).unwrap(), (0, 0.0));
        assert_eq!(quantize_test(f64::NAN, 0.3), Err(Error::NonFiniteValue));
        assert!(matches!(quantize_test(1e9, 1.0), Err(Error::SymbolRange { .. })));
    }

    #[test]
    fn dequantized_values_are_fixed_points() {
        for &(f, q) in &[(0.37, 0.2), (-3.3, 0.7), (12.0, 0.001)] {
            let (_, v) = quantize_test(f, q).unwrap();
            assert_eq!(quantize_test(v, q).unwrap().1, v);
        }
    }

    #[test]
    fn centered_bin_probability() {
        let p = bin_probability(0, 0.0, 1.0, 1.0);
        assert!((p - 0.382_924_922_548_026).abs() < 1e-12);
        let p = bin_probability(3, 0.6, 0.1, 0.2);
        let want = 2.0 * crate::math::normal_cdf(1.0) - 1.0;
        assert!((p - want).abs() < 1e-12);
        assert!(bin_probability(0, 0.0, 1e-3, 1.0) > 1.0 - 1e-12);
    }

    #[test]
    fn half_bit_and_floor() {
        assert!((bits_of(0.5) - 1.0).abs() < 1e-15);
        assert_eq!(bits_of(0.0), 24.0);
    }

    #[test]
    fn loss_plug_in() {
        let l = AttributeLayout::new(50, 10);
        assert_eq!(total_loss(0.3, 9.0, 4.0, 0.5, 0.0, 0.0, 2, l), 0.3);
        let v = total_loss(1.0, 172.0, 0.0, 0.0, 0.004, 0.0, 2, l);
        assert!((v - 1.004).abs() < 1e-12);
    }

    #[test]
    fn masked_anchor_costs_nothing() {
        let l = layout();
        let nv = l.values_per_anchor();
        let rp = RateParams { q: DEFAULT_Q0, mu: vec![0.0; nv], sigma: vec![1.0; nv] };
        let syms = vec![1; nv];
        assert_eq!(anchor_bits(l, &rp, &syms, &[false, false]).unwrap().total(), 0.0);
        let one = anchor_bits(l, &rp, &syms, &[true, false]).unwrap();
        let both = anchor_bits(l, &rp, &syms, &[true, true]).unwrap();
        assert!(both.get(Family::Offset) > one.get(Family::Offset));
        assert_eq!(both.get(Family::Feature), one.get(Family::Feature));
    }
}
