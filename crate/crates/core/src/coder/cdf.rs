//! Integer frequency tables for quantized Gaussians.

use alloc::vec::Vec;

use crate::coder::range::{RangeDecoder, RangeEncoder, TOTAL};
use crate::error::{Error, Result};
use crate::math::normal_mass;
use crate::ratemodel::{SigmaBounds, SYMBOL_MAX, SYMBOL_MIN};

/// Half-width of a table in standard deviations.
pub const TAIL_SIGMAS: f64 = 16.0;
/// Bins farther than this many deviations from the mean carry less than one
/// count of mass and are assigned the minimum frequency without evaluating
/// the CDF.
const NEGLIGIBLE_SIGMAS: f64 = 9.0;
/// Mean snapping resolution, as a fraction of the step.
pub const MU_SUBDIVISIONS: f64 = 64.0;
/// Number of log-spaced standard deviations per family.
pub const SIGMA_LEVELS: usize = 256;

/// Deterministic lattice the coder snaps `(mu, sigma)` onto before building
/// a table: `mu` to multiples of `q / 64`, `sigma` to
/// `Q0 * exp((i - 128) * ln(1e3) / 128)` for `i` in `0..256`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapper {
    center: f64,
    log_step: f64,
}

impl Snapper {
    pub fn new(bounds: SigmaBounds) -> Self {
        let half = (SIGMA_LEVELS / 2) as f64;
        Self { center: bounds.center(), log_step: libm::log(bounds.max / bounds.min) / (2.0 * half) }
    }

    #[inline]
    pub fn sigma_index(&self, sigma: f64) -> u8 {
        let half = (SIGMA_LEVELS / 2) as f64;
        let i = libm::round(libm::log(sigma / self.center) / self.log_step) + half;
        i.clamp(0.0, (SIGMA_LEVELS - 1) as f64) as u8
    }

    #[inline]
    pub fn sigma_at(&self, index: u8) -> f64 {
        let e = index as i32 - (SIGMA_LEVELS / 2) as i32;
        if e == 0 {
            self.center
        } else {
            self.center * libm::exp(e as f64 * self.log_step)
        }
    }

    #[inline]
    pub fn snap_mu(mu: f64, q: f64) -> f64 {
        let unit = q / MU_SUBDIVISIONS;
        libm::round(mu / unit) * unit
    }

    #[inline]
    pub fn snap(&self, mu: f64, sigma: f64, q: f64) -> (f64, f64) {
        (Self::snap_mu(mu, q), self.sigma_at(self.sigma_index(sigma)))
    }
}

/// Cumulative frequencies of symbols `k_min ..= k_max`; `cum[0] = 0`,
/// `cum[last] = 2^16`, every bin at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    pub k_min: i32,
    pub cum: Vec<u32>,
}

impl CdfTable {
    #[inline]
    pub fn k_max(&self) -> i32 {
        self.k_min + self.cum.len() as i32 - 2
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn frequency(&self, k: i32) -> u32 {
        if k < self.k_min || k > self.k_max() {
            return 0;
        }
        let i = (k - self.k_min) as usize;
        self.cum[i + 1] - self.cum[i]
    }

    /// `-log2(frequency / 2^16)` of an in-range symbol.
    pub fn bits(&self, k: i32) -> f64 {
        -libm::log2(self.frequency(k) as f64 / TOTAL as f64)
    }

    /// Table for an exact (unsnapped) Gaussian over bins of width `q`.
    pub fn gaussian(mu: f64, sigma: f64, q: f64) -> Result<Self> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::InvalidStep(q));
        }
        if !(sigma > 0.0) || !mu.is_finite() {
            return Err(Error::Shape("table needs a finite mean and positive deviation".into()));
        }
        let lo = libm::floor((mu - TAIL_SIGMAS * sigma) / q) - 1.0;
        let hi = libm::ceil((mu + TAIL_SIGMAS * sigma) / q) + 1.0;
        let (smin, smax) = (SYMBOL_MIN as f64, SYMBOL_MAX as f64);
        let (k_lo, k_hi) = if hi < smin {
            (SYMBOL_MIN, SYMBOL_MIN)
        } else if lo > smax {
            (SYMBOL_MAX, SYMBOL_MAX)
        } else {
            (lo.max(smin) as i32, hi.min(smax) as i32)
        };
        let n = (k_hi - k_lo + 1) as usize;
        let mass: Vec<f64> = (0..n)
            .map(|i| {
                let c = (k_lo + i as i32) as f64 * q;
                if (c - mu).abs() > NEGLIGIBLE_SIGMAS * sigma + q {
                    0.0
                } else {
                    normal_mass((c - 0.5 * q - mu) / sigma, (c + 0.5 * q - mu) / sigma)
                }
            })
            .collect();
        let freq = apportion(&mass, TOTAL);
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0);
        let mut acc = 0u32;
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, TOTAL);
        Ok(Self { k_min: k_lo, cum })
    }

    /// Encodes `k`; symbols beyond either edge are coded as that edge bin
    /// followed by an Exp-Golomb escape of the excess.
    pub fn encode(&self, enc: &mut RangeEncoder, k: i32) -> Result<()> {
        if !(SYMBOL_MIN..=SYMBOL_MAX).contains(&k) {
            return Err(Error::SymbolRange { symbol: k as i64, min: SYMBOL_MIN, max: SYMBOL_MAX });
        }
        let (kmin, kmax) = (self.k_min, self.k_max());
        let clamped = k.clamp(kmin, kmax);
        let i = (clamped - kmin) as usize;
        enc.encode(self.cum[i], self.cum[i + 1] - self.cum[i]);
        if kmin == kmax {
            encode_escape(enc, k.abs_diff(kmin));
            if k != kmin {
                enc.encode_raw_bit(k > kmin);
            }
        } else if clamped == kmin {
            encode_escape(enc, kmin.abs_diff(k));
        } else if clamped == kmax {
            encode_escape(enc, k.abs_diff(kmax));
        }
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i32> {
        let t = dec.target()?;
        let i = self.cum.partition_point(|&c| c <= t) - 1;
        if i >= self.len() {
            return Err(Error::Desync);
        }
        dec.consume(self.cum[i], self.cum[i + 1] - self.cum[i])?;
        let k = self.k_min + i as i32;
        let (kmin, kmax) = (self.k_min, self.k_max());
        let out = if kmin == kmax {
            let e = decode_escape(dec)? as i64;
            if e > 0 && !dec.decode_raw_bit()? { k as i64 - e } else { k as i64 + e }
        } else if k == kmin {
            k as i64 - decode_escape(dec)? as i64
        } else if k == kmax {
            k as i64 + decode_escape(dec)? as i64
        } else {
            k as i64
        };
        if out < SYMBOL_MIN as i64 || out > SYMBOL_MAX as i64 {
            return Err(Error::Desync);
        }
        Ok(out as i32)
    }
}

/// Largest-remainder apportionment of `total` counts proportional to `mass`
/// with at least one count per bin. Bins whose share would fall below one
/// count are pinned to one and the rest redistributed among the others.
pub fn apportion(mass: &[f64], total: u32) -> Vec<u32> {
    let n = mass.len();
    assert!(n >= 1 && n <= total as usize, "cannot apportion {total} counts over {n} bins");
    let mut pinned = alloc::vec![false; n];
    let mut free_mass: f64 = mass.iter().sum();
    let mut free_total = total as f64;
    if !(free_mass > 0.0) {
        // degenerate: spread uniformly
        let base = total / n as u32;
        let extra = (total - base * n as u32) as usize;
        return (0..n).map(|i| base + (i < extra) as u32).collect();
    }
    loop {
        let mut changed = false;
        for i in 0..n {
            if !pinned[i] && mass[i] / free_mass * free_total < 1.0 {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        free_mass = (0..n).filter(|&i| !pinned[i]).map(|i| mass[i]).sum();
        free_total = (total as usize - pinned.iter().filter(|&&p| p).count()) as f64;
        if !(free_mass > 0.0) {
            break;
        }
    }
    let mut freq = alloc::vec![1u32; n];
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0u32;
    for i in 0..n {
        if pinned[i] {
            assigned += 1;
            continue;
        }
        let quota = mass[i] / free_mass * free_total;
        let whole = libm::floor(quota);
        freq[i] = whole as u32;
        assigned += freq[i];
        remainders.push((quota - whole, i));
    }
    let mut leftover = total - assigned;
    if leftover > 0 {
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if remainders.is_empty() {
            for i in 0..leftover as usize {
                freq[i % n] += 1;
            }
            return freq;
        }
        let mut idx = 0;
        while leftover > 0 {
            let (_, i) = remainders[idx % remainders.len()];
            freq[i] += 1;
            leftover -= 1;
            idx += 1;
        }
    }
    freq
}

/// Exp-Golomb (order 0) code of `v` in equiprobable bits.
fn encode_escape(enc: &mut RangeEncoder, v: u32) {
    let x = v as u64 + 1;
    let len = 64 - x.leading_zeros();
    for _ in 1..len {
        enc.encode_raw_bit(false);
    }
    for b in (0..len).rev() {
        enc.encode_raw_bit((x >> b) & 1 == 1);
    }
}

fn decode_escape(dec: &mut RangeDecoder<'_>) -> Result<u32> {
    let mut zeros = 0;
    while !dec.decode_raw_bit()? {
        zeros += 1;
        if zeros > 20 {
            return Err(Error::Desync);
        }
    }
    let mut x = 1u64;
    for _ in 0..zeros {
        x = (x << 1) | dec.decode_raw_bit()? as u64;
    }
    Ok((x - 1) as u32)
}

/// Snaps `(mu, sigma)` and builds the coding table for bins of width `q`.
pub fn build_cdf(mu: f64, sigma: f64, q: f64, bounds: SigmaBounds) -> Result<CdfTable> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::InvalidStep(q));
    }
    let (m, s) = Snapper::new(bounds).snap(mu, sigma.clamp(bounds.min, bounds.max), q);
    CdfTable::gaussian(m, s, q)
}
