//! Entropy coding: a range coder, quantized-Gaussian tables and a static
//! binary model.

pub mod cdf;
pub mod range;

use alloc::vec::Vec;

pub use cdf::{build_cdf, CdfTable, Snapper};
pub use range::{RangeDecoder, RangeEncoder, FLUSH_BYTES, TOTAL};

use crate::error::Result;

/// Static model for a binary source; `f1` counts out of 2^16 for a one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryModel {
    f1: u32,
}

impl BinaryModel {
    pub fn from_probability(p_one: f64) -> Self {
        let f = libm::round(p_one.clamp(0.0, 1.0) * TOTAL as f64) as u32;
        Self { f1: f.clamp(1, TOTAL - 1) }
    }

    /// Model matching the empirical frequency of ones in `bits`.
    pub fn fit(bits: &[bool]) -> Self {
        if bits.is_empty() {
            return Self::from_probability(0.5);
        }
        let ones = bits.iter().filter(|&&b| b).count();
        Self::from_probability(ones as f64 / bits.len() as f64)
    }

    pub fn from_frequency(f1: u32) -> Option<Self> {
        (1..TOTAL).contains(&f1).then_some(Self { f1 })
    }

    #[inline]
    pub fn frequency_one(&self) -> u32 {
        self.f1
    }

    #[inline]
    pub fn frequency_zero(&self) -> u32 {
        TOTAL - self.f1
    }

    pub fn p_one(&self) -> f64 {
        self.f1 as f64 / TOTAL as f64
    }

    #[inline]
    pub fn encode(&self, enc: &mut RangeEncoder, bit: bool) {
        let f0 = self.frequency_zero();
        if bit {
            enc.encode(f0, self.f1);
        } else {
            enc.encode(0, f0);
        }
    }

    #[inline]
    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<bool> {
        let f0 = self.frequency_zero();
        let bit = dec.target()? >= f0;
        if bit {
            dec.consume(f0, self.f1)?;
        } else {
            dec.consume(0, f0)?;
        }
        Ok(bit)
    }

    /// `-log2 p` of one bit under this model.
    pub fn bits(&self, bit: bool) -> f64 {
        let f = if bit { self.f1 } else { self.frequency_zero() };
        -libm::log2(f as f64 / TOTAL as f64)
    }
}

pub fn encode_bits(bits: &[bool], model: BinaryModel) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for &b in bits {
        model.encode(&mut enc, b);
    }
    enc.finish()
}

pub fn decode_bits(bytes: &[u8], count: usize, model: BinaryModel) -> Result<Vec<bool>> {
    let mut dec = RangeDecoder::new(bytes)?;
    (0..count).map(|_| model.decode(&mut dec)).collect()
}

/// Encodes `symbols[i]` with `tables(i)`.
pub fn range_encode<F>(symbols: &[i32], mut tables: F) -> Result<Vec<u8>>
where
    F: FnMut(usize) -> Result<CdfTable>,
{
    let mut enc = RangeEncoder::new();
    for (i, &k) in symbols.iter().enumerate() {
        tables(i)?.encode(&mut enc, k)?;
    }
    Ok(enc.finish())
}

pub fn range_decode<F>(bytes: &[u8], count: usize, mut tables: F) -> Result<Vec<i32>>
where
    F: FnMut(usize) -> Result<CdfTable>,
{
    let mut dec = RangeDecoder::new(bytes)?;
    (0..count).map(|i| tables(i)?.decode(&mut dec)).collect()
}
