//! Carry-propagating range coder over 16-bit cumulative frequencies.
//!
//! The coder keeps a 64-bit `low`/`range` pair and renormalizes a byte at a
//! time whenever `range` drops below 2^56, so the per-symbol truncation loss
//! of `range >> 16` stays below 2^-40. Carries ripple back into the bytes
//! already written. `finish` rounds `low` up to a multiple of 2^32 and writes
//! its top four bytes; the decoder treats missing trailing bytes as zero and
//! accepts at most four of them.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
/// Bytes written by [`RangeEncoder::finish`].
pub const FLUSH_BYTES: usize = 4;

const RENORM: u64 = 1 << 56;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u64::MAX, out: Vec::new() }
    }

    /// Encodes the sub-interval `[cum, cum + freq)` of `[0, 2^16)`.
    #[inline]
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> PRECISION;
        let (low, carry) = self.low.overflowing_add(r * cum as u64);
        self.low = low;
        if carry {
            self.propagate_carry();
        }
        self.range = if cum + freq == TOTAL { self.range - r * cum as u64 } else { r * freq as u64 };
        while self.range < RENORM {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Encodes one equiprobable bit.
    #[inline]
    pub fn encode_raw_bit(&mut self, bit: bool) {
        let half = TOTAL / 2;
        self.encode(if bit { half } else { 0 }, half);
    }

    fn propagate_carry(&mut self) {
        for b in self.out.iter_mut().rev() {
            let (v, c) = b.overflowing_add(1);
            *b = v;
            if !c {
                return;
            }
        }
        unreachable!("carry out of an empty prefix");
    }

    pub fn finish(mut self) -> Vec<u8> {
        const MASK: u64 = (1 << 32) - 1;
        let (v, carry) = self.low.overflowing_add(MASK);
        if carry {
            self.propagate_carry();
        }
        let v = v & !MASK;
        self.out.extend_from_slice(&v.to_be_bytes()[..FLUSH_BYTES]);
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    padding: usize,
    code: u64,
    range: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self { bytes, pos: 0, padding: 0, code: 0, range: u64::MAX };
        for _ in 0..8 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u64;
        }
        Ok(d)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8> {
        if let Some(&b) = self.bytes.get(self.pos) {
            self.pos += 1;
            Ok(b)
        } else {
            self.padding += 1;
            if self.padding > FLUSH_BYTES {
                return Err(Error::Exhausted);
            }
            Ok(0)
        }
    }

    /// Position of the next symbol inside `[0, 2^16)`.
    #[inline]
    pub fn target(&self) -> Result<u32> {
        let r = self.range >> PRECISION;
        if self.code >= self.range {
            return Err(Error::Desync);
        }
        Ok((self.code / r).min(TOTAL as u64 - 1) as u32)
    }

    /// Consumes the symbol occupying `[cum, cum + freq)`.
    #[inline]
    pub fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> PRECISION;
        self.code = self.code.checked_sub(r * cum as u64).ok_or(Error::Desync)?;
        self.range = if cum + freq == TOTAL { self.range - r * cum as u64 } else { r * freq as u64 };
        if self.code >= self.range {
            return Err(Error::Desync);
        }
        while self.range < RENORM {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | b as u64;
            self.range <<= 8;
        }
        Ok(())
    }

    #[inline]
    pub fn decode_raw_bit(&mut self) -> Result<bool> {
        let half = TOTAL / 2;
        let bit = self.target()? >= half;
        self.consume(if bit { half } else { 0 }, half)?;
        Ok(bit)
    }

    /// Bytes of input consumed so far, excluding zero padding.
    pub fn consumed(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_flush_only() {
        let bytes = RangeEncoder::new().finish();
        assert_eq!(bytes.len(), FLUSH_BYTES);
        RangeDecoder::new(&bytes).unwrap();
    }

    #[test]
    fn raw_bits_round_trip() {
        let bits: Vec<bool> = (0..1000u32).map(|i| i.wrapping_mul(2_654_435_761u32) >> 31 == 1).collect();
        let mut enc = RangeEncoder::new();
        bits.iter().for_each(|&b| enc.encode_raw_bit(b));
        let bytes = enc.finish();
        assert!(bytes.len() <= 1000 / 8 + FLUSH_BYTES + 1);
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &b in &bits {
            assert_eq!(dec.decode_raw_bit().unwrap(), b);
        }
    }

    #[test]
    fn truncated_stream_is_detected() {
        let mut enc = RangeEncoder::new();
        (0..4000).for_each(|i| enc.encode_raw_bit(i % 3 == 0));
        let bytes = enc.finish();
        let cut = &bytes[..bytes.len() / 2];
        let mut dec = RangeDecoder::new(cut).unwrap();
        let mut failed = false;
        for _ in 0..4000 {
            if dec.decode_raw_bit().is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
    }
}
