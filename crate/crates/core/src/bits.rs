//! MSB-first bit writer/reader with Exp-Golomb codes.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitError {
    #[error("payload underrun at bit {0}")]
    Underrun(u64),
    #[error("exp-golomb prefix longer than 63 bits")]
    PrefixTooLong,
}

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn write_bit(&mut self, bit: bool) {
        let off = (self.bits % 8) as u8;
        if off == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> off;
        }
        self.bits += 1;
    }

    /// Low `n` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, n: u32) {
        for i in (0..n).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    pub fn write_ue(&mut self, v: u64) {
        let x = v + 1;
        let len = 64 - x.leading_zeros();
        self.write_bits(0, len - 1);
        self.write_bits(x, len);
    }

    pub fn write_se(&mut self, v: i64) {
        self.write_ue(se_to_ue(v));
    }

    /// Bytes with the final byte zero-padded.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn total_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }

    pub fn read_bit(&mut self) -> Result<bool, BitError> {
        let byte = (self.pos / 8) as usize;
        if byte >= self.bytes.len() {
            return Err(BitError::Underrun(self.pos));
        }
        let bit = (self.bytes[byte] >> (7 - (self.pos % 8))) & 1 == 1;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, n: u32) -> Result<u64, BitError> {
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub fn read_ue(&mut self) -> Result<u64, BitError> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 63 {
                return Err(BitError::PrefixTooLong);
            }
        }
        let rest = self.read_bits(zeros)?;
        Ok(((1u64 << zeros) | rest) - 1)
    }

    pub fn read_se(&mut self) -> Result<i64, BitError> {
        Ok(ue_to_se(self.read_ue()?))
    }
}

/// Signed mapping 1, -1, 2, -2, ... to 1, 2, 3, 4, ...
#[inline]
pub fn se_to_ue(v: i64) -> u64 {
    if v > 0 {
        2 * v as u64 - 1
    } else {
        2 * v.unsigned_abs()
    }
}

#[inline]
pub fn ue_to_se(k: u64) -> i64 {
    if k % 2 == 1 {
        k.div_ceil(2) as i64
    } else {
        -((k / 2) as i64)
    }
}

/// Length in bits of the unsigned Exp-Golomb code of `v`.
#[inline]
pub fn ue_len(v: u64) -> u64 {
    let x = v + 1;
    2 * u64::from(63 - x.leading_zeros()) + 1
}

#[inline]
pub fn se_len(v: i64) -> u64 {
    ue_len(se_to_ue(v))
}
