//! Fixed-length point bitsets used for instance masks.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A bitset over the `M` points of a scene.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitMask {
    len: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bits: String = (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "BitMask({bits})")
    }
}

impl BitMask {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut mask = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                mask.set(i, true);
            }
        }
        mask
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::zeros(len);
        for i in indices {
            mask.set(i, true);
        }
        mask
    }

    /// Parses a string of `'0'`/`'1'` characters, index 0 first.
    pub fn from_bit_str(s: &str) -> Self {
        Self::from_bools(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len == other.len {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                left: self.len,
                right: other.len,
            })
        }
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn union_count(&self, other: &Self) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum())
    }

    /// Little-endian bit order: point `i` is bit `i % 8` of byte `i / 8`.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len.div_ceil(8);
        self.words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(n_bytes)
            .collect()
    }

    pub fn from_le_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::LengthMismatch {
                left: bytes.len() * 8,
                right: len,
            });
        }
        let mut mask = Self::zeros(len);
        for (i, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            mask.words[i] = u64::from_le_bytes(buf);
        }
        // Bits past `len` must be clear so equality stays structural.
        if !len.is_multiple_of(64) {
            if let Some(last) = mask.words.last() {
                if last >> (len % 64) != 0 {
                    return Err(Error::Config("mask has bits set beyond its length".into()));
                }
            }
        }
        Ok(mask)
    }
}

#[derive(Serialize, Deserialize)]
struct EncodedMask {
    len: usize,
    bits: String,
}

impl Serialize for BitMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        EncodedMask {
            len: self.len,
            bits: STANDARD.encode(self.to_le_bytes()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BitMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let enc = EncodedMask::deserialize(deserializer)?;
        let bytes = STANDARD.decode(enc.bits.as_bytes()).map_err(D::Error::custom)?;
        BitMask::from_le_bytes(enc.len, &bytes).map_err(D::Error::custom)
    }
}
