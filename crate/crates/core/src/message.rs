//! Secret bit-strings and their hex packing.

use std::fmt;

use crate::rng::SplitMix64;
use crate::{Error, Result};

/// A binary message `M` of length `K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    bits: Vec<u8>,
}

impl Message {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidArgument("empty message".into()));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidArgument(format!("bit value {b} is not 0 or 1")));
        }
        Ok(Self { bits })
    }

    /// `k` uniformly random bits from a SplitMix64 stream (top bit of each draw).
    pub fn random(k: usize, seed: u64) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        Self::from_bits((0..k).map(|_| (rng.next_u64() >> 63) as u8).collect())
    }

    /// Parses `k` bits from big-endian hex; bits past `k` must be zero.
    pub fn from_hex(hex: &str, k: usize) -> Result<Self> {
        let hex = hex.trim().trim_start_matches("0x");
        let need = k.div_ceil(8);
        if hex.len() != 2 * need {
            return Err(Error::InvalidArgument(format!(
                "hex message of {} digits cannot hold exactly {k} bits ({} digits expected)",
                hex.len(),
                2 * need
            )));
        }
        let mut bits = Vec::with_capacity(need * 8);
        for i in 0..need {
            let byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
                .map_err(|e| Error::InvalidArgument(format!("hex message: {e}")))?;
            bits.extend((0..8).rev().map(|s| (byte >> s) & 1));
        }
        if bits[k..].iter().any(|&b| b != 0) {
            return Err(Error::InvalidArgument("hex message has non-zero padding bits".into()));
        }
        bits.truncate(k);
        Self::from_bits(bits)
    }

    /// Big-endian within bytes, tail zero-padded.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(8)
            .map(|c| {
                let byte = c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)));
                format!("{byte:02x}")
            })
            .collect()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn as_targets(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// `K = round(bps · H)`.
pub fn message_len(bps: f64, h: usize) -> Result<usize> {
    let k = (bps * h as f64).round();
    if !(k >= 1.0) || k > h as f64 {
        return Err(Error::InvalidArgument(format!("payload {bps} bps over {h} samples gives K = {k}")));
    }
    Ok(k as usize)
}
