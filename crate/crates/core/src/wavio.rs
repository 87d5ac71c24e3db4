//! RIFF/WAVE PCM16 mono reading and writing.
//!
//! Samples live in the amplitude domain `[-1, 1]`: reading divides by
//! 32768, writing multiplies by 32768, rounds half away from zero and
//! saturates to `[-32768, 32767]`, so `+1.0` writes as 32767 and every
//! grid value reads back bit-exactly. Only the canonical 44-byte `fmt `+`data` layout is
//! emitted; unknown chunks are skipped on read.

use crate::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const CANONICAL_HEADER_LEN: usize = 44;

const PCM_FORMAT_TAG: u16 = 1;

/// A mono clip in the normalized amplitude domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, rejecting empty or out-of-range sample sequences.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("clip must contain at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Clamps every sample into `[-1, 1]` (NaN becomes 0).
    pub fn from_clamped(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let samples = samples
            .into_iter()
            .map(|s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) })
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> u16 {
        1
    }

    /// Snaps the clip onto the PCM16 grid, i.e. `read(write(self))`.
    pub fn quantized(&self) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|&s| pcm16_from_amplitude(s) as f32 / 32768.0)
            .collect();
        Self { samples, sample_rate: self.sample_rate }
    }
}

/// Scales by 32768, rounds half away from zero and saturates.
pub fn pcm16_from_amplitude(x: f32) -> i16 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn u16_at(bytes: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([bytes[off], bytes[off + 1]])
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
}

struct Fmt {
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<Fmt> {
    if body.len() < 16 {
        return Err(Error::MalformedWav(format!("fmt chunk too short ({} bytes)", body.len())));
    }
    let tag = u16_at(body, 0);
    if tag != PCM_FORMAT_TAG {
        return Err(Error::UnsupportedWav { field: "format tag", value: tag as u32 });
    }
    let channels = u16_at(body, 2);
    if channels != 1 {
        return Err(Error::UnsupportedWav { field: "channel count", value: channels as u32 });
    }
    let bits = u16_at(body, 14);
    if bits != 16 {
        return Err(Error::UnsupportedWav { field: "bit depth", value: bits as u32 });
    }
    Ok(Fmt { sample_rate: u32_at(body, 4) })
}

/// Parses a RIFF/WAVE PCM16 mono container.
pub fn read_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 {
        return Err(Error::MalformedWav("shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::MalformedWav("missing RIFF magic".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing WAVE form type".into()));
    }

    let mut fmt: Option<Fmt> = None;
    let mut off = 12;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32_at(bytes, off + 4) as usize;
        let body_start = off + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::MalformedWav(format!(
                    "chunk '{}' declares {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => {
                let fmt = fmt.ok_or_else(|| Error::MalformedWav("data chunk before fmt chunk".into()))?;
                if size % 2 != 0 {
                    return Err(Error::MalformedWav(format!("odd data chunk size {size}")));
                }
                let samples: Vec<f32> = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                if samples.is_empty() {
                    return Err(Error::MalformedWav("empty data chunk".into()));
                }
                return AudioClip::new(samples, fmt.sample_rate);
            }
            _ => {}
        }
        // chunks are word aligned
        off = body_end + (size & 1);
    }
    Err(Error::MalformedWav(if fmt.is_some() { "no data chunk" } else { "no fmt chunk" }.into()))
}

/// Serializes to the canonical 44-byte-header layout.
pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.len() * 2) as u32;
    let mut out = Vec::with_capacity(CANONICAL_HEADER_LEN + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT_TAG.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&pcm16_from_amplitude(s).to_le_bytes());
    }
    out
}

/// Truncates or zero-pads at the tail to exactly `target_len` samples.
pub fn fit_length(clip: &AudioClip, target_len: usize) -> Result<AudioClip> {
    if target_len == 0 {
        return Err(Error::InvalidArgument("target length must be positive".into()));
    }
    let mut samples = clip.samples().to_vec();
    samples.resize(target_len, 0.0);
    Ok(AudioClip { samples, sample_rate: clip.sample_rate() })
}
