//! Deterministic synthetic covers: voiced harmonic tones with a syllable
//! envelope, tone mixtures and coloured noise, all on the PCM16 grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::wavio::AudioClip;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Voiced,
    ToneMix,
    Noise,
}

impl SynthKind {
    const ALL: [SynthKind; 3] = [SynthKind::Voiced, SynthKind::ToneMix, SynthKind::Noise];
}

/// Target RMS range of generated clips (log-uniform).
pub const RMS_RANGE: (f64, f64) = (0.03, 0.2);

fn normalize_rms(x: &mut [f64], target: f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

fn brown(rng: &mut SplitMix64, len: usize, pole: f64) -> Vec<f64> {
    let mut acc = 0.0;
    (0..len)
        .map(|_| {
            acc = pole * acc + rng.next_normal();
            acc
        })
        .collect()
}

fn voiced(rng: &mut SplitMix64, len: usize, sr: f64) -> Vec<f64> {
    let f0 = 90.0 + 170.0 * rng.next_unit();
    let vib_rate = 3.0 + 3.0 * rng.next_unit();
    let env_rate = 2.0 + 3.0 * rng.next_unit();
    let env_phase = 2.0 * PI * rng.next_unit();
    let mut phase = 0.0;
    let mut phases = Vec::with_capacity(len);
    for t in 0..len {
        let ts = t as f64 / sr;
        phase += 2.0 * PI * f0 * (1.0 + 0.02 * (2.0 * PI * vib_rate * ts).sin()) / sr;
        phases.push(phase);
    }
    let mut x = vec![0.0; len];
    let mut h = 1;
    while f0 * h as f64 <= 0.49 * sr && h < 80 {
        let amp = 1.0 / (1.0 + (f0 * h as f64 / 500.0).powi(2));
        let off = 2.0 * PI * rng.next_unit();
        for (v, &p) in x.iter_mut().zip(&phases) {
            *v += amp * (h as f64 * p + off).sin();
        }
        h += 1;
    }
    for (t, v) in x.iter_mut().enumerate() {
        let e = ((2.0 * PI * env_rate * t as f64 / sr + env_phase).sin() * 1.2).clamp(0.0, 1.0);
        *v *= e * e + 0.05;
    }
    normalize_rms(&mut x, 1.0);
    let mut bed = brown(rng, len, 0.97);
    normalize_rms(&mut bed, 0.1);
    x.iter_mut().zip(&bed).for_each(|(v, b)| *v += b);
    x
}

fn tone_mix(rng: &mut SplitMix64, len: usize, sr: f64) -> Vec<f64> {
    let tones = 2 + (rng.next_u64() % 4) as usize;
    let mut x = vec![0.0; len];
    for _ in 0..tones {
        let f = 100.0 * (40.0f64).powf(rng.next_unit());
        let amp = 0.2 + rng.next_unit();
        let off = 2.0 * PI * rng.next_unit();
        for (t, v) in x.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * f * t as f64 / sr + off).sin();
        }
    }
    for v in &mut x {
        *v += 0.05 * rng.next_normal();
    }
    x
}

fn noise(rng: &mut SplitMix64, len: usize) -> Vec<f64> {
    let pole = 0.5 + 0.45 * rng.next_unit();
    brown(rng, len, pole)
}

/// One clip of `kind`; the RMS is drawn log-uniformly from [`RMS_RANGE`].
pub fn synth_clip(kind: SynthKind, seed: u64, len: usize, sample_rate: u32) -> Result<AudioClip> {
    if len < 2 || sample_rate == 0 {
        return Err(Error::InvalidArgument(format!("synthetic clip of {len} samples at {sample_rate} Hz")));
    }
    let mut rng = SplitMix64::new(seed);
    let sr = sample_rate as f64;
    let mut x = match kind {
        SynthKind::Voiced => voiced(&mut rng, len, sr),
        SynthKind::ToneMix => tone_mix(&mut rng, len, sr),
        SynthKind::Noise => noise(&mut rng, len),
    };
    let (lo, hi) = RMS_RANGE;
    let rms = lo * (hi / lo).powf(rng.next_unit());
    normalize_rms(&mut x, rms);
    let samples = x.iter().map(|&v| v as f32).collect();
    Ok(AudioClip::from_clamped(samples, sample_rate)?.quantized())
}

/// `n` clips cycling through the kinds, clip `i` seeded by `derive(seed, i)`.
pub fn synth_corpus(n: usize, seed: u64, len: usize, sample_rate: u32) -> Result<Vec<AudioClip>> {
    (0..n)
        .map(|i| {
            let s = SplitMix64::derive(seed, i as u64).next_u64();
            synth_clip(SynthKind::ALL[i % 3], s, len, sample_rate)
        })
        .collect()
}
