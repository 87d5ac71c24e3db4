//! Browser bindings: synthetic covers, attack previews, filter responses and
//! a small end-to-end embedding.

use advsteg_core::attacks::{attack_clip, bandpass_taps, lowpass_taps, response, AttackSettings, AttackSpec};
use advsteg_core::decoder::{init_decoder, DecoderConfig, DecoderKey};
use advsteg_core::embed::{embed, EmbedConfig};
use advsteg_core::message::Message;
use advsteg_core::metrics::{psnr, recovery_accuracy};
use advsteg_core::synth::SynthKind;
use advsteg_core::wavio::AudioClip;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const SAMPLE_RATE: u32 = 16_000;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// A synthetic cover: `kind` is voiced, tones or noise.
#[wasm_bindgen]
pub fn synth_clip(kind: &str, seed: u32, len: usize) -> Result<Vec<f32>, String> {
    let kind = match kind {
        "voiced" => SynthKind::Voiced,
        "tones" => SynthKind::ToneMix,
        "noise" => SynthKind::Noise,
        k => return Err(format!("unknown clip kind {k:?}")),
    };
    let clip = advsteg_core::synth::synth_clip(kind, seed as u64, len, SAMPLE_RATE).map_err(err)?;
    Ok(clip.into_samples())
}

/// Applies one attack given as JSON, e.g. `{"kind":"mp3","params":{"bitrate_kbps":128}}`.
#[wasm_bindgen]
pub fn attack_preview(samples: Vec<f32>, spec_json: &str, seed: u32) -> Result<Vec<f32>, String> {
    let spec: AttackSpec = serde_json::from_str(spec_json).map_err(err)?;
    let settings = AttackSettings::default();
    spec.validate(SAMPLE_RATE, &settings).map_err(err)?;
    let clip = AudioClip::from_clamped(samples, SAMPLE_RATE).map_err(err)?;
    Ok(attack_clip(&clip, &spec, &settings, seed as u64).map_err(err)?.into_samples())
}

/// Magnitude response in dB at `points` frequencies from 0 to Nyquist.
/// `lo_hz <= 0` designs a low-pass at `hi_hz`, otherwise a band-pass.
#[wasm_bindgen]
pub fn filter_response(lo_hz: f64, hi_hz: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 {
        return Err("need at least two points".into());
    }
    let sr = SAMPLE_RATE as f64;
    let hi = hi_hz.min(0.4995 * sr) / sr;
    let taps = if lo_hz <= 0.0 {
        lowpass_taps(hi, advsteg_core::attacks::DEFAULT_TAPS)
    } else {
        bandpass_taps(lo_hz / sr, hi, advsteg_core::attacks::DEFAULT_TAPS)
    }
    .map_err(err)?;
    Ok((0..points)
        .map(|i| {
            let f = 0.5 * i as f64 / (points - 1) as f64;
            20.0 * response(&taps, f).max(1e-6).log10()
        })
        .collect())
}

#[derive(Serialize)]
pub struct DemoResult {
    pub stego: Vec<f32>,
    pub message_hex: String,
    pub decoded_hex: String,
    pub accuracy: f64,
    pub psnr_db: f64,
    pub loss: Vec<f32>,
}

/// Embeds `bits` random bits into `cover` with a decoder seeded by `key_seed`
/// and returns the outcome as JSON.
pub fn run_demo(cover: Vec<f32>, key_seed: u32, bits: usize, epsilon: f64, iterations: usize) -> Result<DemoResult, String> {
    let clip = AudioClip::from_clamped(cover, SAMPLE_RATE).map_err(err)?;
    let decoder = init_decoder(DecoderKey::new(key_seed as u64), DecoderConfig::with_message_len(bits)).map_err(err)?;
    let message = Message::random(bits, key_seed as u64 ^ 0x5eed).map_err(err)?;
    let config = EmbedConfig { epsilon, iterations, ..EmbedConfig::without_detectors() };
    let r = embed(&clip, &message, &decoder, &[], &config, key_seed as u64).map_err(err)?;
    let stego = r.stego.quantized();
    let decoded = decoder.extract(stego.samples()).map_err(err)?;
    Ok(DemoResult {
        message_hex: message.to_hex(),
        decoded_hex: decoded.to_hex(),
        accuracy: recovery_accuracy(&message, &decoded).map_err(err)?,
        psnr_db: psnr(clip.samples(), stego.samples()).map_err(err)?,
        loss: r.trace.iter().map(|t| t.l2).collect(),
        stego: stego.into_samples(),
    })
}

#[wasm_bindgen]
pub fn embed_demo(cover: Vec<f32>, key_seed: u32, bits: usize, epsilon: f64, iterations: usize) -> Result<String, String> {
    let r = run_demo(cover, key_seed, bits, epsilon, iterations)?;
    serde_json::to_string(&r).map_err(err)
}
