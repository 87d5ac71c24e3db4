//! Differentiable channel simulations and the attack curriculum.
//!
//! Every simulation maps a `1×H` signal to a `1×H` signal inside a
//! [`Graph`], so the embedder can back-propagate through it, and finishes
//! with a clamp to `[-1, 1]`.

mod curriculum;
mod fir;

pub use curriculum::{Curriculum, Stage};
pub use fir::{bandpass_taps, lowpass_taps, response, DEFAULT_TAPS};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, MdctBasis, Tensor, Var};
use crate::rng::SplitMix64;
use crate::wavio::AudioClip;
use crate::{Error, Result};

/// One channel distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum AttackSpec {
    None,
    GaussianNoise { snr_db: f64 },
    Mp3 { bitrate_kbps: u32 },
    Aac { bitrate_kbps: u32 },
    TimeStretch { factor: f64 },
    Lowpass { cutoff_hz: f64 },
    Bandpass { lo_hz: f64, hi_hz: f64 },
}

impl AttackSpec {
    /// Short label used in report columns, e.g. `mp3_128`.
    pub fn label(&self) -> String {
        match self {
            AttackSpec::None => "none".into(),
            AttackSpec::GaussianNoise { snr_db } => format!("noise_{snr_db}db"),
            AttackSpec::Mp3 { bitrate_kbps } => format!("mp3_{bitrate_kbps}k"),
            AttackSpec::Aac { bitrate_kbps } => format!("aac_{bitrate_kbps}k"),
            AttackSpec::TimeStretch { factor } => format!("stretch_{factor}"),
            AttackSpec::Lowpass { cutoff_hz } => format!("lpf_{cutoff_hz}hz"),
            AttackSpec::Bandpass { lo_hz, hi_hz } => format!("bpf_{lo_hz}_{hi_hz}hz"),
        }
    }

    pub fn validate(&self, sample_rate: u32, settings: &AttackSettings) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let bad = |m: String| Err(Error::Attack(m));
        match *self {
            AttackSpec::None => Ok(()),
            AttackSpec::GaussianNoise { snr_db } => {
                if !(0.0..=100.0).contains(&snr_db) {
                    return bad(format!("SNR {snr_db} dB not in [0, 100]"));
                }
                Ok(())
            }
            AttackSpec::Mp3 { bitrate_kbps } | AttackSpec::Aac { bitrate_kbps } => {
                settings.codec(bitrate_kbps).map(|_| ())
            }
            AttackSpec::TimeStretch { factor } => {
                if !(0.5..=2.0).contains(&factor) {
                    return bad(format!("stretch factor {factor} not in [0.5, 2]"));
                }
                Ok(())
            }
            AttackSpec::Lowpass { cutoff_hz } => {
                if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
                    return bad(format!("low-pass cutoff {cutoff_hz} Hz not in (0, {nyquist})"));
                }
                Ok(())
            }
            AttackSpec::Bandpass { lo_hz, hi_hz } => {
                if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz <= nyquist) {
                    return bad(format!("band {lo_hz}-{hi_hz} Hz must satisfy 0 < lo < hi <= {nyquist}"));
                }
                Ok(())
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, AttackSpec::None)
    }
}

/// Quantization levels and cutoffs for one codec bitrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecTable {
    pub bitrate_kbps: u32,
    pub levels: usize,
    pub mp3_cutoff_hz: f64,
    pub aac_cutoff_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSettings {
    pub codecs: Vec<CodecTable>,
    pub stft_frame: usize,
    pub stft_hop: usize,
    pub mdct_frame: usize,
    pub fir_taps: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        let row = |bitrate_kbps, levels, mp3_cutoff_hz, aac_cutoff_hz| CodecTable {
            bitrate_kbps,
            levels,
            mp3_cutoff_hz,
            aac_cutoff_hz,
        };
        Self {
            codecs: vec![row(64, 32, 5000.0, 5000.0), row(128, 64, 6500.0, 6500.0), row(256, 128, 7500.0, 7000.0)],
            stft_frame: 1024,
            stft_hop: 256,
            mdct_frame: 2048,
            fir_taps: DEFAULT_TAPS,
        }
    }
}

impl AttackSettings {
    pub fn codec(&self, bitrate_kbps: u32) -> Result<&CodecTable> {
        self.codecs
            .iter()
            .find(|c| c.bitrate_kbps == bitrate_kbps)
            .ok_or_else(|| Error::Attack(format!("unsupported bitrate {bitrate_kbps} kbps")))
    }
}

/// Everything an attack needs besides the signal.
pub struct AttackEnv<'a> {
    pub sample_rate: u32,
    /// Mean per-sample power of the cover, the reference for noise SNR.
    pub reference_power: f64,
    pub settings: &'a AttackSettings,
    /// Reused MDCT basis; built on demand when absent.
    pub mdct: Option<Arc<MdctBasis<f32>>>,
}

impl<'a> AttackEnv<'a> {
    pub fn new(sample_rate: u32, reference_power: f64, settings: &'a AttackSettings) -> Self {
        Self { sample_rate, reference_power, settings, mdct: None }
    }

    fn mdct_basis(&mut self) -> Result<Arc<MdctBasis<f32>>> {
        if let Some(b) = &self.mdct {
            if b.frame() == self.settings.mdct_frame {
                return Ok(b.clone());
            }
        }
        let b = Arc::new(MdctBasis::new(self.settings.mdct_frame)?);
        self.mdct = Some(b.clone());
        Ok(b)
    }
}

/// Mean per-sample power.
pub fn mean_power(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len().max(1) as f64
}

/// `σ = sqrt(P̄ · 10^(−SNR/10))`.
pub fn noise_sigma(reference_power: f64, snr_db: f64) -> f64 {
    (reference_power * 10f64.powf(-snr_db / 10.0)).sqrt()
}

/// Multiplies each row by a step, quantizes on the unit grid and scales
/// back, i.e. `step_r · round(x / step_r)` with a straight-through
/// gradient; rows with a zero step and masked columns are zeroed.
fn quantize_rows(g: &mut Graph<f32>, x: Var, levels: usize, keep: &[bool]) -> Result<Var> {
    let (rows, cols) = (g.shape(x)[0], g.value(x).len() / g.shape(x)[0]);
    let vals = g.value(x).data();
    let mut inv = Vec::with_capacity(vals.len());
    let mut back = Vec::with_capacity(vals.len());
    for r in 0..rows {
        let row = &vals[r * cols..(r + 1) * cols];
        let max = row.iter().fold(0f32, |m, v| m.max(v.abs()));
        let step = max / levels as f32;
        for &k in keep.iter().take(cols) {
            if step > 0.0 {
                inv.push(1.0 / step);
                back.push(if k { step } else { 0.0 });
            } else {
                inv.push(0.0);
                back.push(0.0);
            }
        }
    }
    let scaled = g.mul_const(x, inv)?;
    let q = g.quantize_ste(scaled, 1.0)?;
    g.mul_const(q, back)
}

fn mp3_sim(g: &mut Graph<f32>, x: Var, table: &CodecTable, env: &AttackEnv<'_>) -> Result<Var> {
    let len = g.shape(x)[1];
    let (frame, hop) = (env.settings.stft_frame, env.settings.stft_hop);
    let spec = g.stft(x, frame, hop)?;
    let mag = g.complex_magnitude(spec)?;
    let bins = frame / 2 + 1;
    let keep: Vec<bool> =
        (0..bins).map(|k| k as f64 * env.sample_rate as f64 / frame as f64 <= table.mp3_cutoff_hz).collect();
    let qmag = quantize_rows(g, mag, table.levels, &keep)?;
    let out = g.polar_rescale(spec, qmag)?;
    g.istft(out, frame, hop, len)
}

fn aac_sim(g: &mut Graph<f32>, x: Var, table: &CodecTable, env: &mut AttackEnv<'_>) -> Result<Var> {
    let len = g.shape(x)[1];
    let basis = env.mdct_basis()?;
    let m = basis.coefficients();
    let c = g.mdct(x, &basis)?;
    let companded = g.signed_pow(c, 0.75);
    let keep: Vec<bool> = (0..m)
        .map(|k| (k as f64 + 0.5) * env.sample_rate as f64 / (2.0 * m as f64) <= table.aac_cutoff_hz)
        .collect();
    let q = quantize_rows(g, companded, table.levels, &keep)?;
    let expanded = g.signed_pow(q, 4.0 / 3.0);
    g.imdct(expanded, &basis, len)
}

/// Applies `spec` to the `1×H` signal `x`, followed by a clamp to `[-1, 1]`.
/// Noise is drawn from `rng` and treated as a constant.
pub fn apply_attack(
    g: &mut Graph<f32>,
    x: Var,
    spec: &AttackSpec,
    env: &mut AttackEnv<'_>,
    rng: &mut SplitMix64,
) -> Result<Var> {
    spec.validate(env.sample_rate, env.settings)?;
    let s = g.shape(x);
    if s.len() != 2 || s[0] != 1 {
        return Err(Error::shape("attack", format!("expected 1×H signal, got {s:?}")));
    }
    let len = s[1];
    let sr = env.sample_rate as f64;
    let y = match *spec {
        AttackSpec::None => return Ok(x),
        AttackSpec::GaussianNoise { snr_db } => {
            let sigma = noise_sigma(env.reference_power, snr_db);
            let noise: Vec<f32> = (0..len).map(|_| (sigma * rng.next_normal()) as f32).collect();
            g.add_const(x, &noise)?
        }
        AttackSpec::Mp3 { bitrate_kbps } => {
            let t = env.settings.codec(bitrate_kbps)?.clone();
            mp3_sim(g, x, &t, env)?
        }
        AttackSpec::Aac { bitrate_kbps } => {
            let t = env.settings.codec(bitrate_kbps)?.clone();
            aac_sim(g, x, &t, env)?
        }
        AttackSpec::TimeStretch { factor } => {
            let mid = (factor * len as f64).round() as usize;
            if mid < 2 {
                return Err(Error::Attack(format!("stretched length {mid} below 2")));
            }
            let z = g.linear_resample(x, mid)?;
            g.linear_resample(z, len)?
        }
        AttackSpec::Lowpass { cutoff_hz } => {
            let taps = lowpass_taps(cutoff_hz / sr, env.settings.fir_taps)?;
            g.fir_filter(x, &taps)?
        }
        AttackSpec::Bandpass { lo_hz, hi_hz } => {
            // an edge exactly at Nyquist degenerates the low-pass to a delta
            let hi = hi_hz.min(0.4995 * sr);
            let taps = bandpass_taps(lo_hz / sr, hi / sr, env.settings.fir_taps)?;
            g.fir_filter(x, &taps)?
        }
    };
    g.clamp(y, -1.0, 1.0)
}

/// Applies an attack to a whole clip outside any optimization, using the
/// clip itself as the noise reference, and re-quantizes to PCM16.
pub fn attack_clip(clip: &AudioClip, spec: &AttackSpec, settings: &AttackSettings, seed: u64) -> Result<AudioClip> {
    if spec.is_none() {
        return Ok(clip.clone());
    }
    let mut env = AttackEnv::new(clip.sample_rate(), mean_power(clip.samples()), settings);
    let mut rng = SplitMix64::new(seed);
    let mut g = Graph::new();
    let x = g.constant(Tensor::signal(clip.samples().to_vec()))?;
    let y = apply_attack(&mut g, x, spec, &mut env, &mut rng)?;
    let out = g.value(y).data().to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} output", spec.label())));
    }
    Ok(AudioClip::from_clamped(out, clip.sample_rate())?.quantized())
}
