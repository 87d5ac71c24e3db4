use std::path::{Path, PathBuf};

use advsteg_core::attacks::{AttackSpec, Curriculum};
use advsteg_core::decoder::DecoderConfig;
use advsteg_core::detectors::TrainConfig;
use advsteg_core::embed::EmbedConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs besides file paths given on the command line.
/// Loaded from `--config`; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub payload_bps: f64,
    /// Fixed message for every clip; random per-clip bits when absent.
    pub message_hex: Option<String>,
    /// Truncate or zero-pad covers to this many samples.
    pub fit_length: Option<usize>,
    pub decoder: DecoderConfig,
    pub embed: EmbedConfig,
    pub detectors: Vec<PathBuf>,
    /// Evaluation attack list.
    pub attacks: Vec<AttackSpec>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut attacks = vec![AttackSpec::None];
        attacks.extend(Curriculum::default().stages.into_iter().map(|s| s.attack));
        Self {
            payload_bps: 0.1,
            message_hex: None,
            fit_length: None,
            decoder: DecoderConfig::default(),
            embed: EmbedConfig::default(),
            detectors: Vec::new(),
            attacks,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Accepts decimal or `0x`-prefixed hex.
pub fn parse_u64(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let r = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16),
        None => t.parse(),
    };
    r.map_err(|e| format!("{s:?}: {e}"))
}

/// Parses an attack either as JSON (`{"kind":"mp3","params":{...}}`) or as
/// shorthand: `none`, `noise:30`, `mp3:128`, `aac:128`, `stretch:0.9`,
/// `lowpass:4000`, `bandpass:300:8000`.
pub fn parse_attack(s: &str) -> Result<AttackSpec> {
    let t = s.trim();
    if t.starts_with('{') {
        return serde_json::from_str(t).with_context(|| format!("attack spec {t:?}"));
    }
    let parts: Vec<&str> = t.split(':').collect();
    let num = |i: usize| -> Result<f64> {
        let p = parts.get(i).with_context(|| format!("attack {t:?} is missing parameter {i}"))?;
        p.parse::<f64>().with_context(|| format!("attack {t:?}: bad number {p:?}"))
    };
    let arity = |n: usize| -> Result<()> {
        if parts.len() != n + 1 {
            bail!("attack {t:?} takes {n} parameter(s)");
        }
        Ok(())
    };
    let bitrate = |v: f64| -> Result<u32> {
        if v.fract() != 0.0 || v <= 0.0 {
            bail!("attack {t:?}: bitrate must be a positive integer");
        }
        Ok(v as u32)
    };
    let spec = match parts[0] {
        "none" => {
            arity(0)?;
            AttackSpec::None
        }
        "noise" => {
            arity(1)?;
            AttackSpec::GaussianNoise { snr_db: num(1)? }
        }
        "mp3" => {
            arity(1)?;
            AttackSpec::Mp3 { bitrate_kbps: bitrate(num(1)?)? }
        }
        "aac" => {
            arity(1)?;
            AttackSpec::Aac { bitrate_kbps: bitrate(num(1)?)? }
        }
        "stretch" => {
            arity(1)?;
            AttackSpec::TimeStretch { factor: num(1)? }
        }
        "lowpass" => {
            arity(1)?;
            AttackSpec::Lowpass { cutoff_hz: num(1)? }
        }
        "bandpass" => {
            arity(2)?;
            AttackSpec::Bandpass { lo_hz: num(1)?, hi_hz: num(2)? }
        }
        k => bail!("unknown attack kind {k:?}"),
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorthand_and_json_agree() {
        let a = parse_attack("mp3:128").unwrap();
        let b = parse_attack(r#"{"kind":"mp3","params":{"bitrate_kbps":128}}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_attack("bandpass:300:8000").unwrap(), AttackSpec::Bandpass { lo_hz: 300.0, hi_hz: 8000.0 });
        assert_eq!(parse_attack("none").unwrap(), AttackSpec::None);
        assert_eq!(parse_attack(r#"{"kind":"none"}"#).unwrap(), AttackSpec::None);
    }

    #[test]
    fn shorthand_errors() {
        for bad in ["mp3", "mp3:12.5", "noise:x", "bandpass:300", "warp:1", "none:1"] {
            assert!(parse_attack(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn u64_forms() {
        assert_eq!(parse_u64("0xDEADBEEF").unwrap(), 0xDEAD_BEEF);
        assert_eq!(parse_u64("42").unwrap(), 42);
        assert!(parse_u64("0xZZ").is_err());
    }

    #[test]
    fn partial_config() {
        let c: RunConfig = serde_json::from_str(r#"{"payload_bps": 0.5, "embed": {"iterations": 10}}"#).unwrap();
        assert_eq!(c.payload_bps, 0.5);
        assert_eq!(c.embed.iterations, 10);
        assert_eq!(c.embed.epsilon, 1e-3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"payload": 1}"#).is_err());
    }
}
