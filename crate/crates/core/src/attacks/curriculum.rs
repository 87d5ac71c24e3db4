//! Iteration-indexed attack schedule: a warmup with no attack, then
//! round-robin over the stages that have started.

use serde::{Deserialize, Serialize};

use super::{AttackSettings, AttackSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(flatten)]
    pub attack: AttackSpec,
    pub start_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    pub warmup: usize,
    pub stages: Vec<Stage>,
}

/// Iterations between planned stage starts of the default curriculum.
pub const DEFAULT_STAGE_SPACING: usize = 200;
pub const DEFAULT_WARMUP: usize = 500;

impl Default for Curriculum {
    fn default() -> Self {
        let attacks = [
            AttackSpec::GaussianNoise { snr_db: 30.0 },
            AttackSpec::Mp3 { bitrate_kbps: 128 },
            AttackSpec::Aac { bitrate_kbps: 128 },
            AttackSpec::Lowpass { cutoff_hz: 4000.0 },
            AttackSpec::Bandpass { lo_hz: 300.0, hi_hz: 8000.0 },
            AttackSpec::TimeStretch { factor: 0.9 },
        ];
        Self::staged(DEFAULT_WARMUP, DEFAULT_STAGE_SPACING, attacks.to_vec())
    }
}

impl Curriculum {
    /// No warmup, no stages: attacks disabled.
    pub fn empty() -> Self {
        Self { warmup: 0, stages: Vec::new() }
    }

    /// Stage `s` starts at `warmup + 1 + s·spacing`.
    pub fn staged(warmup: usize, spacing: usize, attacks: Vec<AttackSpec>) -> Self {
        let stages = attacks
            .into_iter()
            .enumerate()
            .map(|(s, attack)| Stage { attack, start_iteration: warmup + 1 + s * spacing })
            .collect();
        Self { warmup, stages }
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn validate(&self, sample_rate: u32, settings: &AttackSettings) -> Result<()> {
        for w in self.stages.windows(2) {
            if w[1].start_iteration <= w[0].start_iteration {
                return Err(Error::Attack(format!(
                    "stage start iterations must increase strictly ({} then {})",
                    w[0].start_iteration, w[1].start_iteration
                )));
            }
        }
        for s in &self.stages {
            if s.start_iteration == 0 {
                return Err(Error::Attack("stage start iteration must be at least 1".into()));
            }
            s.attack.validate(sample_rate, settings)?;
        }
        Ok(())
    }

    /// Attack for iteration `i` (1-based); `None` during warmup or before
    /// the first stage starts.
    pub fn schedule(&self, i: usize) -> Result<Option<&AttackSpec>> {
        if i == 0 {
            return Err(Error::InvalidArgument("iterations are numbered from 1".into()));
        }
        if i <= self.warmup {
            return Ok(None);
        }
        if self.stages.is_empty() {
            return Err(Error::Attack("empty curriculum after warmup".into()));
        }
        let pool: Vec<&AttackSpec> =
            self.stages.iter().filter(|s| s.start_iteration <= i).map(|s| &s.attack).collect();
        if pool.is_empty() {
            return Ok(None);
        }
        Ok(Some(pool[(i - self.warmup - 1) % pool.len()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> Curriculum {
        Curriculum {
            warmup: 10,
            stages: vec![
                Stage { attack: AttackSpec::GaussianNoise { snr_db: 30.0 }, start_iteration: 11 },
                Stage { attack: AttackSpec::TimeStretch { factor: 0.9 }, start_iteration: 11 + 1 },
            ],
        }
    }

    #[test]
    fn warmup_returns_none() {
        let c = Curriculum::default();
        for i in [1, 250, 500] {
            assert_eq!(c.schedule(i).unwrap(), None);
        }
        assert!(c.schedule(501).unwrap().is_some());
    }

    #[test]
    fn round_robin_over_active_pool() {
        let mut c = two();
        c.stages[1].start_iteration = 11;
        let noise = &c.stages[0].attack;
        let stretch = &c.stages[1].attack;
        assert_eq!(c.schedule(11).unwrap(), Some(noise));
        assert_eq!(c.schedule(12).unwrap(), Some(stretch));
        assert_eq!(c.schedule(13).unwrap(), Some(noise));
    }

    #[test]
    fn inactive_stage_never_selected() {
        let c = Curriculum::default();
        for i in 501..=700 {
            assert_eq!(c.schedule(i).unwrap(), Some(&AttackSpec::GaussianNoise { snr_db: 30.0 }));
        }
        for i in 1501..=2000 {
            assert!(c.schedule(i).unwrap().is_some());
        }
        assert_eq!(c.stages.iter().map(|s| s.start_iteration).collect::<Vec<_>>(), [501, 701, 901, 1101, 1301, 1501]);
    }

    #[test]
    fn empty_after_warmup_is_an_error() {
        let c = Curriculum { warmup: 5, stages: vec![] };
        assert_eq!(c.schedule(5).unwrap(), None);
        assert!(c.schedule(6).is_err());
    }

    #[test]
    fn validation_and_json() {
        let s = AttackSettings::default();
        assert!(Curriculum::default().validate(16000, &s).is_ok());
        let mut c = two();
        c.stages[1].start_iteration = 11;
        assert!(c.validate(16000, &s).is_err());
        let j = serde_json::to_string(&two()).unwrap();
        assert!(j.contains(r#"{"kind":"gaussian_noise","params":{"snr_db":30.0},"start_iteration":11}"#));
        assert_eq!(serde_json::from_str::<Curriculum>(&j).unwrap(), two());
    }
}
