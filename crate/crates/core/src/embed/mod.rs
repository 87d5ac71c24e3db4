//! The perturbation optimizer.
//!
//! Each iteration builds `A_s = clamp(A_c + δ, −1, 1)`, decodes it with
//! the fixed decoder, optionally decodes an attacked copy and scores it
//! with surrogate detectors, and takes an Adam step on `δ` followed by a
//! projection onto `[−ε, ε]`.

mod adam;
mod engine;
mod losses;

pub use adam::{Adam, AdamConfig};
pub use engine::{embed, EmbedResult, Embedder, TraceRow, TRACE_HEADER};
pub use losses::{loss_l1, loss_l2, loss_l3, loss_robust, total_loss};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackSettings, Curriculum};
use crate::{Error, Result};

/// `γ = 0` up to `ramp_start`, then linear up to `final_value` at `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaSchedule {
    pub ramp_start: usize,
    pub final_value: f64,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self { ramp_start: 1500, final_value: 0.01 }
    }
}

impl GammaSchedule {
    pub fn off() -> Self {
        Self { ramp_start: 0, final_value: 0.0 }
    }

    pub fn at(&self, i: usize, iterations: usize) -> f64 {
        if self.final_value == 0.0 || i <= self.ramp_start || iterations <= self.ramp_start {
            return 0.0;
        }
        let t = (i.min(iterations) - self.ramp_start) as f64 / (iterations - self.ramp_start) as f64;
        self.final_value * t
    }

    /// Whether the ramp is over at iteration `i`.
    pub fn complete(&self, i: usize, iterations: usize) -> bool {
        self.final_value == 0.0 || i >= iterations
    }
}

/// Piecewise-linear ω over `(iteration, value)` knots, constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaSchedule {
    pub knots: Vec<(usize, f64)>,
}

impl Default for OmegaSchedule {
    fn default() -> Self {
        Self { knots: vec![(500, 1.0), (1500, 0.4)] }
    }
}

impl OmegaSchedule {
    pub fn constant(v: f64) -> Self {
        Self { knots: vec![(0, v)] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::InvalidArgument("ω schedule needs at least one knot".into()));
        }
        if self.knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("ω knots must have increasing iterations".into()));
        }
        if self.knots.iter().any(|&(_, v)| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument("ω values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn at(&self, i: usize) -> f64 {
        let k = &self.knots;
        if i <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((i0, v0), (i1, v1)) = (w[0], w[1]);
            if i <= i1 {
                return v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64;
            }
        }
        k[k.len() - 1].1
    }
}

/// What the decoder sees during optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeInput {
    /// The stego signal, as the receiver would (default).
    Stego,
    /// The perturbation alone (attacked residual `𝒜(A_s) − A_c` in robust mode).
    Delta,
}

/// How `‖δ‖∞ ≤ ε` is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Clamp after every Adam step (default).
    Project,
    /// `δ = ε·tanh(w)` with Adam on `w` at learning rate `η/ε`.
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: GammaSchedule,
    pub omega: OmegaSchedule,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub robust: bool,
    pub curriculum: Curriculum,
    pub attack_settings: AttackSettings,
    pub decode_input: DecodeInput,
    pub bound: BoundMode,
    pub early_exit: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            alpha: 1.0,
            beta: 0.5,
            gamma: GammaSchedule::default(),
            omega: OmegaSchedule::default(),
            iterations: 2000,
            adam: AdamConfig::default(),
            robust: false,
            curriculum: Curriculum::default(),
            attack_settings: AttackSettings::default(),
            decode_input: DecodeInput::Stego,
            bound: BoundMode::Project,
            early_exit: true,
        }
    }
}

impl EmbedConfig {
    /// Default settings without the anti-detection term.
    pub fn without_detectors() -> Self {
        Self { gamma: GammaSchedule::off(), ..Self::default() }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("ε = {} must be positive", self.epsilon));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma.final_value < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        self.adam.validate()?;
        if self.robust {
            self.omega.validate()?;
            self.curriculum.validate(sample_rate, &self.attack_settings)?;
        }
        Ok(())
    }

    pub fn gamma_at(&self, i: usize) -> f64 {
        self.gamma.at(i, self.iterations)
    }

    /// ω for iteration `i`; always 1 outside robust mode.
    pub fn omega_at(&self, i: usize) -> f64 {
        if self.robust {
            self.omega.at(i)
        } else {
            1.0
        }
    }
}

/// Elementwise clamp to `[lo, hi]`.
pub fn project(x: &mut [f32], lo: f32, hi: f32) {
    debug_assert!(lo <= hi);
    x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_schedule() {
        let c = EmbedConfig::default();
        assert_eq!(c.gamma_at(1000), 0.0);
        assert_eq!(c.gamma_at(1500), 0.0);
        assert!((c.gamma_at(1750) - 0.005).abs() < 1e-15);
        assert!((c.gamma_at(2000) - 0.01).abs() < 1e-15);
        assert_eq!(EmbedConfig::without_detectors().gamma_at(2000), 0.0);
    }

    #[test]
    fn omega_schedule() {
        let c = EmbedConfig { robust: true, ..EmbedConfig::default() };
        assert_eq!(c.omega_at(100), 1.0);
        assert!((c.omega_at(1000) - 0.7).abs() < 1e-12);
        assert!((c.omega_at(1500) - 0.4).abs() < 1e-12);
        assert!((c.omega_at(1900) - 0.4).abs() < 1e-12);
        assert_eq!(EmbedConfig::default().omega_at(1900), 1.0);
        assert!(OmegaSchedule { knots: vec![(5, 1.2)] }.validate().is_err());
    }

    #[test]
    fn projection() {
        let mut x = [1.5f32, 0.3, -0.002];
        project(&mut x[..2], -1.0, 1.0);
        project(&mut x[2..], -0.001, 0.001);
        assert_eq!(x, [1.0, 0.3, -0.001]);
    }

    #[test]
    fn config_json_round_trip() {
        let c = EmbedConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<EmbedConfig>(&s).unwrap(), c);
        assert!(EmbedConfig { epsilon: 0.0, ..c }.validate(16000).is_err());
    }
}
