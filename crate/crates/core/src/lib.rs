//! Audio steganography by bounded adversarial perturbation.
//!
//! A secret bit-string is hidden in a PCM16 cover by optimizing an additive
//! perturbation `δ` with `‖δ‖∞ ≤ ε` so that a fixed, never-trained decoder
//! network (its weights are a pure function of a shared 64-bit key) maps the
//! stego signal to the message bits. Optional terms push surrogate
//! steganalysis detectors toward "cover" and train the perturbation against
//! simulated channel attacks.
//!
//! Module map:
//!
//! * [`wavio`]: RIFF/PCM16 I/O and length fitting.
//! * [`graph`]: a small reverse-mode differentiation engine.
//! * [`decoder`]: the key-seeded fixed decoder.
//! * [`attacks`]: differentiable channel simulations and the curriculum.
//! * [`detectors`]: surrogate steganalyzers and the `P̄_E` metric.
//! * [`embed`]: the perturbation optimizer (losses, schedules, Adam, loop).
//! * [`metrics`]: PSNR, bit accuracy and report aggregation.
//! * [`synth`]: deterministic synthetic cover clips for desk-scale runs.

pub mod attacks;
pub mod decoder;
pub mod detectors;
pub mod embed;
mod error;
pub mod graph;
pub mod message;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod wavio;

pub use error::{Error, Result};
