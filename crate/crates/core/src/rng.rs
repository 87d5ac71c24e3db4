//! SplitMix64 and the derived uniform/normal draws.
//!
//! Every stochastic step in the crate draws from this generator so that
//! weights, noise and messages are reproducible in any language from the
//! seed alone.

/// SplitMix64 (Steele, Lea, Flood). State advances by the golden-ratio
/// increment; the output is a bijective mix of the state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` on a 2⁻²⁴ grid: `(u >> 40) · 2⁻²⁴`. Exact in f32
    /// and f64, so every language reproduces the same value.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 40) as f64 * (1.0 / (1u64 << 24) as f64)
    }

    /// Uniform in `[-bound, bound)`.
    pub fn next_symmetric(&mut self, bound: f64) -> f64 {
        (2.0 * self.next_unit() - 1.0) * bound
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per draw and
    /// discards the sine branch so the stream position is easy to reason
    /// about.
    pub fn next_normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1], keeping ln finite
        let u1 = 1.0 - self.next_unit();
        let u2 = self.next_unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Independent child stream, e.g. one per clip index.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut base = SplitMix64::new(seed ^ index.wrapping_mul(GOLDEN_GAMMA));
        SplitMix64::new(base.next_u64())
    }
}
