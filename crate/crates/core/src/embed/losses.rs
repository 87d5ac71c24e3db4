//! Loss terms of the embedding objective, as graph operations.

use crate::graph::{Graph, Var};
use crate::{Error, Result};

/// Fidelity term: mean squared error between stego and cover.
pub fn loss_l1(g: &mut Graph<f32>, stego: Var, cover: Var) -> Result<Var> {
    g.mse(stego, cover)
}

/// Extraction term: mean binary cross-entropy against the message bits.
pub fn loss_l2(g: &mut Graph<f32>, probs: Var, message: &[f32]) -> Result<Var> {
    g.bce(probs, message)
}

/// Anti-detection term `−Σ_k ln(1 − J_k)` over per-detector stego
/// probabilities (each `1×1`).
pub fn loss_l3(g: &mut Graph<f32>, detector_probs: &[Var]) -> Result<Var> {
    if detector_probs.is_empty() {
        return Err(Error::InvalidArgument("anti-detection loss needs at least one detector".into()));
    }
    let terms: Vec<(Var, f32)> = detector_probs.iter().map(|&p| (g.neg_log_one_minus(p), 1.0)).collect();
    g.weighted_sum(&terms)
}

/// `ω·BCE(clean) + (1−ω)·BCE(attacked)`; without an attacked decode the
/// term is the clean BCE.
pub fn loss_robust(
    g: &mut Graph<f32>,
    message: &[f32],
    clean: Var,
    attacked: Option<Var>,
    omega: f64,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::InvalidArgument(format!("ω = {omega} not in [0, 1]")));
    }
    let lc = loss_l2(g, clean, message)?;
    match attacked {
        None => Ok(lc),
        Some(a) => {
            let la = loss_l2(g, a, message)?;
            g.weighted_sum(&[(lc, omega as f32), (la, (1.0 - omega) as f32)])
        }
    }
}

/// `α·l1 + β·l2 + γ·l3`; the `l3` term is left out of the graph when `γ = 0`.
pub fn total_loss(
    g: &mut Graph<f32>,
    l1: Var,
    l2: Var,
    l3: Option<Var>,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<Var> {
    if alpha < 0.0 || beta < 0.0 || gamma < 0.0 {
        return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
    }
    let mut terms = vec![(l1, alpha as f32), (l2, beta as f32)];
    if gamma > 0.0 {
        let l3 = l3.ok_or_else(|| Error::InvalidArgument("γ > 0 without detectors".into()))?;
        terms.push((l3, gamma as f32));
    }
    g.weighted_sum(&terms)
}
