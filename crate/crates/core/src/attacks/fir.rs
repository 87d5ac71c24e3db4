//! Windowed-sinc FIR design (Hamming window) and zero-phase application.

use std::f64::consts::PI;

use crate::graph::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

pub const DEFAULT_TAPS: usize = 127;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn hamming(taps: usize) -> Vec<f64> {
    (0..taps).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1) as f64).cos()).collect()
}

fn check_taps(taps: usize) -> Result<()> {
    if taps < 3 || taps % 2 == 0 {
        return Err(Error::Attack(format!("FIR length {taps} must be odd and at least 3")));
    }
    Ok(())
}

/// Low-pass taps with unit DC gain; `cutoff` is normalized to the sample
/// rate (Nyquist = 0.5).
pub fn lowpass_taps(cutoff: f64, taps: usize) -> Result<Vec<f64>> {
    check_taps(taps)?;
    if !(cutoff > 0.0 && cutoff <= 0.5) {
        return Err(Error::Attack(format!("normalized cutoff {cutoff} not in (0, 0.5]")));
    }
    let mid = (taps / 2) as f64;
    let w = hamming(taps);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            // mirror so the kernel is exactly symmetric (linear phase)
            let n = n.min(taps - 1 - n);
            2.0 * cutoff * sinc(2.0 * cutoff * (n as f64 - mid)) * w[n]
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    Ok(h)
}

/// Band-pass taps as the difference of two unit-DC low-passes.
pub fn bandpass_taps(lo: f64, hi: f64, taps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Attack(format!("band edges {lo} and {hi} must satisfy 0 < lo < hi")));
    }
    let a = lowpass_taps(hi, taps)?;
    let b = lowpass_taps(lo, taps)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

/// Magnitude response of `taps` at normalized frequency `f`.
pub fn response(taps: &[f64], f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &h) in taps.iter().enumerate() {
        re += h * (2.0 * PI * f * n as f64).cos();
        im -= h * (2.0 * PI * f * n as f64).sin();
    }
    re.hypot(im)
}

impl<T: Real> Graph<T> {
    /// Centred FIR filtering of a `1×L` signal: symmetric edge padding by
    /// half the kernel, then a valid cross-correlation, so a symmetric
    /// kernel adds no delay.
    pub fn fir_filter(&mut self, x: Var, taps: &[f64]) -> Result<Var> {
        check_taps(taps.len())?;
        let half = taps.len() / 2;
        let xp = self.pad_symmetric(x, half, half)?;
        let w = self.constant(Tensor::new(&[1, 1, taps.len()], taps.iter().map(|&v| T::lit(v)).collect())?)?;
        self.conv1d_strided(xp, w, None, 1, 0)
    }
}
