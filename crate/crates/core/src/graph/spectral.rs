//! STFT/iSTFT (Hann, squared-window overlap-add), MDCT/iMDCT (sine window,
//! 50 % overlap) and the magnitude/phase helpers used by the codec
//! simulations.
//!
//! Both transforms zero-pad the signal so every frame is full and every
//! original sample is covered by overlapping frames; the inverses crop the
//! padding back off, so `inverse(forward(x))` has the length of `x`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Backward, Grads, Graph, Real, Tensor, Values, Var};
use crate::{Error, Result};

/// Magnitude floor of the magnitude/phase split.
pub const MAGNITUDE_FLOOR: f64 = 1e-9;

/// Periodic Hann window.
pub fn hann_window<T: Real>(n: usize) -> Vec<T> {
    (0..n).map(|i| T::lit(0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())).collect()
}

/// Sine window `sin(π(n+½)/N)`; satisfies `w[n]² + w[n+N/2]² = 1`.
pub fn sine_window<T: Real>(n: usize) -> Vec<T> {
    (0..n).map(|i| T::lit((PI * (i as f64 + 0.5) / n as f64).sin())).collect()
}

/// Frame layout shared by a transform and its inverse.
#[derive(Debug, Clone, Copy)]
struct Framing {
    frame: usize,
    hop: usize,
    len: usize,
    front: usize,
    frames: usize,
}

impl Framing {
    fn new(frame: usize, hop: usize, len: usize) -> Self {
        let front = frame - hop;
        let min_total = front + len + (frame - hop);
        let frames = (min_total - frame).div_ceil(hop) + 1;
        Self { frame, hop, len, front, frames }
    }

    fn padded_len(&self) -> usize {
        (self.frames - 1) * self.hop + self.frame
    }

    fn pad<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut xp = vec![T::zero(); self.padded_len()];
        xp[self.front..self.front + self.len].copy_from_slice(x);
        xp
    }
}

fn check_signal<T: Real>(g: &Graph<T>, x: Var, op: &'static str) -> Result<usize> {
    let s = g.shape(x);
    if s.len() != 2 || s[0] != 1 {
        return Err(Error::shape(op, format!("expected 1×L, got {s:?}")));
    }
    Ok(s[1])
}

fn check_stft_params(frame: usize, hop: usize, len: usize) -> Result<()> {
    if !frame.is_power_of_two() || frame < 2 {
        return Err(Error::InvalidArgument(format!("stft frame {frame} must be a power of two")));
    }
    if hop == 0 || hop > frame {
        return Err(Error::InvalidArgument(format!("stft hop {hop} must be in 1..={frame}")));
    }
    if frame > len {
        return Err(Error::InvalidArgument(format!("stft frame {frame} longer than signal {len}")));
    }
    Ok(())
}

struct Plans<T> {
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Plans<T> {
    fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self { fwd: p.plan_fft_forward(n), inv: p.plan_fft_inverse(n) }
    }
}

struct StftOp<T> {
    x: Var,
    framing: Framing,
    window: Vec<T>,
    plans: Plans<T>,
}

impl<T: Real> Backward<T> for StftOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let Some(s) = grads.slot(self.x) else { return };
        let fr = self.framing;
        let bins = fr.frame / 2 + 1;
        let mut gp = vec![T::zero(); fr.padded_len()];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); fr.frame];
        for f in 0..fr.frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
            for k in 0..bins {
                let o = (f * bins + k) * 2;
                buf[k] = Complex::new(grad[o], grad[o + 1]);
            }
            self.plans.inv.process(&mut buf);
            for n in 0..fr.frame {
                let d = &mut gp[f * fr.hop + n];
                *d = *d + self.window[n] * buf[n].re;
            }
        }
        for (d, &g) in s.iter_mut().zip(&gp[fr.front..fr.front + fr.len]) {
            *d = *d + g;
        }
    }
}

struct IstftOp<T> {
    spec: Var,
    framing: Framing,
    window: Vec<T>,
    inv_norm: Vec<T>,
    plans: Plans<T>,
}

impl<T: Real> Backward<T> for IstftOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let Some(s) = grads.slot(self.spec) else { return };
        let fr = self.framing;
        let bins = fr.frame / 2 + 1;
        let mut gp = vec![T::zero(); fr.padded_len()];
        for (t, &g) in grad.iter().enumerate() {
            gp[fr.front + t] = g * self.inv_norm[fr.front + t];
        }
        let inv_n = T::lit(1.0 / fr.frame as f64);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); fr.frame];
        for f in 0..fr.frames {
            for n in 0..fr.frame {
                buf[n] = Complex::new(self.window[n] * gp[f * fr.hop + n], T::zero());
            }
            self.plans.fwd.process(&mut buf);
            for k in 0..bins {
                let c = if k == 0 || k == fr.frame / 2 { inv_n } else { inv_n + inv_n };
                let o = (f * bins + k) * 2;
                s[o] = s[o] + c * buf[k].re;
                s[o + 1] = s[o + 1] + c * buf[k].im;
            }
        }
    }
}

/// Precomputed MDCT basis `cos(π/M·(n + ½ + M/2)(k + ½))` and sine window
/// for a frame of `2M` samples.
#[derive(Debug, Clone)]
pub struct MdctBasis<T> {
    frame: usize,
    window: Vec<T>,
    cos: Vec<T>,
}

impl<T: Real> MdctBasis<T> {
    pub fn new(frame: usize) -> Result<Self> {
        if frame < 2 || frame % 2 != 0 {
            return Err(Error::InvalidArgument(format!("mdct frame {frame} must be even")));
        }
        let m = frame / 2;
        let mut cos = Vec::with_capacity(frame * m);
        for n in 0..frame {
            let a = n as f64 + 0.5 + m as f64 / 2.0;
            for k in 0..m {
                cos.push(T::lit((PI / m as f64 * a * (k as f64 + 0.5)).cos()));
            }
        }
        Ok(Self { frame, window: sine_window(frame), cos })
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn coefficients(&self) -> usize {
        self.frame / 2
    }
}

struct MdctOp<T> {
    x: Var,
    framing: Framing,
    basis: Arc<MdctBasis<T>>,
}

impl<T: Real> Backward<T> for MdctOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let Some(s) = grads.slot(self.x) else { return };
        let fr = self.framing;
        let (n, m) = (fr.frame, fr.hop);
        let mut gf = vec![T::zero(); fr.frames * n];
        // gf = grad · Cᵀ
        unsafe {
            T::gemm(
                fr.frames, m, n, T::one(),
                grad.as_ptr(), m as isize, 1,
                self.basis.cos.as_ptr(), 1, m as isize,
                T::zero(), gf.as_mut_ptr(), n as isize, 1,
            );
        }
        let mut gp = vec![T::zero(); fr.padded_len()];
        for f in 0..fr.frames {
            for i in 0..n {
                let d = &mut gp[f * m + i];
                *d = *d + self.basis.window[i] * gf[f * n + i];
            }
        }
        for (d, &g) in s.iter_mut().zip(&gp[fr.front..fr.front + fr.len]) {
            *d = *d + g;
        }
    }
}

struct ImdctOp<T> {
    coeffs: Var,
    framing: Framing,
    basis: Arc<MdctBasis<T>>,
}

impl<T: Real> ImdctOp<T> {
    fn scale(&self) -> T {
        T::lit(2.0 / self.framing.hop as f64)
    }
}

impl<T: Real> Backward<T> for ImdctOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let Some(s) = grads.slot(self.coeffs) else { return };
        let fr = self.framing;
        let (n, m) = (fr.frame, fr.hop);
        let scale = self.scale();
        let mut gf = vec![T::zero(); fr.frames * n];
        for f in 0..fr.frames {
            for i in 0..n {
                let t = f * m + i;
                if t >= fr.front && t < fr.front + fr.len {
                    gf[f * n + i] = scale * self.basis.window[i] * grad[t - fr.front];
                }
            }
        }
        // s += gf · C
        unsafe {
            T::gemm(
                fr.frames, n, m, T::one(),
                gf.as_ptr(), n as isize, 1,
                self.basis.cos.as_ptr(), m as isize, 1,
                T::one(), s.as_mut_ptr(), m as isize, 1,
            );
        }
    }
}

struct MagnitudeOp(Var);

impl<T: Real> Backward<T> for MagnitudeOp {
    fn backward(&self, values: &Values<'_, T>, out: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let z = values.get(self.0).data();
        let floor = T::lit(MAGNITUDE_FLOOR);
        let Some(s) = grads.slot(self.0) else { return };
        for (i, (&g, &m)) in grad.iter().zip(out.data()).enumerate() {
            if m > floor {
                s[2 * i] = s[2 * i] + g * z[2 * i] / m;
                s[2 * i + 1] = s[2 * i + 1] + g * z[2 * i + 1] / m;
            }
        }
    }
}

fn magnitude<T: Real>(re: T, im: T) -> (T, bool) {
    let m = re.hypot(im);
    let floor = T::lit(MAGNITUDE_FLOOR);
    if m > floor {
        (m, false)
    } else {
        (floor, true)
    }
}

struct PolarOp {
    spec: Var,
    mag: Var,
}

impl<T: Real> Backward<T> for PolarOp {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let z = values.get(self.spec).data();
        let nm = values.get(self.mag).data();
        if let Some(s) = grads.slot(self.mag) {
            for (i, d) in s.iter_mut().enumerate() {
                let (re, im) = (z[2 * i], z[2 * i + 1]);
                let (m, _) = magnitude(re, im);
                *d = *d + (grad[2 * i] * re + grad[2 * i + 1] * im) / m;
            }
        }
        if let Some(s) = grads.slot(self.spec) {
            for (i, &n) in nm.iter().enumerate() {
                let (re, im) = (z[2 * i], z[2 * i + 1]);
                let (gr, gi) = (grad[2 * i], grad[2 * i + 1]);
                let (m, floored) = magnitude(re, im);
                if floored {
                    s[2 * i] = s[2 * i] + gr * n / m;
                    s[2 * i + 1] = s[2 * i + 1] + gi * n / m;
                } else {
                    let (u, v) = (re / m, im / m);
                    s[2 * i] = s[2 * i] + n * (gr * (T::one() - u * u) - gi * u * v) / m;
                    s[2 * i + 1] = s[2 * i + 1] + n * (gi * (T::one() - v * v) - gr * u * v) / m;
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// One-sided STFT of a `1×L` signal; output is `frames × (frame/2+1) × 2`
    /// (real, imaginary).
    pub fn stft(&mut self, x: Var, frame: usize, hop: usize) -> Result<Var> {
        let len = check_signal(self, x, "stft")?;
        check_stft_params(frame, hop, len)?;
        let framing = Framing::new(frame, hop, len);
        let window: Vec<T> = hann_window(frame);
        let plans = Plans::new(frame);
        let xp = framing.pad(self.value(x).data());
        let bins = frame / 2 + 1;
        let mut data = Vec::with_capacity(framing.frames * bins * 2);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); frame];
        for f in 0..framing.frames {
            for n in 0..frame {
                buf[n] = Complex::new(window[n] * xp[f * hop + n], T::zero());
            }
            plans.fwd.process(&mut buf);
            for c in &buf[..bins] {
                data.push(c.re);
                data.push(c.im);
            }
        }
        let value = Tensor { shape: vec![framing.frames, bins, 2], data };
        Ok(self.push(value, &[x], StftOp { x, framing, window, plans }))
    }

    /// Inverse of [`Graph::stft`] for an original signal length `len`:
    /// windowed overlap-add divided by the summed squared window.
    pub fn istft(&mut self, spec: Var, frame: usize, hop: usize, len: usize) -> Result<Var> {
        check_stft_params(frame, hop, len)?;
        let framing = Framing::new(frame, hop, len);
        let bins = frame / 2 + 1;
        if self.shape(spec) != [framing.frames, bins, 2] {
            return Err(Error::shape(
                "istft",
                format!("spectrogram {:?}, expected [{}, {bins}, 2]", self.shape(spec), framing.frames),
            ));
        }
        let window: Vec<T> = hann_window(frame);
        let plans = Plans::new(frame);
        let z = self.value(spec).data();
        let mut yp = vec![T::zero(); framing.padded_len()];
        let mut norm = vec![T::zero(); framing.padded_len()];
        let inv_n = T::lit(1.0 / frame as f64);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); frame];
        for f in 0..framing.frames {
            for k in 0..bins {
                let o = (f * bins + k) * 2;
                buf[k] = Complex::new(z[o], z[o + 1]);
                if k > 0 && k < frame / 2 {
                    buf[frame - k] = Complex::new(z[o], -z[o + 1]);
                }
            }
            // DC and Nyquist are real in a real signal's spectrum
            buf[0].im = T::zero();
            buf[frame / 2].im = T::zero();
            plans.inv.process(&mut buf);
            for n in 0..frame {
                yp[f * hop + n] = yp[f * hop + n] + window[n] * buf[n].re * inv_n;
                norm[f * hop + n] = norm[f * hop + n] + window[n] * window[n];
            }
        }
        let tiny = T::lit(1e-10);
        let inv_norm: Vec<T> = norm.iter().map(|&v| if v > tiny { T::one() / v } else { T::zero() }).collect();
        let data = (0..len).map(|t| yp[framing.front + t] * inv_norm[framing.front + t]).collect();
        let value = Tensor { shape: vec![1, len], data };
        Ok(self.push(value, &[spec], IstftOp { spec, framing, window, inv_norm, plans }))
    }

    /// MDCT of a `1×L` signal with 50 % overlap; output `frames × M`.
    pub fn mdct(&mut self, x: Var, basis: &Arc<MdctBasis<T>>) -> Result<Var> {
        let len = check_signal(self, x, "mdct")?;
        let (n, m) = (basis.frame, basis.coefficients());
        if len < m {
            return Err(Error::InvalidArgument(format!("mdct frame {n} too long for signal {len}")));
        }
        let framing = Framing::new(n, m, len);
        let xp = framing.pad(self.value(x).data());
        let mut frames = vec![T::zero(); framing.frames * n];
        for f in 0..framing.frames {
            for i in 0..n {
                frames[f * n + i] = basis.window[i] * xp[f * m + i];
            }
        }
        let mut data = vec![T::zero(); framing.frames * m];
        unsafe {
            T::gemm(
                framing.frames, n, m, T::one(),
                frames.as_ptr(), n as isize, 1,
                basis.cos.as_ptr(), m as isize, 1,
                T::zero(), data.as_mut_ptr(), m as isize, 1,
            );
        }
        let value = Tensor { shape: vec![framing.frames, m], data };
        Ok(self.push(value, &[x], MdctOp { x, framing, basis: basis.clone() }))
    }

    /// Inverse MDCT with windowed overlap-add (time-domain alias
    /// cancellation), cropped to `len` samples.
    pub fn imdct(&mut self, coeffs: Var, basis: &Arc<MdctBasis<T>>, len: usize) -> Result<Var> {
        let (n, m) = (basis.frame, basis.coefficients());
        let framing = Framing::new(n, m, len);
        if self.shape(coeffs) != [framing.frames, m] {
            return Err(Error::shape(
                "imdct",
                format!("coefficients {:?}, expected [{}, {m}]", self.shape(coeffs), framing.frames),
            ));
        }
        let op = ImdctOp { coeffs, framing, basis: basis.clone() };
        let scale = op.scale();
        let mut frames = vec![T::zero(); framing.frames * n];
        unsafe {
            T::gemm(
                framing.frames, m, n, T::one(),
                self.value(coeffs).data().as_ptr(), m as isize, 1,
                basis.cos.as_ptr(), 1, m as isize,
                T::zero(), frames.as_mut_ptr(), n as isize, 1,
            );
        }
        let mut yp = vec![T::zero(); framing.padded_len()];
        for f in 0..framing.frames {
            for i in 0..n {
                yp[f * m + i] = yp[f * m + i] + scale * basis.window[i] * frames[f * n + i];
            }
        }
        let value = Tensor { shape: vec![1, len], data: yp[framing.front..framing.front + len].to_vec() };
        Ok(self.push(value, &[coeffs], op))
    }

    /// `|z|` per complex bin of a `… × 2` tensor, floored at 1e-9.
    pub fn complex_magnitude(&mut self, spec: Var) -> Result<Var> {
        let s = self.shape(spec).to_vec();
        if s.last() != Some(&2) {
            return Err(Error::shape("complex_magnitude", format!("last axis must be 2, got {s:?}")));
        }
        let data = self.value(spec).data().chunks_exact(2).map(|c| magnitude(c[0], c[1]).0).collect();
        let value = Tensor::new(&s[..s.len() - 1], data)?;
        Ok(self.push(value, &[spec], MagnitudeOp(spec)))
    }

    /// Replaces each bin's magnitude by `mag`, keeping its phase:
    /// `mag · z/|z|` (with the same magnitude floor).
    pub fn polar_rescale(&mut self, spec: Var, mag: Var) -> Result<Var> {
        let s = self.shape(spec).to_vec();
        if s.last() != Some(&2) || self.value(mag).len() * 2 != self.value(spec).len() {
            return Err(Error::shape("polar_rescale", format!("{s:?} vs {:?}", self.shape(mag))));
        }
        let z = self.value(spec).data();
        let nm = self.value(mag).data();
        let mut data = Vec::with_capacity(z.len());
        for (c, &n) in z.chunks_exact(2).zip(nm) {
            let (m, _) = magnitude(c[0], c[1]);
            data.push(n * c[0] / m);
            data.push(n * c[1] / m);
        }
        let value = Tensor { shape: s, data };
        Ok(self.push(value, &[spec, mag], PolarOp { spec, mag }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(len: usize, seed: u64) -> Vec<f64> {
        let mut r = crate::rng::SplitMix64::new(seed);
        (0..len).map(|_| r.next_symmetric(1.0)).collect()
    }

    #[test]
    fn stft_round_trip() {
        let x = signal(5000, 1);
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::signal(x.clone())).unwrap();
        let s = g.stft(v, 1024, 256).unwrap();
        let y = g.istft(s, 1024, 256, x.len()).unwrap();
        let y = g.value(y).data();
        let err: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-10, "rel err {}", err / norm);
    }

    #[test]
    fn stft_zero_signal() {
        let mut g = Graph::<f32>::new();
        let v = g.param(Tensor::signal(vec![0.0; 2048])).unwrap();
        let s = g.stft(v, 1024, 256).unwrap();
        assert!(g.value(s).data().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn stft_bin_center_tone_concentrates() {
        let (n, bin) = (1024usize, 40usize);
        let x: Vec<f64> = (0..8192).map(|t| (2.0 * PI * bin as f64 * t as f64 / n as f64).sin()).collect();
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::signal(x.clone())).unwrap();
        let s = g.stft(v, n, n / 4).unwrap();
        let spec = g.value(s);
        let bins = n / 2 + 1;
        // interior frame: compare with a direct DFT oracle and check energy share
        let f = 10;
        let hop = n / 4;
        let front = n - hop;
        let w: Vec<f64> = hann_window(n);
        let mut total = 0.0;
        let mut near = 0.0;
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let t = f * hop + i;
                let xv = if t >= front && t - front < x.len() { x[t - front] } else { 0.0 };
                let th = 2.0 * PI * (k * i) as f64 / n as f64;
                re += w[i] * xv * th.cos();
                im -= w[i] * xv * th.sin();
            }
            let o = (f * bins + k) * 2;
            assert!((spec.data()[o] - re).abs() < 1e-6 && (spec.data()[o + 1] - im).abs() < 1e-6);
            let e = re * re + im * im;
            total += e;
            if k == bin {
                near += e;
            }
        }
        // a Hann window spreads a bin-centred tone over the centre bin and
        // its two neighbours (1 : 1/4 : 1/4 in amplitude)
        assert!(near / total >= 0.6, "share {}", near / total);
        let (mut three, _) = (0.0, 0);
        for k in bin - 1..=bin + 1 {
            let o = (f * bins + k) * 2;
            three += spec.data()[o].powi(2) + spec.data()[o + 1].powi(2);
        }
        assert!(three / total >= 0.9);
    }

    #[test]
    fn stft_rejects_bad_params() {
        let mut g = Graph::<f32>::new();
        let v = g.param(Tensor::signal(vec![0.0; 512])).unwrap();
        assert!(g.stft(v, 1024, 256).is_err());
        assert!(g.stft(v, 256, 512).is_err());
        assert!(g.stft(v, 300, 100).is_err());
    }

    #[test]
    fn mdct_round_trip_tdac() {
        let x = signal(6000, 2);
        let basis = Arc::new(MdctBasis::<f64>::new(2048).unwrap());
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::signal(x.clone())).unwrap();
        let c = g.mdct(v, &basis).unwrap();
        let y = g.imdct(c, &basis, x.len()).unwrap();
        let y = g.value(y).data();
        let err: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-10, "rel err {}", err / norm);
    }

    #[test]
    fn polar_rescale_keeps_phase() {
        let mut g = Graph::<f64>::new();
        let z = g.param(Tensor::new(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap()).unwrap();
        let m = g.complex_magnitude(z).unwrap();
        assert_eq!(g.value(m).data(), &[5.0, MAGNITUDE_FLOOR]);
        let nm = g.constant(Tensor::new(&[2], vec![10.0, 0.0]).unwrap()).unwrap();
        let p = g.polar_rescale(z, nm).unwrap();
        assert_eq!(g.value(p).data(), &[6.0, 8.0, 0.0, 0.0]);
    }
}
