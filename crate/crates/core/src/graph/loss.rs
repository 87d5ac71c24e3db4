//! Reductions and loss primitives. All produce shape-`[1]` scalars.

use super::{Backward, Grads, Graph, Real, Tensor, Values, Var};
use crate::{Error, Result};

/// Probability clamp applied before every logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

struct SumOp {
    x: Var,
    scale: f64,
}
impl<T: Real> Backward<T> for SumOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let g = grad[0] * T::lit(self.scale);
        if let Some(s) = grads.slot(self.x) {
            s.iter_mut().for_each(|d| *d = *d + g);
        }
    }
}

struct WeightedSumOp<T> {
    terms: Vec<(Var, T)>,
}
impl<T: Real> Backward<T> for WeightedSumOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        for &(v, c) in &self.terms {
            if let Some(s) = grads.slot(v) {
                s[0] = s[0] + grad[0] * c;
            }
        }
    }
}

struct MseOp {
    a: Var,
    b: Var,
}
impl<T: Real> Backward<T> for MseOp {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let (a, b) = (values.get(self.a).data(), values.get(self.b).data());
        let k = grad[0] * T::lit(2.0 / a.len() as f64);
        if let Some(s) = grads.slot(self.a) {
            for ((d, &x), &y) in s.iter_mut().zip(a).zip(b) {
                *d = *d + k * (x - y);
            }
        }
        if let Some(s) = grads.slot(self.b) {
            for ((d, &x), &y) in s.iter_mut().zip(a).zip(b) {
                *d = *d - k * (x - y);
            }
        }
    }
}

fn clamp_prob<T: Real>(p: T) -> (T, bool) {
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

struct BceOp<T> {
    p: Var,
    targets: Vec<T>,
}
impl<T: Real> Backward<T> for BceOp<T> {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let p = values.get(self.p).data();
        let k = grad[0] / T::lit(p.len() as f64);
        if let Some(s) = grads.slot(self.p) {
            for ((d, &pv), &m) in s.iter_mut().zip(p).zip(&self.targets) {
                let (pc, clamped) = clamp_prob(pv);
                if !clamped {
                    *d = *d + k * (-m / pc + (T::one() - m) / (T::one() - pc));
                }
            }
        }
    }
}

struct NegLogOneMinusOp(Var);
impl<T: Real> Backward<T> for NegLogOneMinusOp {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let p = values.get(self.0).data();
        if let Some(s) = grads.slot(self.0) {
            for (d, &pv) in s.iter_mut().zip(p) {
                let (pc, clamped) = clamp_prob(pv);
                if !clamped {
                    *d = *d + grad[0] / (T::one() - pc);
                }
            }
        }
    }
}

fn softmax<T: Real>(s: &[T]) -> Vec<T> {
    let max = s.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = s.iter().map(|&v| (v - max).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

struct SoftmaxPickOp<T> {
    logits: Var,
    index: usize,
    probs: Vec<T>,
}
impl<T: Real> Backward<T> for SoftmaxPickOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let pi = self.probs[self.index];
        if let Some(s) = grads.slot(self.logits) {
            for (j, (d, &pj)) in s.iter_mut().zip(&self.probs).enumerate() {
                let delta = if j == self.index { T::one() } else { T::zero() };
                *d = *d + grad[0] * pi * (delta - pj);
            }
        }
    }
}

struct SoftmaxXentOp<T> {
    logits: Var,
    label: usize,
    probs: Vec<T>,
}
impl<T: Real> Backward<T> for SoftmaxXentOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.logits) {
            for (j, (d, &pj)) in s.iter_mut().zip(&self.probs).enumerate() {
                let y = if j == self.label { T::one() } else { T::zero() };
                *d = *d + grad[0] * (pj - y);
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data.iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::lit(s)), &[x], SumOp { x, scale: 1.0 })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.len() as f64;
        let s: f64 = t.data.iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(T::lit(s / n)), &[x], SumOp { x, scale: 1.0 / n })
    }

    /// `Σ cᵢ·xᵢ` over scalar nodes, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("weighted sum of no terms".into()));
        }
        let mut acc = T::zero();
        for &(v, c) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape("weighted_sum", "terms must be scalars"));
            }
            acc = acc + c * t.data[0];
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(Tensor::scalar(acc), &inputs, WeightedSumOp { terms: terms.to_vec() }))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::shape("mse", format!("lengths {} vs {}", ta.len(), tb.len())));
        }
        let s: f64 = ta.data.iter().zip(&tb.data).map(|(&x, &y)| (x.f64() - y.f64()).powi(2)).sum();
        let v = T::lit(s / ta.len() as f64);
        Ok(self.push(Tensor::scalar(v), &[a, b], MseOp { a, b }))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets,
    /// with `p` clamped into `[1e-7, 1-1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[T]) -> Result<Var> {
        let t = self.value(p);
        if t.len() != targets.len() {
            return Err(Error::shape("bce", format!("{} probabilities vs {} targets", t.len(), targets.len())));
        }
        let s: f64 = t
            .data
            .iter()
            .zip(targets)
            .map(|(&pv, &m)| {
                let (pc, _) = clamp_prob(pv);
                let (pc, m) = (pc.f64(), m.f64());
                -(m * pc.ln() + (1.0 - m) * (1.0 - pc).ln())
            })
            .sum();
        let v = T::lit(s / t.len() as f64);
        Ok(self.push(Tensor::scalar(v), &[p], BceOp { p, targets: targets.to_vec() }))
    }

    /// `-Σ ln(1 - p)` with `p` clamped into `[1e-7, 1-1e-7]`.
    pub fn neg_log_one_minus(&mut self, p: Var) -> Var {
        let s: f64 = self.value(p).data.iter().map(|&pv| -(1.0 - clamp_prob(pv).0.f64()).ln()).sum();
        self.push(Tensor::scalar(T::lit(s)), &[p], NegLogOneMinusOp(p))
    }

    /// Softmax probability of class `index` from a logit vector.
    pub fn softmax_pick(&mut self, logits: Var, index: usize) -> Result<Var> {
        let s = self.value(logits).data.clone();
        if index >= s.len() {
            return Err(Error::shape("softmax_pick", format!("class {index} of {}", s.len())));
        }
        let probs = softmax(&s);
        let v = Tensor::scalar(probs[index]);
        Ok(self.push(v, &[logits], SoftmaxPickOp { logits, index, probs }))
    }

    /// Cross-entropy `-ln softmax(logits)[label]`.
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var> {
        let s = self.value(logits).data.clone();
        if label >= s.len() {
            return Err(Error::shape("softmax_xent", format!("label {label} of {}", s.len())));
        }
        let max = s.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + s.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let probs = softmax(&s);
        let v = Tensor::scalar(lse - s[label]);
        Ok(self.push(v, &[logits], SoftmaxXentOp { logits, label, probs }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(f: impl Fn(&mut Graph<f64>, Var) -> Var, x: &[f64]) -> f64 {
        let mut g = Graph::new();
        let v = g.param(Tensor::signal(x.to_vec())).unwrap();
        let y = f(&mut g, v);
        g.value(y).data()[0]
    }

    #[test]
    fn bce_values() {
        let l = scalar(|g, p| g.bce(p, &[1.0]).unwrap(), &[0.5]);
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let l = scalar(|g, p| g.bce(p, &[0.0, 1.0]).unwrap(), &[0.01, 0.99]);
        assert!((l - 0.01005033585350145).abs() < 1e-12);
        let l = scalar(|g, p| g.bce(p, &[1.0, 0.0]).unwrap(), &[1.0, 0.0]);
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn neg_log_one_minus_values() {
        assert_eq!(scalar(|g, p| g.neg_log_one_minus(p), &[0.0]), -(1.0 - PROB_CLAMP).ln());
        assert!((scalar(|g, p| g.neg_log_one_minus(p), &[0.5]) - 2f64.ln()).abs() < 1e-12);
        assert!((scalar(|g, p| g.neg_log_one_minus(p), &[0.5, 0.5]) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_pick_values() {
        assert_eq!(scalar(|g, s| g.softmax_pick(s, 1).unwrap(), &[0.0, 0.0]), 0.5);
        assert!((scalar(|g, s| g.softmax_pick(s, 1).unwrap(), &[0.0, 3f64.ln()]) - 0.75).abs() < 1e-12);
        let p = scalar(|g, s| g.softmax_pick(s, 1).unwrap(), &[1000.0, -1000.0]);
        assert!(p.is_finite());
    }

    #[test]
    fn xent_at_uniform_is_ln2() {
        assert!((scalar(|g, s| g.softmax_xent(s, 0).unwrap(), &[0.3, 0.3]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mse_closed_form() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::signal(vec![0.1; 4])).unwrap();
        let b = g.constant(Tensor::signal(vec![0.0; 4])).unwrap();
        let l = g.mse(a, b).unwrap();
        assert!((g.value(l).data()[0] - 0.01).abs() < 1e-15);
    }
}
