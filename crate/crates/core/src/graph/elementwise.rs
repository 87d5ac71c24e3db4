//! Elementwise primitives and small reshaping helpers.

use super::{Backward, Grads, Graph, Real, Tensor, Values, Var};
use crate::{Error, Result};

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

struct AddOp(Var, Var);
impl<T: Real> Backward<T> for AddOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        for v in [self.0, self.1] {
            if let Some(s) = grads.slot(v) {
                s.iter_mut().zip(grad).for_each(|(s, &g)| *s = *s + g);
            }
        }
    }
}

struct SubOp(Var, Var);
impl<T: Real> Backward<T> for SubOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.0) {
            s.iter_mut().zip(grad).for_each(|(s, &g)| *s = *s + g);
        }
        if let Some(s) = grads.slot(self.1) {
            s.iter_mut().zip(grad).for_each(|(s, &g)| *s = *s - g);
        }
    }
}

struct MulOp(Var, Var);
impl<T: Real> Backward<T> for MulOp {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let (a, b) = (values.get(self.0).data(), values.get(self.1).data());
        if let Some(s) = grads.slot(self.0) {
            for ((s, &g), &y) in s.iter_mut().zip(grad).zip(b) {
                *s = *s + g * y;
            }
        }
        if let Some(s) = grads.slot(self.1) {
            for ((s, &g), &x) in s.iter_mut().zip(grad).zip(a) {
                *s = *s + g * x;
            }
        }
    }
}

/// Gradient passes through unchanged (used for constant offsets and the
/// straight-through quantizer).
struct PassThrough(Var);
impl<T: Real> Backward<T> for PassThrough {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.0) {
            s.iter_mut().zip(grad).for_each(|(s, &g)| *s = *s + g);
        }
    }
}

struct MulConstOp<T> {
    x: Var,
    factors: Vec<T>,
}
impl<T: Real> Backward<T> for MulConstOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.x) {
            for ((s, &g), &f) in s.iter_mut().zip(grad).zip(&self.factors) {
                *s = *s + g * f;
            }
        }
    }
}

struct ScaleOp<T> {
    x: Var,
    factor: T,
}
impl<T: Real> Backward<T> for ScaleOp<T> {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.x) {
            s.iter_mut().zip(grad).for_each(|(s, &g)| *s = *s + g * self.factor);
        }
    }
}

struct ClampOp<T> {
    x: Var,
    lo: T,
    hi: T,
}
impl<T: Real> Backward<T> for ClampOp<T> {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let x = values.get(self.x).data();
        if let Some(s) = grads.slot(self.x) {
            for ((s, &g), &xv) in s.iter_mut().zip(grad).zip(x) {
                if xv >= self.lo && xv <= self.hi {
                    *s = *s + g;
                }
            }
        }
    }
}

struct LeakyReluOp<T> {
    x: Var,
    slope: T,
}
impl<T: Real> Backward<T> for LeakyReluOp<T> {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let x = values.get(self.x).data();
        if let Some(s) = grads.slot(self.x) {
            for ((s, &g), &xv) in s.iter_mut().zip(grad).zip(x) {
                *s = *s + if xv >= T::zero() { g } else { g * self.slope };
            }
        }
    }
}

struct SigmoidOp(Var);
impl<T: Real> Backward<T> for SigmoidOp {
    fn backward(&self, _: &Values<'_, T>, out: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.0) {
            for ((s, &g), &y) in s.iter_mut().zip(grad).zip(out.data()) {
                *s = *s + g * y * (T::one() - y);
            }
        }
    }
}

struct SignedPowOp<T> {
    x: Var,
    exponent: T,
}
impl<T: Real> Backward<T> for SignedPowOp<T> {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let x = values.get(self.x).data();
        let floor = T::lit(1e-9);
        let p = self.exponent;
        if let Some(s) = grads.slot(self.x) {
            for ((s, &g), &xv) in s.iter_mut().zip(grad).zip(x) {
                let a = xv.abs();
                let a = if p < T::one() { a.max(floor) } else { a };
                *s = *s + g * p * a.powf(p - T::one());
            }
        }
    }
}

struct SliceOp {
    x: Var,
    rows: usize,
    in_cols: usize,
    start: usize,
    len: usize,
}
impl<T: Real> Backward<T> for SliceOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.x) {
            for r in 0..self.rows {
                let dst = &mut s[r * self.in_cols + self.start..][..self.len];
                for (d, &g) in dst.iter_mut().zip(&grad[r * self.len..][..self.len]) {
                    *d = *d + g;
                }
            }
        }
    }
}

struct PadSymmetricOp {
    x: Var,
    rows: usize,
    len: usize,
    left: usize,
    right: usize,
}
impl PadSymmetricOp {
    /// Source column of padded column `j` (edge sample repeated).
    fn source(&self, j: usize) -> usize {
        if j < self.left {
            self.left - 1 - j
        } else if j < self.left + self.len {
            j - self.left
        } else {
            let k = j - self.left - self.len;
            self.len - 1 - k
        }
    }
}
impl<T: Real> Backward<T> for PadSymmetricOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let out_len = self.left + self.len + self.right;
        if let Some(s) = grads.slot(self.x) {
            for r in 0..self.rows {
                for j in 0..out_len {
                    let i = r * self.len + self.source(j);
                    s[i] = s[i] + grad[r * out_len + j];
                }
            }
        }
    }
}

struct ReshapeOp(Var);
impl<T: Real> Backward<T> for ReshapeOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        if let Some(s) = grads.slot(self.0) {
            s.iter_mut().zip(grad).for_each(|(s, &g)| *s = *s + g);
        }
    }
}

/// Logistic function with the sign-split evaluation; saturated outputs are
/// pulled just inside `(0, 1)`.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let top = T::one() - T::epsilon() / T::lit(2.0);
    y.max(T::min_positive_value()).min(top)
}

impl<T: Real> Graph<T> {
    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(x);
        Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(v, &[a, b], AddOp(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(v, &[a, b], SubOp(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(v, &[a, b], MulOp(a, b)))
    }

    /// `x + c` for a constant tensor `c` of the same size.
    pub fn add_const(&mut self, x: Var, c: &[T]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::shape("add_const", "length mismatch"));
        }
        let t = self.value(x);
        let v = Tensor { shape: t.shape.clone(), data: t.data.iter().zip(c).map(|(&a, &b)| a + b).collect() };
        Ok(self.push(v, &[x], PassThrough(x)))
    }

    /// `x ⊙ f` for a constant tensor `f` of the same size.
    pub fn mul_const(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        if factors.len() != self.value(x).len() {
            return Err(Error::shape("mul_const", "length mismatch"));
        }
        let t = self.value(x);
        let v = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().zip(&factors).map(|(&a, &b)| a * b).collect(),
        };
        Ok(self.push(v, &[x], MulConstOp { x, factors }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let v = self.map(x, |a| a * factor);
        self.push(v, &[x], ScaleOp { x, factor })
    }

    /// Elementwise clamp; gradient flows where `lo ≤ x ≤ hi`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        let v = self.map(x, |a| a.max(lo).min(hi));
        Ok(self.push(v, &[x], ClampOp { x, lo, hi }))
    }

    /// `x` if `x ≥ 0`, else `slope·x`; the derivative at 0 is 1.
    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let v = self.map(x, |a| if a >= T::zero() { a } else { a * slope });
        self.push(v, &[x], LeakyReluOp { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, sigmoid_scalar);
        self.push(v, &[x], SigmoidOp(x))
    }

    /// `step·round(x/step)` (half away from zero) with a straight-through
    /// backward pass.
    pub fn quantize_ste(&mut self, x: Var, step: T) -> Result<Var> {
        if !(step > T::zero()) {
            return Err(Error::InvalidArgument(format!("quantizer step {step} must be positive")));
        }
        let v = self.map(x, |a| (a / step).round() * step);
        Ok(self.push(v, &[x], PassThrough(x)))
    }

    /// `sign(x)·|x|^p`.
    pub fn signed_pow(&mut self, x: Var, exponent: T) -> Var {
        let v = self.map(x, |a| a.signum() * a.abs().powf(exponent));
        // signum(0) is 1 for +0; the magnitude term is 0 anyway
        self.push(v, &[x], SignedPowOp { x, exponent })
    }

    /// Columns `start..start+len` of every row (last axis).
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.rows_cols();
        if start + len > cols || len == 0 {
            return Err(Error::shape("slice", format!("{start}+{len} exceeds {cols} columns")));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data[r * cols + start..][..len]);
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = len;
        let v = Tensor { shape, data };
        Ok(self.push(v, &[x], SliceOp { x, rows, in_cols: cols, start, len }))
    }

    /// Symmetric (edge-repeating) padding along the last axis.
    pub fn pad_symmetric(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, len) = t.rows_cols();
        if left > len || right > len {
            return Err(Error::shape("pad_symmetric", format!("padding {left}/{right} exceeds length {len}")));
        }
        let op = PadSymmetricOp { x, rows, len, left, right };
        let out_len = left + len + right;
        let mut data = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            for j in 0..out_len {
                data.push(t.data[r * len + op.source(j)]);
            }
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = out_len;
        let v = Tensor { shape, data };
        Ok(self.push(v, &[x], op))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::new(shape, t.data.clone())?;
        Ok(self.push(v, &[x], ReshapeOp(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl Fn(&mut Graph<f64>, Var) -> Var, x: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let v = g.param(Tensor::signal(x.to_vec())).unwrap();
        let y = f(&mut g, v);
        g.value(y).data().to_vec()
    }

    #[test]
    fn leaky_relu_values_and_tie() {
        assert_eq!(eval(|g, x| g.leaky_relu(x, 0.2), &[-1.0, 3.0, 0.0]), vec![-0.2, 3.0, 0.0]);
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::signal(vec![0.0])).unwrap();
        let y = g.leaky_relu(x, 0.2);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![1.0]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
        for &x in &[0.3f64, 1.7, 5.0, 12.0] {
            assert!((sigmoid_scalar(-x) - (1.0 - sigmoid_scalar(x))).abs() < 1e-12);
        }
        let y = sigmoid_scalar(40.0f32);
        assert!(y < 1.0 && y.is_finite());
        let y = sigmoid_scalar(40.0f64);
        assert!(y < 1.0);
        let y = sigmoid_scalar(-200.0f32);
        assert!(y > 0.0);
    }

    #[test]
    fn quantizer_rounds_half_away() {
        let y = eval(|g, x| g.quantize_ste(x, 0.5).unwrap(), &[0.7, -0.75, 0.25, -0.25]);
        assert_eq!(y, vec![0.5, -1.0, 0.5, -0.5]);
        let mut g = Graph::<f64>::new();
        assert!(g.param(Tensor::signal(vec![1.0])).and_then(|x| g.quantize_ste(x, 0.0)).is_err());
    }

    #[test]
    fn quantizer_is_straight_through() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::signal(vec![0.7, -0.2, 3.3])).unwrap();
        let q = g.quantize_ste(x, 0.5).unwrap();
        g.backward_with(q, &[1.5, -2.0, 0.25]).unwrap();
        assert_eq!(g.grad(x), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn clamp_projects() {
        assert_eq!(eval(|g, x| g.clamp(x, -1.0, 1.0).unwrap(), &[1.5, 0.3, -2.0]), vec![1.0, 0.3, -1.0]);
        assert_eq!(eval(|g, x| g.clamp(x, -0.001, 0.001).unwrap(), &[-0.002]), vec![-0.001]);
    }

    #[test]
    fn symmetric_padding_repeats_edges() {
        let y = eval(|g, x| g.pad_symmetric(x, 2, 3).unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(y, vec![2.0, 1.0, 1.0, 2.0, 3.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn signed_pow_inverse_pair() {
        let c = [-2.0, -0.5, 0.0, 0.125, 3.0];
        let y = eval(
            |g, x| {
                let a = g.signed_pow(x, 0.75);
                g.signed_pow(a, 4.0 / 3.0)
            },
            &c,
        );
        for (a, b) in y.iter().zip(c) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
