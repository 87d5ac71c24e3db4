//! Instance normalization without affine parameters.

use super::{Backward, Grads, Graph, Real, Tensor, Values, Var};
use crate::{Error, Result};

struct InstanceNormOp<T> {
    x: Var,
    len: usize,
    inv_std: Vec<T>,
}

impl<T: Real> Backward<T> for InstanceNormOp<T> {
    fn backward(&self, _: &Values<'_, T>, out: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let Some(s) = grads.slot(self.x) else { return };
        let n = self.len as f64;
        for (c, &inv) in self.inv_std.iter().enumerate() {
            let g = &grad[c * self.len..][..self.len];
            let y = &out.data[c * self.len..][..self.len];
            let mut sum_g = 0.0f64;
            let mut sum_gy = 0.0f64;
            for (&gv, &yv) in g.iter().zip(y) {
                sum_g += gv.f64();
                sum_gy += gv.f64() * yv.f64();
            }
            let mean_g = T::lit(sum_g / n);
            let mean_gy = T::lit(sum_gy / n);
            for ((d, &gv), &yv) in s[c * self.len..][..self.len].iter_mut().zip(g).zip(y) {
                *d = *d + inv * (gv - mean_g - yv * mean_gy);
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Per-channel `(x - mean)/sqrt(var + eps)` with the biased variance.
    pub fn instance_norm1d(&mut self, x: Var, eps: T) -> Result<Var> {
        let t = self.value(x);
        if t.shape.len() != 2 {
            return Err(Error::shape("instance_norm1d", format!("expected C×L, got {:?}", t.shape)));
        }
        let (channels, len) = (t.shape[0], t.shape[1]);
        if len < 2 {
            return Err(Error::shape("instance_norm1d", format!("length {len} < 2")));
        }
        if !(eps > T::zero()) {
            return Err(Error::InvalidArgument("instance norm eps must be positive".into()));
        }
        let mut data = Vec::with_capacity(t.data.len());
        let mut inv_std = Vec::with_capacity(channels);
        for row in t.data.chunks_exact(len) {
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / len as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / len as f64;
            let inv = 1.0 / (var + eps.f64()).sqrt();
            let (mean_t, inv_t) = (T::lit(mean), T::lit(inv));
            data.extend(row.iter().map(|&v| (v - mean_t) * inv_t));
            inv_std.push(inv_t);
        }
        let value = Tensor { shape: t.shape.clone(), data };
        Ok(self.push(value, &[x], InstanceNormOp { x, len, inv_std }))
    }
}
