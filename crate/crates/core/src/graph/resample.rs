//! Endpoint-aligned linear resampling.

use super::{Backward, Grads, Graph, Real, Tensor, Values, Var};
use crate::{Error, Result};

/// Source index and fractional weight read by output sample `j`.
fn source(j: usize, len: usize, out_len: usize) -> (usize, f64) {
    let pos = (j * (len - 1)) as f64 / (out_len - 1) as f64;
    let i0 = pos.floor() as usize;
    if i0 >= len - 1 {
        (len - 1, 0.0)
    } else {
        (i0, pos - i0 as f64)
    }
}

struct ResampleOp {
    x: Var,
    len: usize,
    out_len: usize,
}

impl<T: Real> Backward<T> for ResampleOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let Some(s) = grads.slot(self.x) else { return };
        for (j, &g) in grad.iter().enumerate() {
            let (i0, f) = source(j, self.len, self.out_len);
            let f = T::lit(f);
            s[i0] = s[i0] + g * (T::one() - f);
            if f > T::zero() {
                s[i0 + 1] = s[i0 + 1] + g * f;
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Resamples a `1×L` signal to `1×out_len`; output `j` reads source
    /// position `j·(L-1)/(out_len-1)`.
    pub fn linear_resample(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape.len() != 2 || t.shape[0] != 1 {
            return Err(Error::shape("linear_resample", format!("expected 1×L, got {:?}", t.shape)));
        }
        let len = t.shape[1];
        if len < 2 || out_len < 2 {
            return Err(Error::shape("linear_resample", format!("lengths {len}->{out_len} must both be ≥ 2")));
        }
        let data = (0..out_len)
            .map(|j| {
                let (i0, f) = source(j, len, out_len);
                if f == 0.0 {
                    t.data[i0]
                } else {
                    let f = T::lit(f);
                    t.data[i0] * (T::one() - f) + t.data[i0 + 1] * f
                }
            })
            .collect();
        let value = Tensor { shape: vec![1, out_len], data };
        Ok(self.push(value, &[x], ResampleOp { x, len, out_len }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rs(x: Vec<f64>, n: usize) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::signal(x)).unwrap();
        let y = g.linear_resample(v, n).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn examples() {
        assert_eq!(rs(vec![0.0, 1.0], 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(rs(vec![0.0, 1.0, 2.0, 3.0], 2), vec![0.0, 3.0]);
        let x = vec![0.3, -0.1, 0.8, 0.05, 0.0];
        assert_eq!(rs(x.clone(), 5), x);
    }

    #[test]
    fn endpoints_preserved() {
        let x: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin()).collect();
        for n in [2, 5, 36, 38, 100] {
            let y = rs(x.clone(), n);
            assert_eq!(y[0], x[0]);
            assert_eq!(y[n - 1], x[36]);
        }
    }

    #[test]
    fn rejects_short() {
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::signal(vec![1.0, 2.0])).unwrap();
        assert!(g.linear_resample(v, 1).is_err());
    }
}
