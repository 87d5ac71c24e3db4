//! Adaptive average pooling over index-computed bins.

use super::{Backward, Grads, Graph, Real, Tensor, Values, Var};
use crate::{Error, Result};

/// Bin `j` of `K` over length `L` spans `[⌊jL/K⌋, ⌊(j+1)L/K⌋)`.
pub fn pool_bin(j: usize, len: usize, out_len: usize) -> (usize, usize) {
    (j * len / out_len, (j + 1) * len / out_len)
}

struct AvgPoolOp {
    x: Var,
    len: usize,
    out_len: usize,
}

impl<T: Real> Backward<T> for AvgPoolOp {
    fn backward(&self, _: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let Some(s) = grads.slot(self.x) else { return };
        for (c, grow) in grad.chunks_exact(self.out_len).enumerate() {
            let srow = &mut s[c * self.len..][..self.len];
            for (j, &g) in grow.iter().enumerate() {
                let (a, b) = pool_bin(j, self.len, self.out_len);
                let share = g / T::lit((b - a) as f64);
                srow[a..b].iter_mut().for_each(|d| *d = *d + share);
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// `C×L → C×K` mean pooling; every output bin averages at least one input.
    pub fn adaptive_avg_pool1d(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape.len() != 2 {
            return Err(Error::shape("adaptive_avg_pool1d", format!("expected C×L, got {:?}", t.shape)));
        }
        let (channels, len) = (t.shape[0], t.shape[1]);
        if out_len == 0 || out_len > len {
            return Err(Error::shape("adaptive_avg_pool1d", format!("output length {out_len} not in 1..={len}")));
        }
        let mut data = Vec::with_capacity(channels * out_len);
        for row in t.data.chunks_exact(len) {
            for j in 0..out_len {
                let (a, b) = pool_bin(j, len, out_len);
                let s: f64 = row[a..b].iter().map(|v| v.f64()).sum();
                data.push(T::lit(s / (b - a) as f64));
            }
        }
        let value = Tensor { shape: vec![channels, out_len], data };
        Ok(self.push(value, &[x], AvgPoolOp { x, len, out_len }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool(x: Vec<f64>, k: usize) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::signal(x)).unwrap();
        let y = g.adaptive_avg_pool1d(v, k).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn examples() {
        assert_eq!(pool(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3), vec![1.5, 3.5, 5.5]);
        assert_eq!(pool(vec![1.0, 2.0, 3.0, 4.0, 5.0], 2), vec![1.5, 4.0]);
        let x = vec![0.1, -0.4, 2.0, 7.5];
        assert_eq!(pool(x.clone(), 4), x);
    }

    #[test]
    fn rejects_oversized_output() {
        let mut g = Graph::<f32>::new();
        let v = g.param(Tensor::signal(vec![1.0, 2.0])).unwrap();
        assert!(g.adaptive_avg_pool1d(v, 3).is_err());
    }

    proptest! {
        #[test]
        fn bins_partition_input(len in 1usize..400, k_frac in 0.0f64..1.0) {
            let k = 1 + ((len - 1) as f64 * k_frac) as usize;
            let mut next = 0;
            for j in 0..k {
                let (a, b) = pool_bin(j, len, k);
                prop_assert_eq!(a, next);
                prop_assert!(b > a);
                next = b;
            }
            prop_assert_eq!(next, len);
            prop_assert_eq!(pool(vec![1.0; len], k).len(), k);
        }
    }
}
