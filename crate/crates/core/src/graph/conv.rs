//! 1-D cross-correlation via im2col and a single GEMM.

use super::{Backward, Grads, Graph, Real, Tensor, Values, Var};
use crate::{Error, Result};

struct Conv1dOp {
    x: Var,
    w: Var,
    b: Option<Var>,
    cin: usize,
    cout: usize,
    kw: usize,
    len: usize,
    out_len: usize,
    stride: usize,
    padding: usize,
}

impl Conv1dOp {
    fn padded_len(&self) -> usize {
        self.len + 2 * self.padding
    }

    fn pad<T: Real>(&self, x: &[T]) -> Vec<T> {
        let lp = self.padded_len();
        let mut xp = vec![T::zero(); self.cin * lp];
        for i in 0..self.cin {
            xp[i * lp + self.padding..][..self.len].copy_from_slice(&x[i * self.len..][..self.len]);
        }
        xp
    }

    /// `cols[i·kw + k, t] = xp[i, t·stride + k]`
    fn im2col<T: Real>(&self, xp: &[T], lp: usize) -> Vec<T> {
        let mut cols = vec![T::zero(); self.cin * self.kw * self.out_len];
        for i in 0..self.cin {
            for k in 0..self.kw {
                let row = &mut cols[(i * self.kw + k) * self.out_len..][..self.out_len];
                let src = &xp[i * lp + k..];
                if self.stride == 1 {
                    row.copy_from_slice(&src[..self.out_len]);
                } else {
                    for (t, d) in row.iter_mut().enumerate() {
                        *d = src[t * self.stride];
                    }
                }
            }
        }
        cols
    }

    fn forward<T: Real>(&self, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
        let lp = self.padded_len();
        let xp = self.pad(x);
        let mut out = vec![T::zero(); self.cout * self.out_len];
        if let Some(b) = b {
            for (c, row) in out.chunks_exact_mut(self.out_len).enumerate() {
                row.iter_mut().for_each(|v| *v = b[c]);
            }
        }
        let cols = self.im2col(&xp, lp);
        // out = W[cout × cin·kw] · cols[cin·kw × out_len]
        unsafe {
            T::gemm(
                self.cout,
                self.cin * self.kw,
                self.out_len,
                T::one(),
                w.as_ptr(),
                (self.cin * self.kw) as isize,
                1,
                cols.as_ptr(),
                self.out_len as isize,
                1,
                T::one(),
                out.as_mut_ptr(),
                self.out_len as isize,
                1,
            );
        }
        out
    }
}

impl<T: Real> Backward<T> for Conv1dOp {
    fn backward(&self, values: &Values<'_, T>, _: &Tensor<T>, grad: &[T], grads: &mut Grads<T>) {
        let x = values.get(self.x).data();
        let w = values.get(self.w).data();
        let lp = self.padded_len();
        if grads.wants(self.x) {
            // gcols = Wᵀ · grad, then scattered back onto the padded input
            let ck = self.cin * self.kw;
            let mut gcols = vec![T::zero(); ck * self.out_len];
            unsafe {
                T::gemm(
                    ck,
                    self.cout,
                    self.out_len,
                    T::one(),
                    w.as_ptr(),
                    1,
                    ck as isize,
                    grad.as_ptr(),
                    self.out_len as isize,
                    1,
                    T::zero(),
                    gcols.as_mut_ptr(),
                    self.out_len as isize,
                    1,
                );
            }
            let mut gp = vec![T::zero(); self.cin * lp];
            for i in 0..self.cin {
                for k in 0..self.kw {
                    let row = &gcols[(i * self.kw + k) * self.out_len..][..self.out_len];
                    let dst = &mut gp[i * lp + k..];
                    if self.stride == 1 {
                        for (d, &g) in dst[..self.out_len].iter_mut().zip(row) {
                            *d = *d + g;
                        }
                    } else {
                        for (t, &g) in row.iter().enumerate() {
                            dst[t * self.stride] = dst[t * self.stride] + g;
                        }
                    }
                }
            }
            let s = grads.slot(self.x).unwrap();
            for i in 0..self.cin {
                let src = &gp[i * lp + self.padding..][..self.len];
                for (d, &g) in s[i * self.len..][..self.len].iter_mut().zip(src) {
                    *d = *d + g;
                }
            }
        }
        if grads.wants(self.w) {
            let xp = self.pad(x);
            let s = grads.slot(self.w).unwrap();
            for k in 0..self.kw {
                // gw[c, i, k] += Σ_t grad[c, t] · xp[i, t·stride + k]
                unsafe {
                    T::gemm(
                        self.cout,
                        self.out_len,
                        self.cin,
                        T::one(),
                        grad.as_ptr(),
                        self.out_len as isize,
                        1,
                        xp.as_ptr().add(k),
                        self.stride as isize,
                        lp as isize,
                        T::one(),
                        s.as_mut_ptr().add(k),
                        (self.cin * self.kw) as isize,
                        self.kw as isize,
                    );
                }
            }
        }
        if let Some(b) = self.b {
            if let Some(s) = grads.slot(b) {
                for (c, row) in grad.chunks_exact(self.out_len).enumerate() {
                    s[c] = s[c] + row.iter().copied().sum::<T>();
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Length-preserving stride-1 cross-correlation:
    /// `out[c,t] = bias[c] + Σ_{i,k} w[c,i,k]·in[i, t+k-pad]`, with
    /// `pad = (Kw-1)/2` and zeros outside the input.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let kw = *self.shape(w).last().unwrap_or(&0);
        if kw % 2 == 0 {
            return Err(Error::shape("conv1d", format!("kernel width {kw} must be odd")));
        }
        self.conv1d_strided(x, w, b, 1, (kw - 1) / 2)
    }

    /// General cross-correlation with explicit stride and zero padding.
    /// Output length is `(L + 2·padding - Kw)/stride + 1`.
    pub fn conv1d_strided(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 3 {
            return Err(Error::shape("conv1d", format!("input {xs:?}, weights {ws:?}")));
        }
        let (cin, len) = (xs[0], xs[1]);
        let (cout, wcin, kw) = (ws[0], ws[1], ws[2]);
        if wcin != cin {
            return Err(Error::shape("conv1d", format!("input has {cin} channels, weights expect {wcin}")));
        }
        if stride == 0 || kw == 0 {
            return Err(Error::shape("conv1d", "stride and kernel width must be positive"));
        }
        if len + 2 * padding < kw {
            return Err(Error::shape("conv1d", format!("input length {len} shorter than kernel {kw}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape("conv1d", format!("bias {:?}, expected [{cout}]", self.shape(b))));
            }
        }
        let out_len = (len + 2 * padding - kw) / stride + 1;
        let op = Conv1dOp { x, w, b, cin, cout, kw, len, out_len, stride, padding };
        let data = op.forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor { shape: vec![cout, out_len], data };
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, &inputs, op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation.
    fn oracle(x: &[f64], cin: usize, w: &[f64], cout: usize, kw: usize, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let len = x.len() / cin;
        let out_len = (len + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; cout * out_len];
        for c in 0..cout {
            for t in 0..out_len {
                let mut acc = b[c];
                for i in 0..cin {
                    for k in 0..kw {
                        let pos = (t * stride + k) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w[(c * cin + i) * kw + k] * x[i * len + pos as usize];
                        }
                    }
                }
                out[c * out_len + t] = acc;
            }
        }
        out
    }

    fn run(x: &[f64], cin: usize, w: &[f64], cout: usize, kw: usize, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
        let mut g = Graph::<f64>::new();
        let xv = g.param(Tensor::new(&[cin, x.len() / cin], x.to_vec()).unwrap()).unwrap();
        let wv = g.param(Tensor::new(&[cout, cin, kw], w.to_vec()).unwrap()).unwrap();
        let bv = g.param(Tensor::new(&[cout], b.to_vec()).unwrap()).unwrap();
        let y = g.conv1d_strided(xv, wv, Some(bv), stride, pad).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn hand_example() {
        assert_eq!(run(&[1.0, 2.0, 3.0], 1, &[1.0, 0.0, -1.0], 1, 3, &[0.0], 1, 1), vec![-2.0, -2.0, 2.0]);
    }

    #[test]
    fn width_one_is_identity() {
        let x = [0.3, -1.2, 4.0, 0.0, 2.5];
        assert_eq!(run(&x, 1, &[1.0], 1, 1, &[0.0], 1, 0), x.to_vec());
    }

    #[test]
    fn matches_oracle_multichannel_strided() {
        let mut r = crate::rng::SplitMix64::new(3);
        for &(cin, cout, kw, stride, len) in &[(3, 4, 5, 1, 17), (2, 5, 7, 2, 20), (1, 3, 3, 2, 9), (4, 2, 1, 3, 11)] {
            let x: Vec<f64> = (0..cin * len).map(|_| r.next_symmetric(1.0)).collect();
            let w: Vec<f64> = (0..cout * cin * kw).map(|_| r.next_symmetric(1.0)).collect();
            let b: Vec<f64> = (0..cout).map(|_| r.next_symmetric(1.0)).collect();
            let pad = (kw - 1) / 2;
            let got = run(&x, cin, &w, cout, kw, &b, stride, pad);
            let want = oracle(&x, cin, &w, cout, kw, &b, stride, pad);
            assert_eq!(got.len(), want.len());
            for (a, e) in got.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::new(&[2, 8], vec![0.0; 16]).unwrap()).unwrap();
        let w_even = g.param(Tensor::new(&[1, 2, 4], vec![0.0; 8]).unwrap()).unwrap();
        assert!(g.conv1d(x, w_even, None).is_err());
        let w_cin = g.param(Tensor::new(&[1, 3, 3], vec![0.0; 9]).unwrap()).unwrap();
        assert!(g.conv1d(x, w_cin, None).is_err());
    }
}
