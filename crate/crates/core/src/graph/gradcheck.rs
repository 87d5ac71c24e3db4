//! Finite-difference gradient checking in `f64`.
//!
//! The output is projected onto a fixed random vector `r`, turning any
//! operation into a scalar `⟨r, f(x)⟩`. Its analytic gradient is compared
//! with central differences, coordinate-wise for small inputs and along
//! random directions otherwise.

use super::{Graph, Tensor, Var};
use crate::rng::SplitMix64;
use crate::Result;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;

const MAX_COORDINATES: usize = 64;
const DIRECTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_relative_error: f64,
    pub probes: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_relative_error <= tol
    }
}

fn projected<F>(f: &F, input: &Tensor<f64>, r: &[f64]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone())?;
    let y = f(&mut g, x)?;
    Ok(g.value(y).data().iter().zip(r).map(|(a, b)| a * b).sum())
}

/// Checks the gradient of `f` at `input`.
pub fn grad_check<F>(f: F, input: &Tensor<f64>, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut rng = SplitMix64::new(seed);
    let mut g = Graph::new();
    let x = g.param(input.clone())?;
    let y = f(&mut g, x)?;
    let r: Vec<f64> = (0..g.value(y).len()).map(|_| rng.next_symmetric(1.0)).collect();
    g.backward_with(y, &r)?;
    let analytic = g.grad(x);

    let shape = input.shape().to_vec();
    let base = input.data().to_vec();
    let n = base.len();
    let directions: Vec<Vec<f64>> = if n <= MAX_COORDINATES {
        (0..n)
            .map(|i| {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                d
            })
            .collect()
    } else {
        (0..DIRECTIONS).map(|_| (0..n).map(|_| rng.next_symmetric(1.0)).collect()).collect()
    };

    let mut worst = 0.0f64;
    for d in &directions {
        let shifted = |sign: f64| -> Result<Tensor<f64>> {
            let v = base.iter().zip(d).map(|(b, di)| b + sign * GRAD_CHECK_STEP * di).collect();
            Tensor::new(&shape, v)
        };
        let plus = projected(&f, &shifted(1.0)?, &r)?;
        let minus = projected(&f, &shifted(-1.0)?, &r)?;
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let exact: f64 = analytic.iter().zip(d).map(|(a, b)| a * b).sum();
        let denom = 1f64.max(exact.abs()).max(numeric.abs());
        worst = worst.max((exact - numeric).abs() / denom);
    }
    Ok(GradCheckReport { max_relative_error: worst, probes: directions.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(len: usize, seed: u64) -> Tensor<f64> {
        let mut r = SplitMix64::new(seed);
        Tensor::signal((0..len).map(|_| r.next_symmetric(1.0)).collect())
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // quantize_ste deliberately passes the gradient straight through, so
        // a finite-difference check of it must fail
        let rep = grad_check(|g, x| g.quantize_ste(x, 0.5), &input(16, 3), 1).unwrap();
        assert!(!rep.passes(1e-3));
    }

    #[test]
    fn smooth_ops_pass() {
        let checks: Vec<(&str, Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var>>)> = vec![
            ("sigmoid", Box::new(|g, x| Ok(g.sigmoid(x)))),
            ("leaky", Box::new(|g, x| Ok(g.leaky_relu(x, 0.2)))),
            ("inorm", Box::new(|g, x| g.instance_norm1d(x, 1e-5))),
            ("pool", Box::new(|g, x| g.adaptive_avg_pool1d(x, 5))),
            ("resample", Box::new(|g, x| g.linear_resample(x, 23))),
            ("pad", Box::new(|g, x| g.pad_symmetric(x, 3, 4))),
            ("pow", Box::new(|g, x| Ok(g.signed_pow(x, 0.75)))),
            ("bce", Box::new(|g, x| {
                let p = g.sigmoid(x);
                let t: Vec<f64> = (0..32).map(|i| (i % 2) as f64).collect();
                g.bce(p, &t)
            })),
            ("l3", Box::new(|g, x| {
                let p = g.sigmoid(x);
                Ok(g.neg_log_one_minus(p))
            })),
            ("xent", Box::new(|g, x| {
                let l = g.slice_cols(x, 0, 2)?;
                g.softmax_xent(l, 1)
            })),
            ("stft", Box::new(|g, x| {
                let s = g.stft(x, 8, 2)?;
                let m = g.complex_magnitude(s)?;
                let m2 = g.scale(m, 0.5);
                let z = g.polar_rescale(s, m2)?;
                g.istft(z, 8, 2, 32)
            })),
        ];
        for (name, f) in checks {
            let rep = grad_check(f, &input(32, 7), 11).unwrap();
            assert!(rep.passes(1e-5), "{name}: {rep:?}");
        }
    }

    #[test]
    fn conv_and_mdct_pass() {
        let w = input(3 * 2 * 5, 9).into_data();
        let rep = grad_check(
            |g, x| {
                let x = g.reshape(x, &[2, 40])?;
                let w = g.constant(Tensor::new(&[3, 2, 5], w.clone())?)?;
                g.conv1d_strided(x, w, None, 2, 2)
            },
            &input(80, 5),
            2,
        )
        .unwrap();
        assert!(rep.passes(1e-6), "{rep:?}");

        let basis = std::sync::Arc::new(super::super::MdctBasis::new(16).unwrap());
        let rep = grad_check(
            |g, x| {
                let c = g.mdct(x, &basis)?;
                let c = g.signed_pow(c, 0.75);
                let c = g.signed_pow(c, 4.0 / 3.0);
                g.imdct(c, &basis, 70)
            },
            &input(70, 6),
            4,
        )
        .unwrap();
        assert!(rep.passes(1e-5), "{rep:?}");
    }
}
