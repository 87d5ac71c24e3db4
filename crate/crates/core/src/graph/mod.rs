//! A small reverse-mode differentiation engine.
//!
//! Values are dense row-major [`Tensor`]s of rank ≤ 3. Every operation
//! appends a node to a [`Graph`]; node indices are therefore already a
//! topological order and [`Graph::backward`] walks them in reverse exactly
//! once. Only the primitives the decoder, detectors, losses and channel
//! simulations need are provided.
//!
//! The pipeline runs in `f32`; gradient checking instantiates the same code
//! in `f64`.

mod conv;
mod elementwise;
mod gradcheck;
mod loss;
mod norm;
mod pool;
mod resample;
mod spectral;

pub use gradcheck::{grad_check, GradCheckReport};
pub use spectral::{hann_window, sine_window, MdctBasis};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::{Error, Result};

/// Floating-point scalar the engine is generic over (`f32` or `f64`).
pub trait Real:
    Float + rustfft::FftNum + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn lit(v: f64) -> Self;

    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// `C ← α·A·B + β·C` over strided views.
    ///
    /// # Safety
    /// All pointers must address `m×k`, `k×n` and `m×n` matrices under the
    /// given strides, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn lit(v: f64) -> Self {
        v as f32
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape("tensor", format!("rank {} not in 1..=3", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    /// A `1×L` signal.
    pub fn signal(data: Vec<T>) -> Self {
        Self { shape: vec![1, data.len()], data }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::lit(v as f64)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interprets the tensor as `rows × cols` where `cols` is the last axis.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape.last().unwrap();
        (self.data.len() / cols.max(1), cols)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.f64() as f32).collect()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Read access to forward values during the backward pass.
pub(crate) struct Values<'a, T> {
    nodes: &'a [Node<T>],
}

impl<'a, T: Real> Values<'a, T> {
    pub(crate) fn get(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }
}

/// Gradient accumulators, allocated lazily for nodes that need them.
pub(crate) struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
    needs: Vec<bool>,
    lens: Vec<usize>,
}

impl<T: Real> Grads<T> {
    /// Mutable gradient buffer for `v`, or `None` when `v` does not need one.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.needs[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.slots[v.0].get_or_insert_with(|| vec![T::zero(); len]).as_mut_slice())
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.needs[v.0]
    }
}

/// Backward rule of one operation.
pub(crate) trait Backward<T: Real> {
    fn backward(&self, values: &Values<'_, T>, out: &Tensor<T>, grad: &[T], grads: &mut Grads<T>);
}

pub(crate) struct Node<T> {
    value: Tensor<T>,
    op: Option<Box<dyn Backward<T>>>,
    needs_grad: bool,
}

/// Computation graph for one forward/backward evaluation.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("graph input".into()));
        }
        self.nodes.push(Node { value, op: None, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: impl Backward<T> + 'static) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let op: Option<Box<dyn Backward<T>>> = if needs_grad { Some(Box::new(op)) } else { None };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar `root` with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::shape("backward", "root must be a scalar"));
        }
        self.backward_with(root, &[T::one()])
    }

    /// Reverse sweep from `root` seeded with an arbitrary upstream gradient.
    pub fn backward_with(&mut self, root: Var, seed: &[T]) -> Result<()> {
        if seed.len() != self.nodes[root.0].value.len() {
            return Err(Error::shape("backward", "seed length differs from root size"));
        }
        let n = self.nodes.len();
        let mut grads = Grads {
            slots: (0..n).map(|_| None).collect(),
            needs: self.nodes.iter().map(|nd| nd.needs_grad).collect(),
            lens: self.nodes.iter().map(|nd| nd.value.len()).collect(),
        };
        if let Some(s) = grads.slot(root) {
            s.copy_from_slice(seed);
        }
        let values = Values { nodes: &self.nodes };
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(g) = grads.slots[i].take() else { continue };
            op.backward(&values, &node.value, &g, &mut grads);
            grads.slots[i] = Some(g);
        }
        self.grads = grads.slots;
        Ok(())
    }

    /// Gradient of the last backward root with respect to `v` (zeros if `v`
    /// did not influence it).
    pub fn grad(&self, v: Var) -> Vec<T> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.nodes[v.0].value.len()],
        }
    }
}
