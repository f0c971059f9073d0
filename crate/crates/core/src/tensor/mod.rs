//! Dense NCHW tensors and the reverse-mode autograd engine built on them.
//!
//! [`Tensor`] is a plain owned array. Differentiable computation goes through a
//! [`Graph`], which records every operation so that [`Graph::backward`] can
//! replay them in reverse. The raw forward/backward kernels in [`kernels`] are
//! shared by both the recording path and the eager inference path.

mod graph;
mod gradcheck;
pub mod kernels;

use std::fmt::{Debug, Display};

use num_traits::Float;

use crate::error::{shape_err, Result};

pub use gradcheck::grad_check;
pub use graph::{Activation, Gradients, Graph, Var};

/// Floating-point element type of the engine (`f32` or `f64`).
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + std::iter::Sum + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` for an `m×k` by `k×n` product, with
    /// arbitrary row/column strides on all three operands.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-aliasing (for `c`)
    /// regions of the stated extents.
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

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

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

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

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

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major N-dimensional array. Image tensors use `[N, C, H, W]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("dimensions must be positive, got {shape:?}"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Returns the four NCHW dimensions, or a shape error for other ranks.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(shape_err!("expected an NCHW tensor, got {:?}", self.shape)),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Copies sample `n` of an NCHW batch into a `[1, C, H, W]` tensor.
    pub fn sample(&self, n: usize) -> Result<Self> {
        let [batch, c, h, w] = self.dims4()?;
        if n >= batch {
            return Err(shape_err!("sample {n} out of range for batch of {batch}"));
        }
        let stride = c * h * w;
        Ok(Tensor {
            shape: vec![1, c, h, w],
            data: self.data[n * stride..(n + 1) * stride].to_vec(),
        })
    }

    /// Stacks `[1, C, H, W]` (or `[C, H, W]`-compatible) samples along the batch axis.
    pub fn stack(samples: &[Tensor<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| shape_err!("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.dims4()?;
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        let mut n = 0;
        for s in samples {
            let [sn, sc, sh, sw] = s.dims4()?;
            if (sc, sh, sw) != (c, h, w) {
                return Err(shape_err!(
                    "cannot stack {:?} onto {:?}",
                    s.shape(),
                    first.shape()
                ));
            }
            n += sn;
            data.extend_from_slice(&s.data);
        }
        Tensor::new(vec![n, c, h, w], data)
    }
}
