//! Minimal layer-based neural network toolkit.
//!
//! Layers cache what they need during [`Sequential::forward`] and accumulate
//! parameter gradients in [`Sequential::backward`]. A network may be run
//! forward/backward several times before an optimizer step; gradients add up.
//! [`Sequential::infer`] runs without touching any cache, so trained networks
//! can be shared for read-only inference.

mod layers;
mod loss;
mod optim;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use layers::{
    Activation, ActivationKind, Conv2d, InstanceNorm, Layer, LayerKind, Linear, MaxPool2d, Padding, Residual, Sequential, Upsample2d,
};
pub use loss::{bce_with_logits, l1_loss, mse_loss, mse_to_constant, softmax, softmax_cross_entropy};
pub use optim::{clip_grad_norm, Adam};

/// Floating point element type of tensors, with a matching GEMM kernel.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + core::iter::Sum + 'static {
    /// `c = a·b` (or `c += a·b` when `accumulate`) for strided row/column
    /// layouts. `a` is `m×k`, `b` is `k×n`, `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Scalar for f32 {
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        // SAFETY: callers go through `gemm`, which checks every stride span
        // against the slice lengths.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
        }
    }
}

impl Scalar for f64 {
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
        }
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub rs: usize,
    pub cs: usize,
}

impl Strides {
    pub fn row_major(cols: usize) -> Self {
        Strides { rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Strides { rs: 1, cs: cols }
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

/// Bounds-checked GEMM: `c (+)= a·b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    c: &mut [T],
    sc: Strides,
    accumulate: bool,
) {
    assert!(sa.span(m, k) <= a.len(), "gemm: lhs out of bounds");
    assert!(sb.span(k, n) <= b.len(), "gemm: rhs out of bounds");
    assert!(sc.span(m, n) <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm_raw(
        m,
        k,
        n,
        a.as_ptr(),
        sa.rs as isize,
        sa.cs as isize,
        b.as_ptr(),
        sb.rs as isize,
        sb.cs as isize,
        beta,
        c.as_mut_ptr(),
        sc.rs as isize,
        sc.cs as isize,
    );
}

/// Dense `N×C×H×W` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor { shape, data }
    }

    /// Stacks single-sample tensors of identical shape along the batch axis.
    pub fn stack(samples: &[Tensor<T>]) -> Self {
        assert!(!samples.is_empty());
        let [_, c, h, w] = samples[0].shape;
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            assert_eq!(&s.shape[1..], &[c, h, w]);
            data.extend_from_slice(&s.data);
        }
        Tensor {
            shape: [data.len() / (c * h * w), c, h, w],
            data,
        }
    }

    /// Concatenates two tensors along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Self {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        assert_eq!((n, h, w), (nb, hb, wb));
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Tensor {
            shape: [n, ca + cb, h, w],
            data,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.sample_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable array and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: &[usize], value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            grad: vec![T::zero(); value.len()],
            value,
            shape: shape.to_vec(),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Name/shape/value snapshot of one parameter, used by checkpoint writers.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}
