use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{gemm, NamedTensor, Param, Scalar, Strides, Tensor};
use crate::math;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Linear,
    Activation,
    MaxPool2d,
    InstanceNorm,
    Upsample2d,
    Residual,
}

fn he_uniform<T: Scalar>(len: usize, fan_in: usize, rng: &mut Rng) -> Vec<T> {
    let bound = math::sqrt(6.0 / fan_in.max(1) as f64);
    (0..len).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
}

/// Maps a (possibly padded) coordinate onto the source axis.
#[inline]
fn source_index(i: isize, n: usize, mode: Padding) -> Option<usize> {
    if i >= 0 && (i as usize) < n {
        return Some(i as usize);
    }
    match mode {
        Padding::Zero => None,
        Padding::Reflect => {
            let n = n as isize;
            let r = if i < 0 { -i } else { 2 * n - 2 - i };
            (0..n).contains(&r).then_some(r as usize)
        }
    }
}

/// 2-D convolution lowered to GEMM through an im2col buffer.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    mode: Padding,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    in_shape: [usize; 4],
    cols: Vec<T>,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    xmap: Vec<Option<usize>>,
    ymap: Vec<Option<usize>>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        mode: Padding,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            mode,
            weight: Param::new(
                &[out_channels, in_channels, kernel, kernel],
                he_uniform(out_channels * fan_in, fan_in, rng),
            ),
            bias: Param::zeros(&[out_channels]),
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = 2 * self.padding;
        (
            (h + p).saturating_sub(k) / self.stride + 1,
            (w + p).saturating_sub(k) / self.stride + 1,
        )
    }

    fn geometry(&self, shape: [usize; 4]) -> Geometry {
        let [_, c, h, w] = shape;
        assert_eq!(c, self.in_channels, "conv expects {} input channels", self.in_channels);
        let (ho, wo) = self.output_size(h, w);
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let axis = |n: usize, out: usize| -> Vec<Option<usize>> {
            let mut m = Vec::with_capacity(k * out);
            for kk in 0..k {
                for o in 0..out {
                    m.push(source_index((o * s + kk) as isize - p, n, self.mode));
                }
            }
            m
        };
        Geometry {
            c,
            h,
            w,
            ho,
            wo,
            xmap: axis(w, wo),
            ymap: axis(h, ho),
        }
    }

    fn im2col(&self, g: &Geometry, x: &[T], cols: &mut [T]) {
        let k = self.kernel;
        let howo = g.ho * g.wo;
        for ci in 0..g.c {
            let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * howo;
                    let xm = &g.xmap[kx * g.wo..(kx + 1) * g.wo];
                    for oy in 0..g.ho {
                        let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                        match g.ymap[ky * g.ho + oy] {
                            None => dst.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * g.w..(iy + 1) * g.w];
                                for (d, m) in dst.iter_mut().zip(xm) {
                                    *d = match m {
                                        Some(ix) => src[*ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, g: &Geometry, cols: &[T], dx: &mut [T]) {
        let k = self.kernel;
        let howo = g.ho * g.wo;
        for ci in 0..g.c {
            let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * howo;
                    let xm = &g.xmap[kx * g.wo..(kx + 1) * g.wo];
                    for oy in 0..g.ho {
                        if let Some(iy) = g.ymap[ky * g.ho + oy] {
                            let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                            let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                            for (v, m) in src.iter().zip(xm) {
                                if let Some(ix) = m {
                                    dst[*ix] = dst[*ix] + *v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn compute(&self, x: &Tensor<T>, keep: bool) -> (Tensor<T>, Vec<T>) {
        let g = self.geometry(x.shape());
        let n = x.batch();
        let howo = g.ho * g.wo;
        let ckk = g.c * self.kernel * self.kernel;
        let mut out = Tensor::zeros([n, self.out_channels, g.ho, g.wo]);
        let mut all_cols = if keep { vec![T::zero(); n * ckk * howo] } else { Vec::new() };
        let mut scratch = if keep { Vec::new() } else { vec![T::zero(); ckk * howo] };
        for i in 0..n {
            let cols: &mut [T] = if keep {
                &mut all_cols[i * ckk * howo..(i + 1) * ckk * howo]
            } else {
                &mut scratch
            };
            self.im2col(&g, x.sample(i), cols);
            let dst = out.sample_mut(i);
            gemm(
                self.out_channels,
                ckk,
                howo,
                &self.weight.value,
                Strides::row_major(ckk),
                cols,
                Strides::row_major(howo),
                dst,
                Strides::row_major(howo),
                false,
            );
            for (co, b) in self.bias.value.iter().enumerate() {
                dst[co * howo..(co + 1) * howo].iter_mut().for_each(|v| *v = *v + *b);
            }
        }
        (out, all_cols)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("conv backward without forward");
        let g = self.geometry(cache.in_shape);
        let n = cache.in_shape[0];
        let howo = g.ho * g.wo;
        let ckk = g.c * self.kernel * self.kernel;
        assert_eq!(grad.shape(), [n, self.out_channels, g.ho, g.wo]);
        let mut dx = Tensor::zeros(cache.in_shape);
        let mut dcols = vec![T::zero(); ckk * howo];
        for i in 0..n {
            let dy = grad.sample(i);
            let cols = &cache.cols[i * ckk * howo..(i + 1) * ckk * howo];
            for (co, db) in self.bias.grad.iter_mut().enumerate() {
                *db = *db + dy[co * howo..(co + 1) * howo].iter().copied().sum::<T>();
            }
            gemm(
                self.out_channels,
                howo,
                ckk,
                dy,
                Strides::row_major(howo),
                cols,
                Strides::transposed(howo),
                &mut self.weight.grad,
                Strides::row_major(ckk),
                true,
            );
            gemm(
                ckk,
                self.out_channels,
                howo,
                &self.weight.value,
                Strides::transposed(ckk),
                dy,
                Strides::row_major(howo),
                &mut dcols,
                Strides::row_major(howo),
                false,
            );
            self.col2im(&g, &dcols, dx.sample_mut(i));
        }
        dx
    }
}

/// Fully connected layer over the flattened `C×H×W` sample.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    in_features: usize,
    out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::new(
                &[out_features, in_features],
                he_uniform(in_features * out_features, in_features, rng),
            ),
            bias: Param::zeros(&[out_features]),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    fn compute(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        assert_eq!(
            x.sample_len(),
            self.in_features,
            "linear expects {} input features",
            self.in_features
        );
        let mut out = Tensor::zeros([n, self.out_features, 1, 1]);
        gemm(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            Strides::row_major(self.in_features),
            &self.weight.value,
            Strides::transposed(self.in_features),
            out.data_mut(),
            Strides::row_major(self.out_features),
            false,
        );
        for row in out.data_mut().chunks_exact_mut(self.out_features) {
            for (v, b) in row.iter_mut().zip(&self.bias.value) {
                *v = *v + *b;
            }
        }
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.take().expect("linear backward without forward");
        let n = x.batch();
        for row in grad.data().chunks_exact(self.out_features) {
            for (db, g) in self.bias.grad.iter_mut().zip(row) {
                *db = *db + *g;
            }
        }
        gemm(
            self.out_features,
            n,
            self.in_features,
            grad.data(),
            Strides::transposed(self.out_features),
            x.data(),
            Strides::row_major(self.in_features),
            &mut self.weight.grad,
            Strides::row_major(self.in_features),
            true,
        );
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            n,
            self.out_features,
            self.in_features,
            grad.data(),
            Strides::row_major(self.out_features),
            &self.weight.value,
            Strides::row_major(self.in_features),
            dx.data_mut(),
            Strides::row_major(self.in_features),
            false,
        );
        dx
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug)]
pub struct Activation<T> {
    pub kind: ActivationKind,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, cache: None }
    }

    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        match self.kind {
            ActivationKind::Relu => x.map(|v| v.max(T::zero())),
            ActivationKind::LeakyRelu(a) => {
                let a = T::lit(a);
                x.map(|v| if v > T::zero() { v } else { v * a })
            }
            ActivationKind::Tanh => x.map(|v| v.tanh()),
            ActivationKind::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
        }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.apply(x);
        self.cache = Some(match self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu(_) => x.clone(),
            ActivationKind::Tanh | ActivationKind::Sigmoid => y.clone(),
        });
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let c = self.cache.take().expect("activation backward without forward");
        let mut dx = grad.clone();
        let zero = T::zero();
        let one = T::one();
        match self.kind {
            ActivationKind::Relu => {
                for (d, &x) in dx.data_mut().iter_mut().zip(c.data()) {
                    if x <= zero {
                        *d = zero;
                    }
                }
            }
            ActivationKind::LeakyRelu(a) => {
                let a = T::lit(a);
                for (d, &x) in dx.data_mut().iter_mut().zip(c.data()) {
                    if x <= zero {
                        *d = *d * a;
                    }
                }
            }
            ActivationKind::Tanh => {
                for (d, &y) in dx.data_mut().iter_mut().zip(c.data()) {
                    *d = *d * (one - y * y);
                }
            }
            ActivationKind::Sigmoid => {
                for (d, &y) in dx.data_mut().iter_mut().zip(c.data()) {
                    *d = *d * y * (one - y);
                }
            }
        }
        dx
    }
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Clone, Debug, Default)]
pub struct MaxPool2d {
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    fn compute<T: Scalar>(x: &Tensor<T>, keep: bool) -> (Tensor<T>, Vec<usize>) {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut arg = if keep { Vec::with_capacity(n * c * ho * wo) } else { Vec::new() };
        for i in 0..n {
            let src = x.sample(i);
            let dst = out.sample_mut(i);
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let base = ch * h * w + 2 * oy * w + 2 * ox;
                        let mut best = base;
                        for idx in [base + 1, base + w, base + w + 1] {
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                        dst[(ch * ho + oy) * wo + ox] = src[best];
                        if keep {
                            arg.push(best);
                        }
                    }
                }
            }
        }
        (out, arg)
    }

    fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (shape, arg) = self.cache.take().expect("pool backward without forward");
        let mut dx = Tensor::zeros(shape);
        let per = grad.sample_len();
        for i in 0..shape[0] {
            let g = grad.sample(i);
            let d = dx.sample_mut(i);
            for (j, &gv) in g.iter().enumerate() {
                let idx = arg[i * per + j];
                d[idx] = d[idx] + gv;
            }
        }
        dx
    }
}

/// Per-sample, per-channel normalization without affine parameters.
#[derive(Clone, Debug)]
pub struct InstanceNorm<T> {
    eps: f64,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Scalar> InstanceNorm<T> {
    pub fn new() -> Self {
        InstanceNorm { eps: 1e-5, cache: None }
    }

    fn compute(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let [n, c, h, w] = x.shape();
        let m = h * w;
        let mut y = x.clone();
        let mut inv = Vec::with_capacity(n * c);
        let mf = T::lit(m as f64);
        for plane in y.data_mut().chunks_exact_mut(m) {
            let mean = plane.iter().copied().sum::<T>() / mf;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
            let is = T::one() / (var + T::lit(self.eps)).sqrt();
            plane.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv.push(is);
        }
        (y, inv)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (y, inv) = self.cache.take().expect("norm backward without forward");
        let m = y.height() * y.width();
        let mf = T::lit(m as f64);
        let mut dx = grad.clone();
        for ((d, yp), &is) in dx.data_mut().chunks_exact_mut(m).zip(y.data().chunks_exact(m)).zip(&inv) {
            let mean_d = d.iter().copied().sum::<T>() / mf;
            let mean_dy = d.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / mf;
            for (dv, &yv) in d.iter_mut().zip(yp) {
                *dv = is * (*dv - mean_d - yv * mean_dy);
            }
        }
        dx
    }
}

impl<T: Scalar> Default for InstanceNorm<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Nearest-neighbour 2× upsampling.
#[derive(Clone, Debug, Default)]
pub struct Upsample2d {
    in_shape: Option<[usize; 4]>,
}

impl Upsample2d {
    pub fn new() -> Self {
        Self::default()
    }

    fn compute<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for i in 0..n {
            let src = x.sample(i);
            let dst = out.sample_mut(i);
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                    }
                }
            }
        }
        out
    }

    fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self.in_shape.take().expect("upsample backward without forward");
        let [n, c, h, w] = shape;
        let mut dx = Tensor::zeros(shape);
        for i in 0..n {
            let g = grad.sample(i);
            let d = dx.sample_mut(i);
            for ch in 0..c {
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        let t = (ch * h + y / 2) * w + xx / 2;
                        d[t] = d[t] + g[(ch * 2 * h + y) * 2 * w + xx];
                    }
                }
            }
        }
        dx
    }
}

/// `y = x + inner(x)`.
#[derive(Clone, Debug)]
pub struct Residual<T> {
    pub inner: Sequential<T>,
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Linear(Linear<T>),
    Activation(Activation<T>),
    MaxPool2d(MaxPool2d),
    InstanceNorm(InstanceNorm<T>),
    Upsample2d(Upsample2d),
    Residual(Box<Residual<T>>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Activation(_) => LayerKind::Activation,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::InstanceNorm(_) => LayerKind::InstanceNorm,
            Layer::Upsample2d(_) => LayerKind::Upsample2d,
            Layer::Residual(_) => LayerKind::Residual,
        }
    }

    pub fn relu() -> Self {
        Layer::Activation(Activation::new(ActivationKind::Relu))
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Layer::Activation(Activation::new(ActivationKind::LeakyRelu(slope)))
    }

    pub fn tanh() -> Self {
        Layer::Activation(Activation::new(ActivationKind::Tanh))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv2d(l) => {
                let (y, cols) = l.compute(x, true);
                l.cache = Some(ConvCache { in_shape: x.shape(), cols });
                y
            }
            Layer::Linear(l) => {
                let y = l.compute(x);
                l.cache = Some(x.clone());
                y
            }
            Layer::Activation(l) => l.forward(x),
            Layer::MaxPool2d(l) => {
                let (y, arg) = MaxPool2d::compute(x, true);
                l.cache = Some((x.shape(), arg));
                y
            }
            Layer::InstanceNorm(l) => {
                let (y, inv) = l.compute(x);
                l.cache = Some((y.clone(), inv));
                y
            }
            Layer::Upsample2d(l) => {
                l.in_shape = Some(x.shape());
                Upsample2d::compute(x)
            }
            Layer::Residual(r) => {
                let mut y = r.inner.forward(x);
                y.add_assign(x);
                y
            }
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv2d(l) => l.compute(x, false).0,
            Layer::Linear(l) => l.compute(x),
            Layer::Activation(l) => l.apply(x),
            Layer::MaxPool2d(_) => MaxPool2d::compute(x, false).0,
            Layer::InstanceNorm(l) => l.compute(x).0,
            Layer::Upsample2d(_) => Upsample2d::compute(x),
            Layer::Residual(r) => {
                let mut y = r.inner.infer(x);
                y.add_assign(x);
                y
            }
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
            Layer::Activation(l) => l.backward(grad),
            Layer::MaxPool2d(l) => l.backward(grad),
            Layer::InstanceNorm(l) => l.backward(grad),
            Layer::Upsample2d(l) => l.backward(grad),
            Layer::Residual(r) => {
                let mut dx = r.inner.backward(grad);
                dx.add_assign(grad);
                dx
            }
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        match self {
            Layer::Conv2d(l) => {
                f(format!("{prefix}.weight"), &l.weight);
                f(format!("{prefix}.bias"), &l.bias);
            }
            Layer::Linear(l) => {
                f(format!("{prefix}.weight"), &l.weight);
                f(format!("{prefix}.bias"), &l.bias);
            }
            Layer::Residual(r) => r.inner.visit_prefixed(prefix, f),
            _ => {}
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        match self {
            Layer::Conv2d(l) => {
                f(format!("{prefix}.weight"), &mut l.weight);
                f(format!("{prefix}.bias"), &mut l.bias);
            }
            Layer::Linear(l) => {
                f(format!("{prefix}.weight"), &mut l.weight);
                f(format!("{prefix}.bias"), &mut l.bias);
            }
            Layer::Residual(r) => r.inner.visit_prefixed_mut(prefix, f),
            _ => {}
        }
    }
}

/// Ordered stack of layers.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: Layer<T>) -> &mut Self {
        self.layers.push(layer);
        self
    }

    pub fn with(mut self, layer: Layer<T>) -> Self {
        self.layers.push(layer);
        self
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return x.clone();
        };
        let mut cur = first.forward(x);
        for layer in layers {
            cur = layer.forward(&cur);
        }
        cur
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut layers = self.layers.iter();
        let Some(first) = layers.next() else {
            return x.clone();
        };
        let mut cur = first.infer(x);
        for layer in layers {
            cur = layer.infer(&cur);
        }
        cur
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    fn visit_prefixed<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = if prefix.is_empty() {
                format!("{i}")
            } else {
                format!("{prefix}.{i}")
            };
            layer.visit(&p, f);
        }
    }

    fn visit_prefixed_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = if prefix.is_empty() {
                format!("{i}")
            } else {
                format!("{prefix}.{i}")
            };
            layer.visit_mut(&p, f);
        }
    }

    /// Visits every parameter with its dotted path (`"3.weight"`).
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.visit_prefixed("", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.visit_prefixed_mut("", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    /// Snapshot of every parameter as `f32`, in visit order.
    pub fn export(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p| {
            out.push(NamedTensor {
                name,
                shape: p.shape().to_vec(),
                data: p.value.iter().map(|v| v.to_f32().unwrap()).collect(),
            })
        });
        out
    }

    /// Loads parameters by name. Every parameter of the network must be
    /// present and no extra tensors are allowed.
    pub fn import(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let by_name: BTreeMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut used = 0usize;
        let mut err = None;
        self.visit_params_mut(&mut |name, p| {
            if err.is_some() {
                return;
            }
            match by_name.get(name.as_str()) {
                None => err = Some(Error::UnknownParameter(name)),
                Some(t) if t.data.len() != p.len() || t.shape != p.shape() => {
                    err = Some(Error::ParameterLength {
                        name,
                        expected: p.len(),
                        got: t.data.len(),
                    })
                }
                Some(t) => {
                    used += 1;
                    for (v, &d) in p.value.iter_mut().zip(&t.data) {
                        *v = T::from_f32(d).unwrap();
                    }
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != by_name.len() {
            let mut names = BTreeSet::new();
            self.visit_params(&mut |n, _| {
                names.insert(n);
            });
            let extra = tensors.iter().find(|t| !names.contains(&t.name)).map(|t| t.name.clone());
            return Err(Error::UnknownParameter(extra.unwrap_or_default()));
        }
        Ok(())
    }
}
