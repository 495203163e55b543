//! Loss functions returning `(mean loss, gradient w.r.t. the input)`.

use alloc::vec::Vec;

use super::{Scalar, Tensor};

/// Numerically stable softmax of one row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), |a, b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy of row-wise softmax against integer labels.
/// `logits` is `N×K×1×1`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (f64, Tensor<T>) {
    let n = logits.batch();
    let k = logits.sample_len();
    assert_eq!(labels.len(), n);
    let inv_n = T::lit(1.0 / n as f64);
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let p = softmax(logits.sample(i));
        loss -= p[label].max(T::min_positive_value()).ln().to_f64().unwrap();
        let g = grad.sample_mut(i);
        for j in 0..k {
            let target = if j == label { T::one() } else { T::zero() };
            g[j] = (p[j] - target) * inv_n;
        }
    }
    (loss / n as f64, grad)
}

pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape());
    let m = pred.data().len() as f64;
    let scale = T::lit(2.0 / m);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += (d * d).to_f64().unwrap();
        *g = d * scale;
    }
    (loss / m, grad)
}

/// MSE against a constant target (least-squares GAN objective).
pub fn mse_to_constant<T: Scalar>(pred: &Tensor<T>, target: f64) -> (f64, Tensor<T>) {
    let t = Tensor::from_vec(pred.shape(), alloc::vec![T::lit(target); pred.data().len()]);
    mse_loss(pred, &t)
}

pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape());
    let m = pred.data().len() as f64;
    let scale = T::lit(1.0 / m);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        loss += d.abs().to_f64().unwrap();
        *g = if d > T::zero() {
            scale
        } else if d < T::zero() {
            -scale
        } else {
            T::zero()
        };
    }
    (loss / m, grad)
}

/// Binary cross-entropy on a logit: returns `(loss, d loss / d logit)`.
pub fn bce_with_logits(logit: f64, target: f64) -> (f64, f64) {
    let p = crate::math::sigmoid(logit);
    // log(1 + e^-|x|) + max(x, 0) - x t
    let loss = crate::math::ln(1.0 + crate::math::exp(-logit.abs())) + logit.max(0.0) - logit * target;
    (loss, p - target)
}
