use alloc::vec;
use alloc::vec::Vec;

use super::{Scalar, Sequential};
use crate::math;

/// Adam with bias correction. Moment buffers are allocated on the first step
/// and matched to parameters by visiting order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, net: &mut Sequential<T>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powi(self.beta1, t);
        let bc2 = 1.0 - math::powi(self.beta2, t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(self.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        net.visit_params_mut(&mut |_, p| {
            if ms.len() <= idx {
                ms.push(vec![T::zero(); p.len()]);
                vs.push(vec![T::zero(); p.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for i in 0..p.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                p.value[i] = p.value[i] - step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
                p.grad[i] = T::zero();
            }
            idx += 1;
        });
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(net: &mut Sequential<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    net.visit_params(&mut |_, p| {
        sq += p
            .grad
            .iter()
            .map(|g| {
                let g = g.to_f64().unwrap();
                g * g
            })
            .sum::<f64>();
    });
    let norm = math::sqrt(sq);
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        net.visit_params_mut(&mut |_, p| p.grad.iter_mut().for_each(|g| *g = *g * s));
    }
    norm
}
