//! Adam updates and global-norm gradient clipping.

use crate::params::ParamStore;
use crate::tensor::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates, indexed like the parameter store.
/// Buffers keep empty moment vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |p: &crate::params::Param<T>| {
            if p.trainable {
                vec![T::zero(); p.tensor.numel()]
            } else {
                Vec::new()
            }
        };
        Adam {
            lr,
            step: 0,
            m: store.iter().map(|(_, p)| zeros(p)).collect(),
            v: store.iter().map(|(_, p)| zeros(p)).collect(),
        }
    }

    /// One bias-corrected update from the gradients held by the store.
    pub fn update(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - BETA1.powf(t);
        let c2 = 1.0 - BETA2.powf(t);
        let (b1, b2) = (T::from_f64(BETA1), T::from_f64(BETA2));
        let (one, eps) = (T::one(), T::from_f64(EPS));
        let step_size = T::from_f64(self.lr / c1);
        let c2_sqrt = T::from_f64(c2.sqrt());
        for (i, (_, p)) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let Some(g) = p.tensor.grad().map(<[T]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, w) in p.tensor.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                *w -= step_size * m[k] / (v[k].sqrt() / c2_sqrt + eps);
            }
        }
    }
}

/// Global L2 norm of all held gradients.
pub fn grad_norm<T: Scalar>(store: &ParamStore<T>) -> f64 {
    store
        .iter()
        .filter_map(|(_, p)| p.tensor.grad())
        .flat_map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grad_norm(store);
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64(max_norm / norm);
        for (_, p) in store.iter_mut() {
            if let Some(g) = p.tensor.grad() {
                let scaled = g.iter().map(|&v| v * s).collect();
                p.tensor.set_grad(Some(scaled));
            }
        }
    }
    norm
}
