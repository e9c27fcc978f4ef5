//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use super::params::ParamStore;
use crate::error::{num_err, Result};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    /// First moments, one buffer per store entry (empty for buffers).
    pub m: Vec<Vec<S>>,
    /// Second moments, laid out like `m`.
    pub v: Vec<Vec<S>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> AdamState<S> {
    /// Zeroed moments for every trainable entry of `store`, with
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        let zeros = |trainable: bool, n: usize| if trainable { vec![S::zero(); n] } else { Vec::new() };
        let m: Vec<Vec<S>> = store.entries().iter().map(|e| zeros(e.trainable, e.value.numel())).collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of every trainable entry from its stored gradient. A
/// missing gradient counts as zero. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, state: &mut AdamState<S>) -> Result<()> {
    for e in store.entries().iter().filter(|e| e.trainable) {
        if let Some(g) = &e.grad {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(num_err!("non-finite gradient in `{}` at index {i}", e.name));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::of(state.beta1), S::of(state.beta2));
    let c1 = 1.0 / (1.0 - num_traits::Float::powi(state.beta1, t));
    let c2 = 1.0 / (1.0 - num_traits::Float::powi(state.beta2, t));
    let (lr_c1, c2, eps) = (S::of(state.lr * c1), S::of(c2), S::of(state.eps));
    let one = S::one();
    for (i, e) in store.entries_mut().iter_mut().enumerate() {
        if !e.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = e.value.data_mut();
        match &e.grad {
            Some(g) => {
                for k in 0..p.len() {
                    m[k] = b1 * m[k] + (one - b1) * g[k];
                    v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                    p[k] -= lr_c1 * m[k] / ((v[k] * c2).sqrt() + eps);
                }
            }
            None => {
                for k in 0..p.len() {
                    m[k] *= b1;
                    v[k] *= b2;
                    p[k] -= lr_c1 * m[k] / ((v[k] * c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
