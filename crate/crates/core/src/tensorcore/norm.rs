//! Per-channel batch normalization over `[N×C×T×F]` activations.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{dim_err, num_err, Result};
use crate::scalar::Scalar;

/// Momentum applied to running statistics: `running = m·running + (1−m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;
/// Added to the variance before the square root.
pub const BN_EPS: f64 = 1e-5;

/// How statistics are obtained.
pub enum BnMode<'a, S> {
    /// Normalize by the batch statistics; fold them into the running buffers
    /// when given.
    Train {
        running: Option<(&'a mut [S], &'a mut [S])>,
    },
    /// Normalize by stored running mean and variance.
    Eval { mean: &'a [S], var: &'a [S] },
}

pub(crate) struct BnSaved<S> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<S>,
    inv_std: Vec<S>,
    train: bool,
}

fn dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Some((1, c, h * w)),
        [n, c, h, w] => Some((n, c, h * w)),
        _ => None,
    }
}

impl<S: Scalar> Graph<S> {
    pub fn batchnorm2d(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_, S>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c, plane) = dims(&shape)
            .ok_or_else(|| dim_err!("batchnorm2d: expected [C×T×F] or [N×C×T×F], got {:?}", shape))?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(dim_err!(
                "batchnorm2d: gamma {:?} / beta {:?} for {c} channels",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let count = n * plane;
        if count == 0 {
            return Err(num_err!("batchnorm2d: zero-size channel"));
        }
        let eps = S::of(BN_EPS);
        let xd = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![S::zero(); xd.len()];
        let mut out = vec![S::zero(); xd.len()];
        let mut inv_std = vec![S::zero(); c];
        let train = matches!(mode, BnMode::Train { .. });
        let mut stats: Vec<(S, S)> = Vec::with_capacity(c);
        for ch in 0..c {
            let chan = (0..n).flat_map(|s| xd[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter().copied());
            let (mean, var) = match &mode {
                BnMode::Train { .. } => {
                    let cnt = S::of_usize(count);
                    let mean = chan.clone().sum::<S>() / cnt;
                    let var = chan.map(|v| (v - mean) * (v - mean)).sum::<S>() / cnt;
                    (mean, var)
                }
                BnMode::Eval { mean, var } => (mean[ch], var[ch]),
            };
            stats.push((mean, var));
            let istd = S::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            for s in 0..n {
                let base = (s * c + ch) * plane;
                for i in base..base + plane {
                    let h = (xd[i] - mean) * istd;
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        if let BnMode::Train { running: Some((rm, rv)) } = mode {
            let m = S::of(BN_MOMENTUM);
            let unbias = if count > 1 {
                S::of_usize(count) / S::of_usize(count - 1)
            } else {
                S::one()
            };
            for (ch, (mean, var)) in stats.into_iter().enumerate() {
                rm[ch] = m * rm[ch] + (S::one() - m) * mean;
                rv[ch] = m * rv[ch] + (S::one() - m) * var * unbias;
            }
        }
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let saved = BnSaved { x, gamma, beta, xhat, inv_std, train };
        Ok(self.push(value, Op::BatchNorm(saved), rg))
    }
}

pub(crate) fn batchnorm_backward<S: Scalar>(
    gr: &Graph<S>,
    saved: &BnSaved<S>,
    grad: &[S],
    out: &mut Vec<(Var, Vec<S>)>,
) {
    let (n, c, plane) = dims(gr.shape(saved.x)).expect("checked in forward");
    let gd = gr.data(saved.gamma);
    let xhat = &saved.xhat;
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    let need_x = gr.rg(saved.x);
    let mut dx = vec![S::zero(); if need_x { grad.len() } else { 0 }];
    let cnt = S::of_usize(n * plane);
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |s| (s * c + ch) * plane..(s * c + ch + 1) * plane);
        let (mut sg, mut sgx) = (S::zero(), S::zero());
        for i in idx() {
            sg += grad[i];
            sgx += grad[i] * xhat[i];
        }
        dgamma[ch] = sgx;
        dbeta[ch] = sg;
        if need_x {
            let k = gd[ch] * saved.inv_std[ch];
            if saved.train {
                for i in idx() {
                    dx[i] = k * (grad[i] - sg / cnt - xhat[i] * sgx / cnt);
                }
            } else {
                for i in idx() {
                    dx[i] = k * grad[i];
                }
            }
        }
    }
    if need_x {
        out.push((saved.x, dx));
    }
    if gr.rg(saved.gamma) {
        out.push((saved.gamma, dgamma));
    }
    if gr.rg(saved.beta) {
        out.push((saved.beta, dbeta));
    }
}
