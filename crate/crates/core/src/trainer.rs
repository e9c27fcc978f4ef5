//! Time-domain MSE objective and the single optimization step.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, num_err, Result};
use crate::network::{gldnet_forward, GldNet};
use crate::scalar::Scalar;
use crate::tensorcore::{adam_step, AdamState, Ctx, Graph, Mode, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Self::F32 => 32,
            Self::F64 => 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub precision: Precision,
    /// Maximum joint L2 norm of all gradients.
    pub grad_clip: Option<f64>,
    /// Training crop length in samples.
    pub crop_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch: 16,
            max_steps: 1000,
            eval_every: 100,
            seed: 0,
            precision: Precision::F32,
            grad_clip: None,
            crop_len: 16_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(contract_err!("train: lr must be positive, got {}", self.lr));
        }
        if self.batch == 0 {
            return Err(contract_err!("train: batch must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(contract_err!("train: eval_every must be at least 1"));
        }
        if self.crop_len == 0 {
            return Err(contract_err!("train: crop_len must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(contract_err!("train: grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Mean over all elements of the squared difference.
pub fn mse_loss<S: Scalar>(g: &mut Graph<S>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(dim_err!("mse: prediction {:?} vs target {:?}", g.shape(pred), g.shape(target)));
    }
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// Equal-length (noisy, clean) waveforms stacked as `[N×L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<S> {
    pub noisy: Tensor<S>,
    pub clean: Tensor<S>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let len = pairs.first().map(|p| p.0.len()).ok_or_else(|| contract_err!("empty batch"))?;
        if pairs.iter().any(|(n, c)| n.len() != len || c.len() != len) {
            return Err(dim_err!("batch items must share one length ({len})"));
        }
        let stack = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
            Tensor::new(&[pairs.len(), len], pairs.iter().flat_map(|p| pick(p).iter().map(|&v| S::of(v))).collect())
        };
        Ok(Self { noisy: stack(|p| &p.0)?, clean: stack(|p| &p.1)? })
    }

    pub fn len(&self) -> usize {
        self.noisy.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Step counter after the update.
    pub step: u64,
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Forward, loss, backward, optional clipping and one Adam update.
pub fn train_step<S: Scalar>(
    net: &mut GldNet<S>,
    batch: &Batch<S>,
    opt: &mut AdamState<S>,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    net.store.zero_grad();
    let loss = {
        let mut ctx = Ctx::new(&mut net.store, Mode::Train);
        let tr = gldnet_forward(&mut ctx, &net.params, &net.cfg, &batch.noisy)?;
        let target = ctx.graph.constant(batch.clean.clone());
        let loss = mse_loss(&mut ctx.graph, tr.wave, target)?;
        let lv = ctx.graph.value(loss).data()[0].f64();
        if !lv.is_finite() {
            let culprit = ctx
                .graph
                .first_non_finite()
                .map_or_else(|| "none found".to_string(), |n| n.to_string());
            return Err(num_err!("non-finite loss {lv}; first non-finite tensor: {culprit}"));
        }
        ctx.backward(loss)?;
        lv
    };
    let grad_norm = match cfg.grad_clip {
        Some(c) => net.store.clip_grad_norm(c),
        None => net.store.grad_norm(),
    };
    adam_step(&mut net.store, opt)?;
    Ok(StepReport { step: opt.step, loss, grad_norm })
}

/// Loss without parameter updates, using running batchnorm statistics.
pub fn eval_loss<S: Scalar>(net: &mut GldNet<S>, batch: &Batch<S>) -> Result<f64> {
    let mut ctx = Ctx::new(&mut net.store, Mode::Eval);
    let tr = gldnet_forward(&mut ctx, &net.params, &net.cfg, &batch.noisy)?;
    let target = ctx.graph.constant(batch.clean.clone());
    let loss = mse_loss(&mut ctx.graph, tr.wave, target)?;
    Ok(ctx.graph.value(loss).data()[0].f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn mse_examples() {
        let mut g = Graph::<f64>::new();
        let t = g.constant(Tensor::new(&[2, 3], vec![0.1, 0.2, -0.3, 0.0, 1.0, 0.5]).unwrap());
        let same = mse_loss(&mut g, t, t).unwrap();
        assert_eq!(g.value(same).data()[0], 0.0);
        let p = g.affine(t, 1.0, 0.1);
        let l = mse_loss(&mut g, p, t).unwrap();
        assert!((g.value(l).data()[0] - 0.01).abs() < 1e-15);
        let other = g.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(mse_loss(&mut g, t, other), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { grad_clip: Some(-1.0), ..TrainConfig::default() }.validate().is_err());
    }
}
