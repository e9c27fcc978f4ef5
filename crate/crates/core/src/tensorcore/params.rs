//! Named parameter storage and the per-pass forward context.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::graph::{Graph, Var};
use super::norm::BnMode;
use super::tensor::Tensor;
use crate::error::{contract_err, Result};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Index of an entry in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Option<Vec<S>>,
    /// Buffers (batchnorm running statistics) are stored alongside the
    /// parameters but never optimized.
    pub trainable: bool,
}

/// Owns every learnable tensor and buffer of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn insert(&mut self, name: &str, value: Tensor<S>, trainable: bool) -> Result<ParamId> {
        if self.find(name).is_some() {
            return Err(contract_err!("parameter `{name}` registered twice"));
        }
        self.entries.push(ParamEntry {
            name: String::from(name),
            value,
            grad: None,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn add_param(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<S> {
        &mut self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<S>] {
        &mut self.entries
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// L2 norm over all present gradients.
    pub fn grad_norm(&self) -> f64 {
        let sq: f64 = self
            .entries
            .iter()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| {
                let v = v.f64();
                v * v
            })
            .sum();
        num_traits::Float::sqrt(sq)
    }

    /// Rescales all gradients so their joint L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let k = S::of(max_norm / norm);
            for g in self.entries.iter_mut().filter_map(|e| e.grad.as_mut()) {
                g.iter_mut().for_each(|v| *v *= k);
            }
        }
        norm
    }

    /// Converts every value to another precision. Gradients are dropped.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: None,
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

/// Tensor drawn from `U(−bound, bound)` on the stream labelled by `name`, so
/// the same (seed, name) always yields the same values.
pub fn uniform_init<S: Scalar>(shape: &[usize], bound: f64, seed: u64, name: &str) -> Tensor<S> {
    let mut rng = substream(seed, name);
    Tensor::from_fn(shape, |_| {
        if bound > 0.0 {
            S::of(rng.random_range(-bound..bound))
        } else {
            S::zero()
        }
    })
}

/// Whether batchnorm uses batch statistics (and updates running ones).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph plus the parameters it reads, for one forward/backward pass.
///
/// Each parameter enters the graph as a single leaf no matter how often it
/// is read, so its gradient sums every use.
pub struct Ctx<'a, S: Scalar> {
    pub graph: Graph<S>,
    store: &'a mut ParamStore<S>,
    mode: Mode,
    leaves: Vec<Option<Var>>,
}

impl<'a, S: Scalar> Ctx<'a, S> {
    pub fn new(store: &'a mut ParamStore<S>, mode: Mode) -> Self {
        let n = store.len();
        Self {
            graph: Graph::new(),
            store,
            mode,
            leaves: vec![None; n],
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.store
    }

    /// Graph leaf for a stored tensor, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let e = &self.store.entries[id.0];
        let v = if e.trainable {
            self.graph.named_leaf(e.value.clone(), &e.name)
        } else {
            self.graph.constant(e.value.clone())
        };
        self.leaves[id.0] = Some(v);
        v
    }

    /// Batch normalization reading gamma/beta from the store and using (or,
    /// in training mode, updating) the stored running statistics.
    pub fn batchnorm(&mut self, x: Var, gamma: ParamId, beta: ParamId, mean: ParamId, var: ParamId) -> Result<Var> {
        let (g, b) = (self.param(gamma), self.param(beta));
        let (lo, hi) = if mean.0 < var.0 { (mean.0, var.0) } else { (var.0, mean.0) };
        let (head, tail) = self.store.entries.split_at_mut(hi);
        let (first, second) = (&mut head[lo], &mut tail[0]);
        let (m, v) = if mean.0 < var.0 { (first, second) } else { (second, first) };
        let mode = match self.mode {
            Mode::Train => BnMode::Train {
                running: Some((m.value.data_mut(), v.value.data_mut())),
            },
            Mode::Eval => BnMode::Eval {
                mean: m.value.data(),
                var: v.value.data(),
            },
        };
        self.graph.batchnorm2d(x, g, b, mode)
    }

    /// Runs the reverse sweep and adds the resulting gradients into the store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)?;
        for (i, leaf) in self.leaves.iter().enumerate() {
            let Some(v) = leaf else { continue };
            let e = &mut self.store.entries[i];
            if !e.trainable {
                continue;
            }
            let g = self
                .graph
                .grad(*v)
                .map(<[S]>::to_vec)
                .unwrap_or_else(|| vec![S::zero(); e.value.numel()]);
            match &mut e.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, d)| *a += d),
                None => e.grad = Some(g),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add_param("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.add_param("a", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a: Tensor<f64> = uniform_init(&[4, 3], 0.5, 7, "enc.0.w");
        let b: Tensor<f64> = uniform_init(&[4, 3], 0.5, 7, "enc.0.w");
        let c: Tensor<f64> = uniform_init(&[4, 3], 0.5, 7, "enc.1.w");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|v| v.abs() < 0.5));
    }

    #[test]
    fn parameter_read_twice_gets_summed_gradient() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_param("w", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let mut ctx = Ctx::new(&mut s, Mode::Train);
        let a = ctx.param(id);
        let b = ctx.param(id);
        assert_eq!(a, b);
        let y = ctx.graph.mul(a, b).unwrap();
        let loss = ctx.graph.sum(y);
        ctx.backward(loss).unwrap();
        assert_eq!(s.get(id).grad.as_deref(), Some(&[2.0, -4.0, 1.0][..]));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add_param("w", Tensor::zeros(&[2])).unwrap();
        s.get_mut(id).grad = Some(vec![3.0, 4.0]);
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        let g = s.get(id).grad.clone().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
