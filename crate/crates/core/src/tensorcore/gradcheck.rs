//! Central finite-difference checks of reverse-mode gradients.

use alloc::string::String;
use alloc::vec::Vec;

use super::graph::{Graph, Var};
use super::params::{Ctx, Mode, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{contract_err, Result};

/// Denominator floor for relative errors. Gradients below it are compared
/// absolutely: a central difference in f64 carries a rounding error near
/// `ε·|L|/h`, which for losses of order 0.1 and `h` around 1e-5 is already
/// a sizable fraction of a 1e-8 gradient.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.rel_error <= self.tol)
    }

    /// Largest relative error among samples whose name starts with `prefix`.
    pub fn max_rel_error_for(&self, prefix: &str) -> Option<f64> {
        self.samples
            .iter()
            .filter(|s| s.name.starts_with(prefix))
            .map(|s| s.rel_error)
            .reduce(f64::max)
    }
}

/// Checks every coordinate of `x` for a scalar function built on a fresh
/// graph.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(t, false);
        let y = f(&mut g, v)?;
        scalar_of(&g, y)
    };
    let mut g = Graph::new();
    let v = g.input(x.clone(), true);
    let y = f(&mut g, v)?;
    scalar_of(&g, y)?;
    g.backward(y)?;
    let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; x.numel()]);
    let mut samples = Vec::with_capacity(x.numel());
    for (i, &a) in analytic.iter().enumerate() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let numeric = (eval(xp)? - eval(xm)?) / (2.0 * h);
        samples.push(GradSample {
            name: String::from("x"),
            index: i,
            analytic: a,
            numeric,
            rel_error: rel_error(a, numeric),
        });
    }
    Ok(GradCheckReport { samples, tol })
}

/// Checks chosen coordinates of stored parameters. Stored buffers are
/// restored after every evaluation, so training-mode batchnorm does not drift
/// between the perturbed passes.
pub fn grad_check_store<F>(
    store: &mut ParamStore<f64>,
    coords: &[(ParamId, usize)],
    mode: Mode,
    h: f64,
    tol: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let snapshot: Vec<Tensor<f64>> = store.entries().iter().map(|e| e.value.clone()).collect();
    let restore_buffers = |s: &mut ParamStore<f64>| {
        for (e, v) in s.entries_mut().iter_mut().zip(&snapshot) {
            if !e.trainable {
                e.value = v.clone();
            }
        }
    };
    store.zero_grad();
    {
        let mut ctx = Ctx::new(store, mode);
        let y = f(&mut ctx)?;
        scalar_of(&ctx.graph, y)?;
        ctx.backward(y)?;
    }
    restore_buffers(store);
    let mut samples = Vec::with_capacity(coords.len());
    for &(id, i) in coords {
        let e = store.get(id);
        if i >= e.value.numel() {
            return Err(contract_err!("gradcheck: index {i} out of range for `{}`", e.name));
        }
        let analytic = e.grad.as_ref().map_or(0.0, |g| g[i]);
        let name = e.name.clone();
        let orig = e.value.data()[i];
        let mut side = |delta: f64, s: &mut ParamStore<f64>| -> Result<f64> {
            s.get_mut(id).value.data_mut()[i] = orig + delta;
            let mut ctx = Ctx::new(s, mode);
            let y = f(&mut ctx)?;
            let v = scalar_of(&ctx.graph, y);
            drop(ctx);
            restore_buffers(s);
            v
        };
        let plus = side(h, store)?;
        let minus = side(-h, store)?;
        store.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        samples.push(GradSample {
            name,
            index: i,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { samples, tol })
}

fn scalar_of(g: &Graph<f64>, y: Var) -> Result<f64> {
    let v = g.value(y);
    if v.numel() != 1 {
        return Err(contract_err!("gradcheck: function must return a scalar, got shape {:?}", v.shape()));
    }
    Ok(v.data()[0])
}
