//! Tape of recorded operations and the reverse sweep over it.
//!
//! Every operation appends one node holding its output value, the ids of its
//! inputs and whatever the backward rule needs. Inputs always precede their
//! consumers, so walking the node list backwards is a valid topological
//! order and visits each entry once.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::conv;
use super::linalg::{gemm_nn, gemm_nt, gemm_tn, ConvGeom};
use super::lstm::{self, LstmCache};
use super::norm;
use super::tensor::{split_at_axis, Tensor};
use crate::error::{contract_err, dim_err, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, a: S },
    ScaleBy { x: Var, s: Var },
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Softmax { x: Var, axis: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Deconv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm(norm::BnSaved<S>),
    Linear { x: Var, w: Var, b: Option<Var> },
    Lstm(LstmCache<S>),
    OverlapAdd { x: Var, hop: usize },
}

impl<S> Op<S> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::ScaleBy { .. } => "scale_by",
            Op::Elu(_) => "elu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Bmm { .. } => "matmul",
            Op::Softmax { .. } => "softmax",
            Op::Conv2d { .. } => "conv2d",
            Op::Deconv2d { .. } => "deconv2d",
            Op::BatchNorm(_) => "batchnorm2d",
            Op::Linear { .. } => "linear",
            Op::Lstm(_) => "lstm",
            Op::OverlapAdd { .. } => "overlap_add",
        }
    }
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) grad: Option<Vec<S>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<S>,
    label: Option<String>,
}

/// Where a non-finite value was first seen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NonFinite {
    pub node: usize,
    pub op: &'static str,
    pub label: Option<String>,
}

impl core::fmt::Display for NonFinite {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "node #{} ({})", self.node, self.op)?;
        if let Some(l) = &self.label {
            write!(f, " `{l}`")?;
        }
        Ok(())
    }
}

/// A recorded forward computation.
pub struct Graph<S> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding `value`; only leaves with `requires_grad` receive gradients.
    pub fn input(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.input(value, false)
    }

    /// Differentiable leaf carrying a name for diagnostics.
    pub fn named_leaf(&mut self, value: Tensor<S>, label: &str) -> Var {
        let v = self.input(value, true);
        self.nodes[v.0].label = Some(String::from(label));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn label(&self, v: Var) -> Option<&str> {
        self.nodes[v.0].label.as_deref()
    }

    /// Clears every accumulated gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// First node (in recording order) whose value has a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<NonFinite> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            (!n.value.is_finite()).then(|| NonFinite {
                node: i,
                op: n.op.kind(),
                label: n.label.clone(),
            })
        })
    }

    pub(crate) fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn any_rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.rg(v))
    }

    pub(crate) fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise -------------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |p, q| p + q);
        let rg = self.any_rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |p, q| p - q);
        let rg = self.any_rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |p, q| p * q);
        let rg = self.any_rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `a·x + b` with constant coefficients.
    pub fn affine(&mut self, x: Var, a: S, b: S) -> Var {
        let out = self.value(x).map(|v| a * v + b);
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, a }, rg)
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self
            .value(s)
            .item()
            .ok_or_else(|| dim_err!("scale_by: scale must hold one value, shape {:?}", self.shape(s)))?;
        let out = self.value(x).map(|v| sv * v);
        let rg = self.any_rg(&[x, s]);
        Ok(self.push(out, Op::ScaleBy { x, s }, rg))
    }

    /// Exponential linear unit with unit slope parameter.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > S::zero() { v } else { v.exp() - S::one() });
        let rg = self.rg(x);
        self.push(out, Op::Elu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    // ---- layout ------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(dim_err!("permute: {:?} is not a permutation of rank {}", perm, shape.len()));
        }
        let out = permute_tensor(self.value(x), perm);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| dim_err!("concat: no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_err!("concat: axis {axis} out of range for {:?}", base));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(dim_err!("concat along {axis}: {:?} vs {:?}", base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.data(v)[o * n..(o + 1) * n]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        let rg = self.any_rg(xs);
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// Sub-range `[start, start+len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(dim_err!("narrow: [{start}, {}) along axis {axis} of {:?}", start + len, shape));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Narrow { x, axis, start }, rg))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = S::of_usize(self.value(x).numel());
        let s: S = self.data(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    // ---- products ----------------------------------------------------------

    /// Matrix product of `a[M×K]` and `b[K×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(dim_err!("matmul: expected matrices, got {:?} × {:?}", self.shape(a), self.shape(b)));
        }
        self.bmm(a, b, false)
    }

    /// Batched matrix product over a shared leading axis. Rank-2 operands are
    /// a batch of one. With `trans_b`, `b` is stored as `[B×N×K]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let dims = bmm_dims(&sa, &sb, trans_b)
            .ok_or_else(|| dim_err!("matmul: incompatible shapes {:?} × {:?}{}", sa, sb, if trans_b { "ᵀ" } else { "" }))?;
        let BmmDims { batch, m, k, n } = dims;
        let mut out = vec![S::zero(); batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for bi in 0..batch {
            let (ab, bb) = (&da[bi * m * k..(bi + 1) * m * k], &db[bi * k * n..(bi + 1) * k * n]);
            let cb = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                gemm_nt(m, n, k, ab, bb, cb);
            } else {
                gemm_nn(m, n, k, ab, bb, cb);
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let out = Tensor::new(&shape, out)?;
        let rg = self.any_rg(&[a, b]);
        Ok(self.push(out, Op::Bmm { a, b, trans_b }, rg))
    }

    /// `x[.., K] · w[N×K]ᵀ (+ b[N])`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let k = *sx.last().ok_or_else(|| dim_err!("linear: rank-0 input"))?;
        if sw.len() != 2 || sw[1] != k {
            return Err(dim_err!("linear: input {:?} does not fit weight {:?}", sx, sw));
        }
        let n = sw[0];
        if let Some(b) = b {
            if self.value(b).numel() != n {
                return Err(dim_err!("linear: bias {:?} for {n} outputs", self.shape(b)));
            }
        }
        let rows = self.value(x).numel() / k;
        let mut out = vec![S::zero(); rows * n];
        if let Some(b) = b {
            let bias = self.data(b);
            for r in 0..rows {
                out[r * n..(r + 1) * n].copy_from_slice(bias);
            }
        }
        gemm_nt(rows, n, k, self.data(x), self.data(w), &mut out);
        let mut shape = sx;
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(&shape, out)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.any_rg(&ins);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err!("softmax: axis {axis} out of range for {:?}", shape));
        }
        let (outer, n, inner) = split_at_axis(&shape, axis);
        let src = self.data(x);
        if src.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::num_err!("softmax: non-finite input"));
        }
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mut mx = S::neg_infinity();
                for j in 0..n {
                    mx = mx.max(src[at(j)]);
                }
                let mut z = S::zero();
                for j in 0..n {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[at(j)] /= z;
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Overlap-adds frames `x[N×T×K]` (or `[T×K]`) with step `hop` into
    /// signals of length `(T−1)·hop + K`.
    pub fn overlap_add(&mut self, x: Var, hop: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (batch, t, k) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => return Err(dim_err!("overlap_add: expected [N×T×K] frames, got {:?}", s)),
        };
        if hop == 0 {
            return Err(contract_err!("overlap_add: hop must be positive"));
        }
        let len = (t - 1) * hop + k;
        let src = self.data(x);
        let mut out = vec![S::zero(); batch * len];
        for b in 0..batch {
            for f in 0..t {
                let frame = &src[(b * t + f) * k..(b * t + f + 1) * k];
                let dst = &mut out[b * len + f * hop..b * len + f * hop + k];
                for (o, &v) in dst.iter_mut().zip(frame) {
                    *o += v;
                }
            }
        }
        let shape = if s.len() == 2 { vec![len] } else { vec![batch, len] };
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::OverlapAdd { x, hop }, rg))
    }

    // ---- reverse sweep -----------------------------------------------------

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    /// Gradients add up across repeated uses of a node and across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        accumulate(&mut self.nodes[loss.0].grad, vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contribs = self.input_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dv) in contribs {
                accumulate(&mut self.nodes[v.0].grad, dv);
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &[S]) -> Vec<(Var, Vec<S>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut out: Vec<(Var, Vec<S>)> = Vec::new();
        let mut emit = |v: Var, f: &dyn Fn() -> Vec<S>| {
            if self.rg(v) {
                out.push((v, f()));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, &|| g.to_vec());
                emit(*b, &|| g.to_vec());
            }
            Op::Sub(a, b) => {
                emit(*a, &|| g.to_vec());
                emit(*b, &|| g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                emit(*a, &|| g.iter().zip(db).map(|(&p, &q)| p * q).collect());
                emit(*b, &|| g.iter().zip(da).map(|(&p, &q)| p * q).collect());
            }
            Op::Affine { x, a } => emit(*x, &|| g.iter().map(|&v| v * *a).collect()),
            Op::ScaleBy { x, s } => {
                let sv = self.data(*s)[0];
                emit(*x, &|| g.iter().map(|&v| v * sv).collect());
                emit(*s, &|| {
                    let d: S = g.iter().zip(self.data(*x)).map(|(&p, &q)| p * q).sum();
                    vec![d]
                });
            }
            Op::Elu(x) => emit(*x, &|| {
                g.iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > S::zero() { gv } else { gv * (yv + S::one()) })
                    .collect()
            }),
            Op::Sigmoid(x) => emit(*x, &|| {
                g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (S::one() - yv)).collect()
            }),
            Op::Tanh(x) => emit(*x, &|| {
                g.iter().zip(y).map(|(&gv, &yv)| gv * (S::one() - yv * yv)).collect()
            }),
            Op::Reshape(x) => emit(*x, &|| g.to_vec()),
            Op::Permute { x, perm } => emit(*x, &|| {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let gt = Tensor::new(node.value.shape(), g.to_vec()).expect("grad shape");
                permute_tensor(&gt, &inv).into_data()
            }),
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_at_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    emit(v, &|| {
                        let mut d = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            d.extend_from_slice(&g[base..base + n * inner]);
                        }
                        d
                    });
                    offset += n;
                }
            }
            Op::Narrow { x, axis, start } => emit(*x, &|| {
                let (outer, n, inner) = split_at_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![S::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                d
            }),
            Op::Sum(x) => emit(*x, &|| vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => emit(*x, &|| {
                let n = self.value(*x).numel();
                vec![g[0] / S::of_usize(n); n]
            }),
            Op::Bmm { a, b, trans_b } => {
                let BmmDims { batch, m, k, n } =
                    bmm_dims(self.shape(*a), self.shape(*b), *trans_b).expect("checked in forward");
                let (da, db) = (self.data(*a), self.data(*b));
                emit(*a, &|| {
                    let mut d = vec![S::zero(); batch * m * k];
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let bb = &db[bi * k * n..(bi + 1) * k * n];
                        let out = &mut d[bi * m * k..(bi + 1) * m * k];
                        if *trans_b {
                            gemm_nn(m, k, n, gb, bb, out);
                        } else {
                            gemm_nt(m, k, n, gb, bb, out);
                        }
                    }
                    d
                });
                emit(*b, &|| {
                    let mut d = vec![S::zero(); batch * k * n];
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let ab = &da[bi * m * k..(bi + 1) * m * k];
                        let out = &mut d[bi * k * n..(bi + 1) * k * n];
                        if *trans_b {
                            // b is [n×k]: db = gᵀ·a
                            gemm_tn(n, k, m, gb, ab, out);
                        } else {
                            gemm_tn(k, n, m, ab, gb, out);
                        }
                    }
                    d
                });
            }
            Op::Softmax { x, axis } => emit(*x, &|| {
                let (outer, n, inner) = split_at_axis(node.value.shape(), *axis);
                let mut d = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let s: S = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            d[at(j)] = y[at(j)] * (g[at(j)] - s);
                        }
                    }
                }
                d
            }),
            Op::Conv2d { x, w, b, geom } => {
                conv::conv2d_backward(self, *x, *w, *b, geom, node.value.shape(), g, &mut out)
            }
            Op::Deconv2d { x, w, b, geom } => {
                conv::deconv2d_backward(self, *x, *w, *b, geom, node.value.shape(), g, &mut out)
            }
            Op::BatchNorm(saved) => norm::batchnorm_backward(self, saved, g, &mut out),
            Op::Linear { x, w, b } => {
                let sw = self.shape(*w);
                let (k, n) = (sw[1], sw[0]);
                let rows = self.value(*x).numel() / k;
                emit(*x, &|| {
                    let mut d = vec![S::zero(); rows * k];
                    gemm_nn(rows, k, n, g, self.data(*w), &mut d);
                    d
                });
                emit(*w, &|| {
                    let mut d = vec![S::zero(); n * k];
                    gemm_tn(n, k, rows, g, self.data(*x), &mut d);
                    d
                });
                if let Some(b) = b {
                    emit(*b, &|| {
                        let mut d = vec![S::zero(); n];
                        for r in 0..rows {
                            for (dv, &gv) in d.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *dv += gv;
                            }
                        }
                        d
                    });
                }
            }
            Op::Lstm(cache) => lstm::lstm_backward(self, cache, y, g, &mut out),
            Op::OverlapAdd { x, hop } => emit(*x, &|| {
                let s = self.shape(*x);
                let (batch, t, k) = if s.len() == 2 { (1, s[0], s[1]) } else { (s[0], s[1], s[2]) };
                let len = (t - 1) * hop + k;
                let mut d = Vec::with_capacity(batch * t * k);
                for b in 0..batch {
                    for f in 0..t {
                        let at = b * len + f * hop;
                        d.extend_from_slice(&g[at..at + k]);
                    }
                }
                d
            }),
        }
        out
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, d: Vec<S>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        None => *slot = Some(d),
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

struct BmmDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

fn bmm_dims(sa: &[usize], sb: &[usize], trans_b: bool) -> Option<BmmDims> {
    let (batch, m, k, rest_b) = match (sa.len(), sb.len()) {
        (2, 2) => (1, sa[0], sa[1], (sb[0], sb[1])),
        (3, 3) if sa[0] == sb[0] => (sa[0], sa[1], sa[2], (sb[1], sb[2])),
        _ => return None,
    };
    let (kb, n) = if trans_b { (rest_b.1, rest_b.0) } else { rest_b };
    (kb == k).then_some(BmmDims { batch, m, k, n })
}

fn permute_tensor<S: Scalar>(t: &Tensor<S>, perm: &[usize]) -> Tensor<S> {
    let shape = t.shape();
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = t.data();
    let mut data = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..src.len() {
        data.push(src[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, data).expect("permutation preserves size")
}
