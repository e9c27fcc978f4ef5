//! Global-local dependency (GLD) block.
//!
//! The global part is channel self-attention over flattened `T·F`
//! descriptors of two convolutional maps `K`, `V`, scaled by a learned `α`.
//! The local part builds a sigmoid mask `P` from `E` and `K`, gates a feature
//! map with it, and attends the gated map against the global output, scaled
//! by `β`. A transposed-convolution block maps the result to the output.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensorcore::{ConvBlock, Ctx, ParamId, ParamStore, Tensor, Var};

/// Which branch a block serves; selects the gated feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockVariant {
    /// `Q = R ⊙ P`.
    Speech,
    /// `Q = (1 − P) ⊙ E`.
    Interference,
}

/// Switches between the default block and its literal/alternative forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GldOptions {
    /// Aggregate as `Σ_i x_ji·V_j` (and `Σ_i y_ji·G_j`), which collapses to
    /// `α·V_j` (`β·G_j`), instead of `Σ_i x_ji·V_i`.
    pub literal_aggregation: bool,
    /// Gate `E` rather than `R` in the speech variant, mirroring the
    /// interference variant.
    pub symmetric_mask: bool,
    /// Divide attention logits by `√(T·F)`.
    pub attention_scale: bool,
}

impl Default for GldOptions {
    fn default() -> Self {
        Self {
            literal_aggregation: false,
            symmetric_mask: false,
            attention_scale: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GldBlockParams {
    pub k: ConvBlock,
    pub v: ConvBlock,
    pub e: ConvBlock,
    pub w_g: ConvBlock,
    pub w_x: ConvBlock,
    /// Transposed-convolution block producing the mask logits.
    pub w_f: ConvBlock,
    pub alpha: ParamId,
    pub beta: ParamId,
    /// Transposed-convolution block producing `F_out`.
    pub out: ConvBlock,
}

impl GldBlockParams {
    /// Registers a block reading `c_in` channels, attending over `c`
    /// channels and emitting `c_out`.
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        seed: u64,
        prefix: &str,
        c_in: usize,
        c: usize,
        c_out: usize,
    ) -> Result<Self> {
        let n = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            k: ConvBlock::same(store, seed, &n("k"), c_in, c)?,
            v: ConvBlock::same(store, seed, &n("v"), c_in, c)?,
            e: ConvBlock::same(store, seed, &n("e"), c_in, c)?,
            w_g: ConvBlock::same(store, seed, &n("w_g"), c, c)?,
            w_x: ConvBlock::same(store, seed, &n("w_x"), c, c)?,
            w_f: ConvBlock::same_transposed(store, seed, &n("w_f"), c, c)?,
            alpha: store.add_param(&n("alpha"), Tensor::zeros(&[1]))?,
            beta: store.add_param(&n("beta"), Tensor::zeros(&[1]))?,
            out: ConvBlock::same_transposed(store, seed, &n("out"), c, c_out)?,
        })
    }
}

/// Attention map and aggregated output of one attention stage.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// `[N×C×C]` (or `[C×C]`), row `j` is a distribution over `i`.
    pub map: Var,
    /// Same shape as the aggregated operand.
    pub out: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalDependency {
    pub k: Var,
    pub v: Var,
    /// `X`, rows indexed by `j`.
    pub x: Var,
    pub g: Var,
}

/// Every intermediate of one block evaluation.
#[derive(Clone, Copy, Debug)]
pub struct GldTrace {
    pub k: Var,
    pub v: Var,
    pub e: Var,
    pub x: Var,
    pub g: Var,
    pub r: Var,
    pub p: Var,
    pub q: Var,
    pub y: Var,
    pub l: Var,
    pub out: Var,
}

/// `[N, C, T·F]` view of a `[C×T×F]` or `[N×C×T×F]` map.
fn descriptors<S: Scalar>(ctx: &mut Ctx<'_, S>, x: Var) -> Result<(Var, usize)> {
    let s = ctx.graph.shape(x).to_vec();
    let (n, c, tf) = match *s {
        [c, t, f] => (1, c, t * f),
        [n, c, t, f] => (n, c, t * f),
        _ => return Err(dim_err!("gld: expected [C×T×F] or [N×C×T×F] feature map, got {:?}", s)),
    };
    Ok((ctx.graph.reshape(x, &[n, c, tf])?, tf))
}

fn strip_batch<S: Scalar>(ctx: &mut Ctx<'_, S>, m: Var, like: Var) -> Result<Var> {
    if ctx.graph.shape(like).len() == 3 {
        let c = ctx.graph.shape(m)[1];
        ctx.graph.reshape(m, &[c, c])
    } else {
        Ok(m)
    }
}

/// Channel attention: `map[j,i] = softmax_i(⟨cols_i, rows_j⟩)` and
/// `out_j = weight·Σ_i map[j,i]·rows_i`.
pub fn channel_attention<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    rows: Var,
    cols: Var,
    weight: Var,
    opts: &GldOptions,
) -> Result<Attention> {
    let shape = ctx.graph.shape(rows).to_vec();
    if ctx.graph.shape(cols) != &shape[..] {
        return Err(dim_err!("gld attention: operands {:?} and {:?} differ", shape, ctx.graph.shape(cols)));
    }
    let (r, tf) = descriptors(ctx, rows)?;
    let (c_, _) = descriptors(ctx, cols)?;
    let mut logits = ctx.graph.bmm(r, c_, true)?;
    if opts.attention_scale {
        logits = ctx.graph.affine(logits, S::one() / S::of_usize(tf).sqrt(), S::zero());
    }
    let map = ctx.graph.softmax(logits, 2)?;
    let agg = if opts.literal_aggregation {
        // Σ_i map[j,i] · rows_j: the row sums on a diagonal.
        let dims = ctx.graph.shape(map).to_vec();
        let (n, c) = (dims[0], dims[1]);
        let ones = ctx.graph.constant(Tensor::full(&[n, c, c], S::one()));
        let eye = ctx.graph.constant(Tensor::from_fn(&[n, c, c], |i| {
            if (i % (c * c)) / c == i % c { S::one() } else { S::zero() }
        }));
        let sums = ctx.graph.bmm(map, ones, false)?;
        let diag = ctx.graph.mul(sums, eye)?;
        ctx.graph.bmm(diag, r, false)?
    } else {
        ctx.graph.bmm(map, r, false)?
    };
    let agg = ctx.graph.reshape(agg, &shape)?;
    let out = ctx.graph.scale_by(agg, weight)?;
    let map = strip_batch(ctx, map, rows)?;
    Ok(Attention { map, out })
}

/// `K`, `V` by convolution blocks, `X = softmax(V·Kᵀ)` and `G = α·X·V`.
pub fn global_dependency<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    f_in: Var,
    p: &GldBlockParams,
    opts: &GldOptions,
) -> Result<GlobalDependency> {
    let k = p.k.forward(ctx, f_in)?;
    let v = p.v.forward(ctx, f_in)?;
    let alpha = ctx.param(p.alpha);
    let a = channel_attention(ctx, v, k, alpha, opts)?;
    Ok(GlobalDependency { k, v, x: a.map, g: a.out })
}

/// `R = σ(W_g·E + W_x·K)` and `P = σ(W_f·R)`; returns `(R, P)`.
pub fn local_attention<S: Scalar>(ctx: &mut Ctx<'_, S>, e: Var, k: Var, p: &GldBlockParams) -> Result<(Var, Var)> {
    if ctx.graph.shape(e) != ctx.graph.shape(k) {
        return Err(dim_err!("local attention: E {:?} and K {:?} differ", ctx.graph.shape(e), ctx.graph.shape(k)));
    }
    let ge = p.w_g.forward(ctx, e)?;
    let xk = p.w_x.forward(ctx, k)?;
    let s = ctx.graph.add(ge, xk)?;
    let r = ctx.graph.sigmoid(s);
    let f = p.w_f.forward(ctx, r)?;
    let mask = ctx.graph.sigmoid(f);
    Ok((r, mask))
}

/// Masked feature for the given branch.
pub fn gated_feature<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    e: Var,
    r: Var,
    mask: Var,
    variant: BlockVariant,
    opts: &GldOptions,
) -> Result<Var> {
    match variant {
        BlockVariant::Speech => {
            let operand = if opts.symmetric_mask { e } else { r };
            ctx.graph.mul(operand, mask)
        }
        BlockVariant::Interference => {
            let inv = ctx.graph.affine(mask, -S::one(), S::one());
            ctx.graph.mul(inv, e)
        }
    }
}

/// `Y = softmax(G·Qᵀ)` and `L = β·Y·G`.
pub fn local_dependency<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    q: Var,
    g: Var,
    p: &GldBlockParams,
    opts: &GldOptions,
) -> Result<Attention> {
    let beta = ctx.param(p.beta);
    channel_attention(ctx, g, q, beta, opts)
}

/// Full block: global part, local attention, gating, local part, output
/// transposed-convolution block.
pub fn gld_block_forward<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    f_in: Var,
    p: &GldBlockParams,
    variant: BlockVariant,
    opts: &GldOptions,
) -> Result<GldTrace> {
    let gd = global_dependency(ctx, f_in, p, opts)?;
    let e = p.e.forward(ctx, f_in)?;
    let (r, mask) = local_attention(ctx, e, gd.k, p)?;
    let q = gated_feature(ctx, e, r, mask, variant, opts)?;
    let ld = local_dependency(ctx, q, gd.g, p, opts)?;
    let out = p.out.forward(ctx, ld.out)?;
    Ok(GldTrace {
        k: gd.k,
        v: gd.v,
        e,
        x: gd.x,
        g: gd.g,
        r,
        p: mask,
        q,
        y: ld.map,
        l: ld.out,
        out,
    })
}

/// Row sums of an attention map, for diagnostics and tests.
pub fn row_sums<S: Scalar>(map: &Tensor<S>) -> Vec<f64> {
    let c = *map.shape().last().unwrap();
    map.data().chunks_exact(c).map(|r| r.iter().map(|v| v.f64()).sum()).collect()
}
