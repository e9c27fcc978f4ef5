//! Finite-difference verification of every differentiable operator, the
//! composed GLD block and a sample of the tiny network's parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use gldnet_core::gld::{gld_block_forward, BlockVariant, GldBlockParams, GldOptions};
use gldnet_core::network::{gldnet_forward, GldNet, ModelConfig, UP};
use gldnet_core::rng::derive_seed;
use gldnet_core::tensorcore::gradcheck::{grad_check_store, GradCheckReport};
use gldnet_core::tensorcore::{uniform_init, ConvGeom, Ctx, LstmLayerVars, Mode, ParamId, ParamStore, Tensor, Var};
use gldnet_core::trainer::mse_loss;
use gldnet_core::Result;

pub const DEFAULT_TOL: f64 = 1e-4;
/// Finite-difference step for single ops.
pub const STEP: f64 = 1e-6;
/// The block's gradients are around 1e-4, small enough for rounding at a
/// 1e-6 step to show.
pub const BLOCK_STEP: f64 = 1e-5;
/// Larger steps cross ELU kinks, where the second derivative jumps and
/// the central difference picks up an error linear in `h`.
pub const NET_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub tol: f64,
    pub ops: bool,
    pub gld_block: bool,
    pub network: bool,
    /// Coordinates sampled per network parameter tensor.
    pub net_coords_per_tensor: usize,
    pub block_step: f64,
    pub net_step: f64,
    pub model: ModelConfig,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            tol: DEFAULT_TOL,
            ops: true,
            gld_block: true,
            network: true,
            net_coords_per_tensor: 2,
            block_step: BLOCK_STEP,
            net_step: NET_STEP,
            model: ModelConfig::tiny(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub components: Vec<Component>,
    pub tol: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.report.passed())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.components.iter().map(|c| c.report.max_rel_error()).fold(0.0, f64::max)
    }

    /// Largest error per parameter group (the tensor name without its
    /// final `.w`, `.b`, `.bn.*` style suffix).
    pub fn groups(&self) -> BTreeMap<String, (f64, usize)> {
        let mut g: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for c in &self.components {
            for s in &c.report.samples {
                let e = g.entry(format!("{}/{}", c.name, group_of(&s.name))).or_insert((0.0, 0));
                e.0 = e.0.max(s.rel_error);
                e.1 += 1;
            }
        }
        g
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<40} {:>8} {:>12}  status", "component", "samples", "max rel err");
        for c in &self.components {
            let status = if c.report.passed() { "ok" } else { "FAIL" };
            let _ = writeln!(s, "{:<40} {:>8} {:>12.3e}  {status}", c.name, c.report.samples.len(), c.report.max_rel_error());
        }
        let _ = writeln!(s, "\n{:<40} {:>8} {:>12}", "parameter group", "samples", "max rel err");
        for (name, (err, n)) in self.groups() {
            let _ = writeln!(s, "{name:<40} {n:>8} {err:>12.3e}");
        }
        let _ = writeln!(s, "\nmax relative error {:.3e} (tolerance {:.1e})", self.max_rel_error(), self.tol);
        s
    }
}

fn group_of(name: &str) -> &str {
    if let Some(i) = name.find(".bn.") {
        return &name[..i];
    }
    match name.rsplit_once('.') {
        Some((head, last)) if matches!(last, "w" | "b" | "w_ih" | "w_hh") => head,
        _ => name,
    }
}

/// `Σ r ⊙ y` with a fixed random `r`, so every output coordinate matters.
fn probe<'a>(ctx: &mut Ctx<'a, f64>, y: Var, seed: u64) -> Result<Var> {
    let r = uniform_init::<f64>(ctx.graph.shape(y), 1.0, seed, "probe");
    let r = ctx.graph.constant(r);
    let p = ctx.graph.mul(y, r)?;
    Ok(ctx.graph.sum(p))
}

fn all_coords(store: &ParamStore<f64>) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .filter(|&id| store.get(id).trainable)
        .flat_map(|id| (0..store.get(id).value.numel()).map(move |i| (id, i)))
        .collect()
}

fn sampled_coords(store: &ParamStore<f64>, per_tensor: usize, seed: u64) -> Vec<(ParamId, usize)> {
    store
        .ids()
        .filter(|&id| store.get(id).trainable)
        .flat_map(|id| {
            let n = store.get(id).value.numel();
            let picks: Vec<usize> = if n <= per_tensor {
                (0..n).collect()
            } else {
                let name = &store.get(id).name;
                (0..per_tensor).map(|k| (derive_seed(seed, &format!("{name}#{k}")) % n as u64) as usize).collect()
            };
            picks.into_iter().map(move |i| (id, i))
        })
        .collect()
}

fn rand_param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], seed: u64) -> Result<ParamId> {
    store.add_param(name, uniform_init(shape, 1.0, seed, name))
}

fn check(name: &str, store: &mut ParamStore<f64>, mode: Mode, tol: f64, f: impl FnMut(&mut Ctx<'_, f64>) -> Result<Var>) -> Result<Component> {
    let coords = all_coords(store);
    Ok(Component { name: name.into(), report: grad_check_store(store, &coords, mode, STEP, tol, f)? })
}

/// Each operator on small random operands, differentiating every input.
pub fn op_components(seed: u64, tol: f64) -> Result<Vec<Component>> {
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let a = rand_param(&mut s, "matmul.a", &[3, 4], seed)?;
    let b = rand_param(&mut s, "matmul.b", &[4, 5], seed)?;
    out.push(check("op.matmul", &mut s, Mode::Train, tol, |c| {
        let (a, b) = (c.param(a), c.param(b));
        let y = c.graph.matmul(a, b)?;
        probe(c, y, seed)
    })?);

    for axis in [0usize, 1] {
        let mut s = ParamStore::new();
        let x = rand_param(&mut s, "softmax.x", &[3, 5], seed)?;
        out.push(check(&format!("op.softmax.axis{axis}"), &mut s, Mode::Train, tol, |c| {
            let x = c.param(x);
            let y = c.graph.softmax(x, axis)?;
            probe(c, y, seed)
        })?);
    }

    let strided = ConvGeom { stride: (1, 2), padding: (1, 1), dilation: (1, 1), output_padding: (0, 0) };
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "conv2d.x", &[2, 3, 5, 6], seed)?;
    let w = rand_param(&mut s, "conv2d.w", &[4, 3, 3, 3], seed)?;
    let b = rand_param(&mut s, "conv2d.b", &[4], seed)?;
    out.push(check("op.conv2d", &mut s, Mode::Train, tol, |c| {
        let (x, w, b) = (c.param(x), c.param(w), c.param(b));
        let y = c.graph.conv2d(x, w, Some(b), strided)?;
        probe(c, y, seed)
    })?);

    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "deconv2d.x", &[2, 3, 4, 3], seed)?;
    let w = rand_param(&mut s, "deconv2d.w", &[3, 4, 3, 3], seed)?;
    let b = rand_param(&mut s, "deconv2d.b", &[4], seed)?;
    out.push(check("op.deconv2d", &mut s, Mode::Train, tol, |c| {
        let (x, w, b) = (c.param(x), c.param(w), c.param(b));
        let y = c.graph.deconv2d(x, w, Some(b), UP)?;
        probe(c, y, seed)
    })?);

    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "batchnorm.x", &[3, 2, 4, 5], seed)?;
    let g = rand_param(&mut s, "batchnorm.gamma", &[2], seed)?;
    let bt = rand_param(&mut s, "batchnorm.beta", &[2], seed)?;
    let m = s.add_buffer("batchnorm.mean", Tensor::zeros(&[2]))?;
    let v = s.add_buffer("batchnorm.var", Tensor::full(&[2], 1.0))?;
    out.push(check("op.batchnorm", &mut s, Mode::Train, tol, |c| {
        let x = c.param(x);
        let y = c.batchnorm(x, g, bt, m, v)?;
        probe(c, y, seed)
    })?);

    for kind in ["elu", "sigmoid", "tanh"] {
        let mut s = ParamStore::new();
        let x = s.add_param(&format!("{kind}.x"), uniform_init(&[24], 3.0, seed, kind))?;
        out.push(check(&format!("op.{kind}"), &mut s, Mode::Train, tol, |c| {
            let x = c.param(x);
            let y = match kind {
                "elu" => c.graph.elu(x),
                "sigmoid" => c.graph.sigmoid(x),
                _ => c.graph.tanh(x),
            };
            probe(c, y, seed)
        })?);
    }

    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "lstm.x", &[2, 4, 3], seed)?;
    let mut layers = Vec::new();
    for (l, d) in [3usize, 4].into_iter().enumerate() {
        let h = 4;
        layers.push((
            rand_param(&mut s, &format!("lstm.{l}.w_ih"), &[4 * h, d], seed)?,
            rand_param(&mut s, &format!("lstm.{l}.w_hh"), &[4 * h, h], seed)?,
            rand_param(&mut s, &format!("lstm.{l}.b"), &[4 * h], seed)?,
        ));
    }
    out.push(check("op.lstm", &mut s, Mode::Train, tol, |c| {
        let x = c.param(x);
        let vars: Vec<LstmLayerVars> =
            layers.iter().map(|&(i, h, b)| LstmLayerVars { w_ih: c.param(i), w_hh: c.param(h), bias: c.param(b) }).collect();
        let y = c.graph.lstm_forward(x, &vars)?;
        probe(c, y, seed)
    })?);

    let mut s = ParamStore::new();
    let fr = rand_param(&mut s, "wave_decoder.frames", &[2, 4, 6], seed)?;
    let w = rand_param(&mut s, "wave_decoder.w", &[6, 8], seed)?;
    out.push(check("op.wave_decoder", &mut s, Mode::Train, tol, |c| {
        let (fr, w) = (c.param(fr), c.param(w));
        let y = c.graph.learnable_decoder(fr, w, 4)?;
        probe(c, y, seed)
    })?);

    let mut s = ParamStore::new();
    let p = rand_param(&mut s, "mse.pred", &[2, 7], seed)?;
    let t = uniform_init::<f64>(&[2, 7], 1.0, seed, "mse.target");
    out.push(check("op.mse", &mut s, Mode::Train, tol, |c| {
        let p = c.param(p);
        let t = c.graph.constant(t.clone());
        mse_loss(&mut c.graph, p, t)
    })?);

    Ok(out)
}

/// The composed block on a `[4×8×8]` input, with `α` and `β` moved off
/// zero so every path carries gradient.
pub fn gld_block_component(seed: u64, tol: f64, h: f64, variant: BlockVariant, opts: GldOptions) -> Result<Component> {
    let mut s = ParamStore::new();
    let x = s.add_param("gld.input", uniform_init(&[4, 8, 8], 1.0, seed, "gld.input"))?;
    let p = GldBlockParams::register(&mut s, seed, "gld", 4, 4, 4)?;
    s.get_mut(p.alpha).value = Tensor::scalar(0.7);
    s.get_mut(p.beta).value = Tensor::scalar(-0.6);
    let name = match variant {
        BlockVariant::Speech => "gld_block.speech",
        BlockVariant::Interference => "gld_block.interference",
    };
    let coords = all_coords(&s);
    let report = grad_check_store(&mut s, &coords, Mode::Train, h, tol, |c| {
        let x = c.param(x);
        let tr = gld_block_forward(c, x, &p, variant, &opts)?;
        probe(c, tr.out, seed)
    })?;
    Ok(Component { name: name.into(), report })
}

/// MSE of the network on a random two-item batch, at sampled coordinates
/// of every parameter tensor.
pub fn network_component(seed: u64, tol: f64, h: f64, cfg: &ModelConfig, per_tensor: usize) -> Result<Component> {
    let mut net = GldNet::<f64>::new(cfg.clone(), seed)?;
    for (i, l) in net.params.encoder.iter().enumerate() {
        for (k, b) in [l.gld_sb, l.gld_ib].into_iter().flatten().enumerate() {
            let v = 0.3 + 0.1 * (i + k) as f64;
            net.store.get_mut(b.alpha).value = Tensor::scalar(v);
            net.store.get_mut(b.beta).value = Tensor::scalar(-v);
        }
    }
    let len = cfg.stft.win_len + 4 * cfg.stft.hop;
    let noisy = uniform_init::<f64>(&[2, len], 0.5, seed, "net.noisy");
    let target = uniform_init::<f64>(&[2, len], 0.5, seed, "net.target");
    let coords = sampled_coords(&net.store, per_tensor, seed);
    let (params, mcfg) = (net.params.clone(), net.cfg.clone());
    let report = grad_check_store(&mut net.store, &coords, Mode::Train, h, tol, |c| {
        let tr = gldnet_forward(c, &params, &mcfg, &noisy)?;
        let t = c.graph.constant(target.clone());
        mse_loss(&mut c.graph, tr.wave, t)
    })?;
    Ok(Component { name: "network".into(), report })
}

pub fn run_suite(o: &SuiteOptions) -> Result<SuiteReport> {
    let mut components = Vec::new();
    if o.ops {
        components.extend(op_components(o.seed, o.tol)?);
    }
    if o.gld_block {
        for v in [BlockVariant::Speech, BlockVariant::Interference] {
            components.push(gld_block_component(o.seed, o.tol, o.block_step, v, o.model.gld)?);
        }
    }
    if o.network {
        components.push(network_component(o.seed, o.tol, o.net_step, &o.model, o.net_coords_per_tensor)?);
    }
    Ok(SuiteReport { components, tol: o.tol })
}
