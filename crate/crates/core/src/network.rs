//! GLD layers, the encoder/bottleneck/decoder U-Net and the full
//! waveform-to-waveform forward pass.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, dim_err, Result};
use crate::gld::{gld_block_forward, BlockVariant, GldBlockParams, GldOptions};
use crate::scalar::Scalar;
use crate::signal::{istft_kernel, stft, StftConfig};
use crate::tensorcore::{
    uniform_init, Conv, ConvBlock, ConvGeom, Ctx, LstmLayerVars, Mode, ParamId, ParamStore, Tensor, Var,
};

/// Initial state of the learnable waveform decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderInit {
    Random,
    /// Inverse-STFT synthesis kernel; needs the real/imaginary head.
    Istft,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stft: StftConfig,
    /// Output channels of each GLD layer.
    pub enc_channels: Vec<usize>,
    /// Output channels of each decoder layer; the last entry is the head
    /// width (1, or 2 with `ri_head`).
    pub dec_channels: Vec<usize>,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub enable_sb: bool,
    pub enable_ib: bool,
    pub gld: GldOptions,
    /// Convolution blocks producing a layer's intermediate feature.
    pub intermediate_blocks: usize,
    /// Emit real/imaginary planes and decode `2·F` features per frame.
    pub ri_head: bool,
    pub decoder_init: DecoderInit,
}

impl ModelConfig {
    /// 512/256 framing, channels 16…256 and 128…1, LSTM width 512.
    pub fn full() -> Self {
        Self {
            stft: StftConfig::full(),
            enc_channels: vec![16, 32, 64, 128, 256],
            dec_channels: vec![128, 64, 32, 16, 1],
            lstm_layers: 2,
            lstm_hidden: 512,
            enable_sb: true,
            enable_ib: true,
            gld: GldOptions::default(),
            intermediate_blocks: 2,
            ri_head: false,
            decoder_init: DecoderInit::Random,
        }
    }

    /// 128/64 framing, channels 4,8,8,16,16 and 8,8,4,4,1, LSTM width 32.
    pub fn tiny() -> Self {
        Self {
            stft: StftConfig::tiny(),
            enc_channels: vec![4, 8, 8, 16, 16],
            dec_channels: vec![8, 8, 4, 4, 1],
            lstm_hidden: 32,
            ..Self::full()
        }
    }

    /// Switches to the real/imaginary head, adjusting the head width.
    pub fn with_ri_head(mut self, on: bool) -> Self {
        self.ri_head = on;
        if let Some(last) = self.dec_channels.last_mut() {
            *last = if on { 2 } else { 1 };
        }
        self
    }

    /// Frequency bins seen by the network (Nyquist bin dropped).
    pub fn f_in(&self) -> usize {
        self.stft.fft_size / 2
    }

    /// Per-frame feature width fed to the waveform decoder.
    pub fn frame_dim(&self) -> usize {
        self.f_in() * self.head_channels()
    }

    pub fn head_channels(&self) -> usize {
        if self.ri_head { 2 } else { 1 }
    }

    /// Frequency extent at the bottleneck.
    pub fn bottleneck_bins(&self) -> usize {
        self.f_in() >> self.enc_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.enc_channels.len();
        if depth == 0 || depth != self.dec_channels.len() {
            return Err(contract_err!(
                "model: encoder {:?} and decoder {:?} schedules must be non-empty and of equal length",
                self.enc_channels,
                self.dec_channels
            ));
        }
        if self.enc_channels.iter().chain(&self.dec_channels).any(|&c| c == 0) {
            return Err(contract_err!("model: channel counts must be positive"));
        }
        let f = self.f_in();
        if f % (1 << depth) != 0 {
            return Err(contract_err!("model: {f} bins cannot be halved {depth} times"));
        }
        if self.dec_channels[depth - 1] != self.head_channels() {
            return Err(contract_err!(
                "model: last decoder width {} does not match the {} head",
                self.dec_channels[depth - 1],
                if self.ri_head { "2-channel RI" } else { "1-channel" }
            ));
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return Err(contract_err!("model: LSTM needs at least one layer of positive width"));
        }
        if self.decoder_init == DecoderInit::Istft && !self.ri_head {
            return Err(contract_err!("model: inverse-STFT decoder init needs the RI head"));
        }
        Ok(())
    }
}

/// Parameters of one GLD layer. Disabled branches hold `None`.
#[derive(Clone, Debug)]
pub struct GldLayerParams {
    pub sb: Option<ConvBlock>,
    pub nb: Option<ConvBlock>,
    pub ib: Option<ConvBlock>,
    pub gld_sb: Option<GldBlockParams>,
    pub gld_ib: Option<GldBlockParams>,
    pub fuse_sb: Option<ConvBlock>,
    pub fuse_ib: Option<ConvBlock>,
    pub intermediate: Vec<ConvBlock>,
    pub confidence: Option<ConvBlock>,
    /// Stride-(1,2) block closing the layer.
    pub down: ConvBlock,
}

/// Down-sampling geometry: 3×3, stride (1,2), padding 1.
pub const DOWN: ConvGeom = ConvGeom {
    stride: (1, 2),
    padding: (1, 1),
    dilation: (1, 1),
    output_padding: (0, 0),
};

/// Up-sampling geometry, the transpose of [`DOWN`] for even extents.
pub const UP: ConvGeom = ConvGeom {
    stride: (1, 2),
    padding: (1, 1),
    dilation: (1, 1),
    output_padding: (0, 1),
};

impl GldLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        seed: u64,
        prefix: &str,
        c_in: usize,
        c: usize,
        enable_sb: bool,
        enable_ib: bool,
        intermediate_blocks: usize,
    ) -> Result<Self> {
        let n = |s: &str| format!("{prefix}.{s}");
        let any = enable_sb || enable_ib;
        let sb = enable_sb.then(|| ConvBlock::same(store, seed, &n("sb"), c_in, c)).transpose()?;
        let nb = any.then(|| ConvBlock::same(store, seed, &n("nb"), c_in, c)).transpose()?;
        let ib = enable_ib.then(|| ConvBlock::same(store, seed, &n("ib"), c_in, c)).transpose()?;
        let gld_sb = enable_sb.then(|| GldBlockParams::register(store, seed, &n("gld_sb"), c, c, c)).transpose()?;
        let gld_ib = enable_ib.then(|| GldBlockParams::register(store, seed, &n("gld_ib"), c, c, c)).transpose()?;
        let fuse_sb = enable_sb.then(|| ConvBlock::same(store, seed, &n("fuse_sb"), 2 * c, c)).transpose()?;
        let fuse_ib = enable_ib.then(|| ConvBlock::same(store, seed, &n("fuse_ib"), 2 * c, c)).transpose()?;
        let mut intermediate = Vec::with_capacity(intermediate_blocks);
        for i in 0..intermediate_blocks {
            let cin = if i == 0 { c_in } else { c };
            intermediate.push(ConvBlock::same(store, seed, &n(&format!("inter.{i}")), cin, c)?);
        }
        let inter_c = if intermediate_blocks == 0 { c_in } else { c };
        let conf_in = inter_c + if enable_sb { c } else { 0 } + c;
        let confidence = any.then(|| ConvBlock::same(store, seed, &n("conf"), conf_in, c)).transpose()?;
        let down_in = if any { c } else { inter_c };
        let down = ConvBlock::register(store, seed, &n("down"), down_in, c, (3, 3), DOWN, false)?;
        Ok(Self { sb, nb, ib, gld_sb, gld_ib, fuse_sb, fuse_ib, intermediate, confidence, down })
    }
}

/// Intermediate values of one GLD layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    /// Local-global dependency gate, absent when both branches are disabled.
    pub gate: Option<Var>,
    /// Gated confidence feature before down-sampling.
    pub pre_down: Var,
    pub out: Var,
}

/// One GLD layer: `[N×C×T×F] → [N×C'×T×F/2]`.
pub fn gld_layer_forward<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    x: Var,
    p: &GldLayerParams,
    opts: &GldOptions,
) -> Result<LayerTrace> {
    let mut inter = x;
    for b in &p.intermediate {
        inter = b.forward(ctx, inter)?;
    }
    let branch = |ctx: &mut Ctx<'_, S>,
                  name: &str,
                  feat: &Option<ConvBlock>,
                  blk: &Option<GldBlockParams>,
                  fuse: &Option<ConvBlock>,
                  variant: BlockVariant|
     -> Result<Option<(Var, Var)>> {
        let (Some(feat), Some(blk), Some(fuse)) = (feat, blk, fuse) else {
            return Ok(None);
        };
        let f = feat.forward(ctx, x)?;
        let g = gld_block_forward(ctx, f, blk, variant, opts)?.out;
        if ctx.graph.shape(g) != ctx.graph.shape(f) {
            return Err(dim_err!(
                "{name} branch: block output {:?} does not match branch feature {:?}",
                ctx.graph.shape(g),
                ctx.graph.shape(f)
            ));
        }
        let cat = ctx.graph.concat(&[f, g], channel_axis(ctx, f))?;
        Ok(Some((f, fuse.forward(ctx, cat)?)))
    };
    let sb = branch(ctx, "speech", &p.sb, &p.gld_sb, &p.fuse_sb, BlockVariant::Speech)?;
    let ib = branch(ctx, "interference", &p.ib, &p.gld_ib, &p.fuse_ib, BlockVariant::Interference)?;
    let gate = match (sb, ib) {
        (Some((_, fs)), Some((_, fi))) => {
            if ctx.graph.shape(fs) != ctx.graph.shape(fi) {
                return Err(dim_err!(
                    "gate: speech {:?} and interference {:?} fused features differ",
                    ctx.graph.shape(fs),
                    ctx.graph.shape(fi)
                ));
            }
            let s = ctx.graph.add(fs, fi)?;
            Some(ctx.graph.sigmoid(s))
        }
        (Some((_, f)), None) | (None, Some((_, f))) => Some(ctx.graph.sigmoid(f)),
        (None, None) => None,
    };
    let pre_down = match (gate, &p.nb, &p.confidence) {
        (Some(gate), Some(nb), Some(conf)) => {
            let nbf = nb.forward(ctx, x)?;
            let mut parts = vec![inter];
            if let Some((sbf, _)) = sb {
                parts.push(sbf);
            }
            parts.push(nbf);
            let axis = channel_axis(ctx, inter);
            let cat = ctx.graph.concat(&parts, axis)?;
            let c = conf.forward(ctx, cat)?;
            if ctx.graph.shape(c) != ctx.graph.shape(gate) {
                return Err(dim_err!(
                    "confidence {:?} does not match gate {:?}",
                    ctx.graph.shape(c),
                    ctx.graph.shape(gate)
                ));
            }
            ctx.graph.mul(c, gate)?
        }
        _ => inter,
    };
    let out = p.down.forward(ctx, pre_down)?;
    Ok(LayerTrace { gate, pre_down, out })
}

fn channel_axis<S: Scalar>(ctx: &Ctx<'_, S>, x: Var) -> usize {
    ctx.graph.shape(x).len() - 3
}

#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct BottleneckParams {
    pub layers: Vec<LstmParams>,
    /// `[C·F × H]`
    pub proj_w: ParamId,
    /// `[C·F]`, zero-initialized.
    pub proj_b: ParamId,
}

impl BottleneckParams {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        seed: u64,
        width: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut ls = Vec::with_capacity(layers);
        for l in 0..layers {
            let d = if l == 0 { width } else { hidden };
            let mut add = |suffix: &str, shape: &[usize]| {
                let name = format!("lstm.{l}.{suffix}");
                store.add_param(&name, uniform_init(shape, bound, seed, &name))
            };
            ls.push(LstmParams {
                w_ih: add("w_ih", &[4 * hidden, d])?,
                w_hh: add("w_hh", &[4 * hidden, hidden])?,
                bias: add("b", &[4 * hidden])?,
            });
        }
        let proj_w = store.add_param(
            "lstm.proj.w",
            uniform_init(&[width, hidden], 1.0 / (hidden as f64).sqrt(), seed, "lstm.proj.w"),
        )?;
        let proj_b = store.add_param("lstm.proj.b", Tensor::zeros(&[width]))?;
        Ok(Self { layers: ls, proj_w, proj_b })
    }
}

/// `[N×C×T×F] → [N×T×C·F] → LSTM stack → linear → [N×C×T×F]`.
pub fn bottleneck_forward<S: Scalar>(ctx: &mut Ctx<'_, S>, x: Var, p: &BottleneckParams) -> Result<Var> {
    let s = ctx.graph.shape(x).to_vec();
    let batched = s.len() == 4;
    let [n, c, t, f] = match *s {
        [c, t, f] => [1, c, t, f],
        [n, c, t, f] => [n, c, t, f],
        _ => return Err(dim_err!("bottleneck: expected [C×T×F] or [N×C×T×F], got {:?}", s)),
    };
    let x4 = ctx.graph.reshape(x, &[n, c, t, f])?;
    let seq = ctx.graph.permute(x4, &[0, 2, 1, 3])?;
    let seq = ctx.graph.reshape(seq, &[n, t, c * f])?;
    let vars: Vec<LstmLayerVars> = p
        .layers
        .iter()
        .map(|l| LstmLayerVars { w_ih: ctx.param(l.w_ih), w_hh: ctx.param(l.w_hh), bias: ctx.param(l.bias) })
        .collect();
    let h = ctx.graph.lstm_forward(seq, &vars)?;
    let (pw, pb) = (ctx.param(p.proj_w), ctx.param(p.proj_b));
    let y = ctx.graph.linear(h, pw, Some(pb))?;
    let y = ctx.graph.reshape(y, &[n, t, c, f])?;
    let y = ctx.graph.permute(y, &[0, 2, 1, 3])?;
    if batched {
        Ok(y)
    } else {
        ctx.graph.reshape(y, &[c, t, f])
    }
}

/// One decoder stage: a block for inner stages, a bare transposed
/// convolution for the output stage.
#[derive(Clone, Copy, Debug)]
pub enum DecoderLayer {
    Block(ConvBlock),
    Head(Conv),
}

impl DecoderLayer {
    fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Result<Var> {
        match self {
            Self::Block(b) => b.forward(ctx, x),
            Self::Head(c) => c.forward(ctx, x),
        }
    }
}

/// Concatenates each stage input with the matching encoder output (deepest
/// first) and doubles the frequency extent.
pub fn decoder_forward<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    x: Var,
    skips: &[Var],
    layers: &[DecoderLayer],
) -> Result<Var> {
    if skips.len() != layers.len() {
        return Err(dim_err!("decoder: {} skips for {} layers", skips.len(), layers.len()));
    }
    let mut h = x;
    for (i, (layer, &skip)) in layers.iter().zip(skips.iter().rev()).enumerate() {
        let (sh, ss) = (ctx.graph.shape(h).to_vec(), ctx.graph.shape(skip).to_vec());
        let axis = sh.len().saturating_sub(3);
        let fits = sh.len() == ss.len()
            && sh.iter().zip(&ss).enumerate().all(|(k, (a, b))| k == axis || a == b);
        if !fits {
            return Err(dim_err!("decoder layer {i}: input {:?} does not fit skip {:?}", sh, ss));
        }
        let cat = ctx.graph.concat(&[h, skip], axis)?;
        h = layer.forward(ctx, cat)?;
    }
    Ok(h)
}

/// Parameter layout of the whole network.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoder: Vec<GldLayerParams>,
    pub bottleneck: BottleneckParams,
    pub decoder: Vec<DecoderLayer>,
    /// `[D×win_len]`
    pub wave_dec: ParamId,
}

impl ModelParams {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.enc_channels.len();
        let mut encoder = Vec::with_capacity(depth);
        let mut c_in = 2;
        for (i, &c) in cfg.enc_channels.iter().enumerate() {
            encoder.push(GldLayerParams::register(
                store,
                seed,
                &format!("enc.{i}"),
                c_in,
                c,
                cfg.enable_sb,
                cfg.enable_ib,
                cfg.intermediate_blocks,
            )?);
            c_in = c;
        }
        let width = c_in * cfg.bottleneck_bins();
        let bottleneck = BottleneckParams::register(store, seed, width, cfg.lstm_hidden, cfg.lstm_layers)?;
        let mut decoder = Vec::with_capacity(depth);
        let mut cur = c_in;
        for (i, &c) in cfg.dec_channels.iter().enumerate() {
            let skip = cfg.enc_channels[depth - 1 - i];
            let name = format!("dec.{i}");
            decoder.push(if i + 1 == depth {
                DecoderLayer::Head(Conv::register(store, seed, &name, cur + skip, c, (3, 3), UP, true)?)
            } else {
                DecoderLayer::Block(ConvBlock::register(store, seed, &name, cur + skip, c, (3, 3), UP, true)?)
            });
            cur = c;
        }
        let d = cfg.frame_dim();
        let kernel = match cfg.decoder_init {
            DecoderInit::Random => uniform_init(&[d, cfg.stft.win_len], 1.0 / (d as f64).sqrt(), seed, "wave_dec.w"),
            DecoderInit::Istft => istft_kernel(&cfg.stft, cfg.f_in())?.cast(),
        };
        let wave_dec = store.add_param("wave_dec.w", kernel)?;
        Ok(Self { encoder, bottleneck, decoder, wave_dec })
    }
}

/// Noisy waveforms `[N×L]` to network input `[N×2×T×F]` (real and
/// imaginary planes, Nyquist bin dropped).
pub fn spectral_input<S: Scalar>(noisy: &Tensor<S>, cfg: &ModelConfig) -> Result<Tensor<S>> {
    let (n, len) = match *noisy.shape() {
        [l] => (1, l),
        [n, l] => (n, l),
        _ => return Err(dim_err!("expected [L] or [N×L] waveforms, got {:?}", noisy.shape())),
    };
    let t = cfg
        .stft
        .n_frames(len)
        .ok_or_else(|| contract_err!("input of {len} samples is shorter than one {}-sample window", cfg.stft.win_len))?;
    let f = cfg.f_in();
    let mut data = Vec::with_capacity(n * 2 * t * f);
    for row in noisy.data().chunks_exact(len) {
        let x: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        let planes = stft(&x, &cfg.stft)?.planes(f)?;
        data.extend(planes.data().iter().map(|&v| S::of(v)));
    }
    Tensor::new(&[n, 2, t, f], data)
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Var,
    pub skips: Vec<Var>,
    pub bottleneck: Var,
    /// Decoder output `[N×head×T×F]`.
    pub decoded: Var,
    /// `[N×T×D]` features handed to the waveform decoder.
    pub frames: Var,
    /// Enhanced waveforms `[N×L]`, truncated to the input length.
    pub wave: Var,
}

pub fn encoder_forward<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    x: Var,
    layers: &[GldLayerParams],
    opts: &GldOptions,
) -> Result<(Var, Vec<Var>)> {
    if let Some(&c) = ctx.graph.shape(x).get(ctx.graph.shape(x).len().wrapping_sub(3)) {
        if c != 2 {
            return Err(dim_err!("encoder expects 2 input planes, got {c}"));
        }
    }
    let mut h = x;
    let mut skips = Vec::with_capacity(layers.len());
    for l in layers {
        h = gld_layer_forward(ctx, h, l, opts)?.out;
        skips.push(h);
    }
    Ok((h, skips))
}

/// Waveforms `[N×L]` in, enhanced waveforms `[N×L]` out.
pub fn gldnet_forward<S: Scalar>(
    ctx: &mut Ctx<'_, S>,
    p: &ModelParams,
    cfg: &ModelConfig,
    noisy: &Tensor<S>,
) -> Result<ForwardTrace> {
    let len = *noisy.shape().last().ok_or_else(|| dim_err!("rank-0 waveform"))?;
    let spec = spectral_input(noisy, cfg)?;
    let [n, _, t, f] = <[usize; 4]>::try_from(spec.shape()).expect("rank 4");
    let input = ctx.graph.constant(spec);
    let (h, skips) = encoder_forward(ctx, input, &p.encoder, &cfg.gld)?;
    let bottleneck = bottleneck_forward(ctx, h, &p.bottleneck)?;
    let decoded = decoder_forward(ctx, bottleneck, &skips, &p.decoder)?;
    let hc = cfg.head_channels();
    if ctx.graph.shape(decoded) != [n, hc, t, f] {
        return Err(dim_err!("decoder produced {:?}, expected {:?}", ctx.graph.shape(decoded), [n, hc, t, f]));
    }
    let frames = ctx.graph.permute(decoded, &[0, 2, 1, 3])?;
    let frames = ctx.graph.reshape(frames, &[n, t, hc * f])?;
    let w = ctx.param(p.wave_dec);
    let full = ctx.graph.learnable_decoder(frames, w, cfg.stft.hop)?;
    let wave = ctx.graph.narrow(full, 1, 0, len)?;
    let wave = if noisy.rank() == 1 { ctx.graph.reshape(wave, &[len])? } else { wave };
    Ok(ForwardTrace { input, skips, bottleneck, decoded, frames, wave })
}

/// A configured network together with its parameters.
#[derive(Clone, Debug)]
pub struct GldNet<S> {
    pub cfg: ModelConfig,
    pub params: ModelParams,
    pub store: ParamStore<S>,
}

impl<S: Scalar> GldNet<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let params = ModelParams::register(&mut store, &cfg, seed)?;
        Ok(Self { cfg, params, store })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Inference with running batchnorm statistics.
    pub fn enhance(&mut self, noisy: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::new(&[noisy.len()], noisy.iter().map(|&v| S::of(v)).collect())?;
        let mut ctx = Ctx::new(&mut self.store, Mode::Eval);
        let tr = gldnet_forward(&mut ctx, &self.params, &self.cfg, &x)?;
        Ok(ctx.graph.value(tr.wave).data().iter().map(|v| v.f64()).collect())
    }

    /// Same architecture and values at another precision.
    pub fn cast<T: Scalar>(&self) -> GldNet<T> {
        GldNet { cfg: self.cfg.clone(), params: self.params.clone(), store: self.store.cast() }
    }
}

/// Trainable parameter count of a configuration.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(GldNet::<f32>::new(cfg.clone(), 0)?.num_params())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::full().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        ModelConfig::tiny().with_ri_head(true).validate().unwrap();
        let mut bad = ModelConfig::tiny();
        bad.dec_channels.pop();
        assert!(bad.validate().is_err());
        let bad = ModelConfig { decoder_init: DecoderInit::Istft, ..ModelConfig::tiny() };
        assert!(bad.validate().is_err());
        assert_eq!(ModelConfig::full().bottleneck_bins(), 8);
        assert_eq!(ModelConfig::tiny().bottleneck_bins(), 2);
    }

    #[test]
    fn tiny_forward_keeps_length() {
        let mut net = GldNet::<f64>::new(ModelConfig::tiny(), 1).unwrap();
        for len in [128usize, 300, 517] {
            let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.1).sin() * 0.3).collect();
            let y = net.enhance(&x).unwrap();
            assert_eq!(y.len(), len);
            assert!(y.iter().all(|v| v.is_finite()));
        }
        assert!(net.enhance(&[0.0; 100]).is_err());
    }
}
