//! Learnable waveform decoder: a 1-D transposed convolution from per-frame
//! features to samples, with kernel length equal to the window and stride
//! equal to the hop.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

use super::stft::{hann, StftConfig};
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensorcore::linalg::gemm_nn;
use crate::tensorcore::{uniform_init, Graph, Tensor, Var};

/// Kernel `[D×win_len]` (one output channel, no bias) and its stride.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnableDecoderParams<S> {
    pub weight: Tensor<S>,
    pub hop: usize,
}

impl<S: Scalar> LearnableDecoderParams<S> {
    pub fn new(weight: Tensor<S>, hop: usize) -> Result<Self> {
        if weight.rank() != 2 || hop == 0 || hop > weight.shape()[1] {
            return Err(dim_err!("decoder kernel must be [D×K] with 0 < hop ≤ K, got {:?} / hop {hop}", weight.shape()));
        }
        Ok(Self { weight, hop })
    }

    /// Uniform `±1/√D` initialization.
    pub fn random(in_dim: usize, cfg: &StftConfig, seed: u64) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: uniform_init(&[in_dim, cfg.win_len], bound, seed, "wave_dec.w"),
            hop: cfg.hop,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel_len(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn stride(&self) -> usize {
        self.hop
    }
}

/// Synthesis kernel rows for the lowest `bins` onesided bins, real rows first
/// then imaginary rows. Row `f` maps a frame's spectrum to its inverse
/// transform multiplied by the dual window `w[k] / Σ_m w²[k mod hop + m·hop]`,
/// which makes plain overlap-add reproduce weighted overlap-add wherever
/// every overlapping frame is present.
pub fn istft_kernel(cfg: &StftConfig, bins: usize) -> Result<Tensor<f64>> {
    let full = cfg.n_bins();
    if bins == 0 || bins > full {
        return Err(dim_err!("istft kernel: {bins} bins requested from a {full}-bin transform"));
    }
    let (win, hop, n) = (cfg.win_len, cfg.hop, cfg.fft_size);
    let w = hann(win, true)?;
    let dual: Vec<f64> = (0..win)
        .map(|k| {
            let d: f64 = (k % hop..win).step_by(hop).map(|j| w[j] * w[j]).sum();
            if d > 1e-10 { w[k] / d } else { 0.0 }
        })
        .collect();
    let mut out = vec![0.0; 2 * bins * win];
    for f in 0..bins {
        let c = if f == 0 || 2 * f == n { 1.0 } else { 2.0 } / n as f64;
        for k in 0..win {
            let (s, co) = Float::sin_cos(2.0 * PI * ((f * k) % n) as f64 / n as f64);
            out[f * win + k] = c * co * dual[k];
            out[(bins + f) * win + k] = -c * s * dual[k];
        }
    }
    Tensor::new(&[2 * bins, win], out)
}

/// Decoder whose output equals [`super::istft`] on interior samples when fed
/// stacked real/imaginary frames (`D = 2·(fft_size/2 + 1)`).
pub fn init_decoder_as_istft(cfg: &StftConfig, in_dim: usize) -> Result<LearnableDecoderParams<f64>> {
    if in_dim != 2 * cfg.n_bins() {
        return Err(dim_err!("istft decoder needs D = {} stacked RI features, got {in_dim}", 2 * cfg.n_bins()));
    }
    LearnableDecoderParams::new(istft_kernel(cfg, cfg.n_bins())?, cfg.hop)
}

/// Applies the decoder to frames `[T×D]`, returning `(T−1)·hop + K` samples.
pub fn apply_learnable_decoder<S: Scalar>(frames: &Tensor<S>, p: &LearnableDecoderParams<S>) -> Result<Vec<S>> {
    let (d, k) = (p.in_dim(), p.kernel_len());
    if frames.rank() != 2 || frames.shape()[1] != d {
        return Err(dim_err!("decoder expects [T×{d}] frames, got {:?}", frames.shape()));
    }
    let t = frames.shape()[0];
    let mut cols = vec![S::zero(); t * k];
    gemm_nn(t, k, d, frames.data(), p.weight.data(), &mut cols);
    let mut out = vec![S::zero(); (t - 1) * p.hop + k];
    for (i, row) in cols.chunks_exact(k).enumerate() {
        for (o, &v) in out[i * p.hop..i * p.hop + k].iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(out)
}

impl<S: Scalar> Graph<S> {
    /// Differentiable decoder over frames `[N×T×D]` (or `[T×D]`) with kernel
    /// `w[D×K]`, returning `[N×L]` (or `[L]`).
    pub fn learnable_decoder(&mut self, frames: Var, w: Var, hop: usize) -> Result<Var> {
        let s = self.shape(frames).to_vec();
        let sw = self.shape(w).to_vec();
        let d = *s.last().ok_or_else(|| dim_err!("decoder: rank-0 frames"))?;
        if !(s.len() == 2 || s.len() == 3) || sw.len() != 2 || sw[0] != d {
            return Err(dim_err!("decoder: frames {:?} do not fit kernel {:?}", s, sw));
        }
        let rows = s[..s.len() - 1].iter().product::<usize>();
        let flat = self.reshape(frames, &[rows, d])?;
        let cols = self.matmul(flat, w)?;
        let mut framed = s.clone();
        *framed.last_mut().unwrap() = sw[1];
        let cols = self.reshape(cols, &framed)?;
        self.overlap_add(cols, hop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{istft, stft, RISpectrogram};
    use crate::tensorcore::gradcheck::grad_check;
    use rand::{Rng as _, SeedableRng};

    #[test]
    fn geometry_matches_stft() {
        let cfg = StftConfig::full();
        let p = init_decoder_as_istft(&cfg, 514).unwrap();
        assert_eq!((p.kernel_len(), p.stride()), (512, 256));
        assert!(init_decoder_as_istft(&cfg, 256).is_err());
        let one = apply_learnable_decoder(&Tensor::zeros(&[1, 514]), &p).unwrap();
        assert_eq!(one.len(), 512);
        let three = apply_learnable_decoder(&Tensor::zeros(&[3, 514]), &p).unwrap();
        assert_eq!(three.len(), 1024);
        assert!(three.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn istft_initialized_decoder_matches_istft() {
        for cfg in [StftConfig::full(), StftConfig::tiny()] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = stft(&x, &cfg).unwrap();
            let p = init_decoder_as_istft(&cfg, 2 * cfg.n_bins()).unwrap();
            let y = apply_learnable_decoder(&s.stacked_frames(), &p).unwrap();
            let r = istft(&s, &cfg).unwrap();
            let (a, b) = (cfg.win_len, r.len() - cfg.win_len);
            let err: f64 = (a..b).map(|i| (y[i] - r[i]).powi(2)).sum::<f64>().sqrt();
            let nrm: f64 = (a..b).map(|i| r[i].powi(2)).sum::<f64>().sqrt();
            assert!(err / nrm < 1e-10, "{}", err / nrm);
        }
    }

    #[test]
    fn graph_decoder_matches_plain() {
        let cfg = StftConfig::tiny();
        let p = LearnableDecoderParams::<f64>::random(10, &cfg, 4);
        let frames: Tensor<f64> = uniform_init(&[5, 10], 1.0, 9, "frames");
        let plain = apply_learnable_decoder(&frames, &p).unwrap();
        let mut g = Graph::new();
        let (f, w) = (g.constant(frames), g.constant(p.weight.clone()));
        let y = g.learnable_decoder(f, w, p.hop).unwrap();
        assert_eq!(g.value(y).data(), &plain[..]);
    }

    #[test]
    fn kernel_gradient_is_exact() {
        let cfg = StftConfig::new(8, 4, 8).unwrap();
        let frames: Tensor<f64> = uniform_init(&[3, 5], 1.0, 1, "frames");
        let target: Tensor<f64> = uniform_init(&[16], 1.0, 2, "target");
        let w0: Tensor<f64> = uniform_init(&[5, cfg.win_len], 0.5, 3, "w");
        let r = grad_check(
            |g, w| {
                let f = g.constant(frames.clone());
                let t = g.constant(target.clone());
                let y = g.learnable_decoder(f, w, cfg.hop)?;
                let e = g.sub(y, t)?;
                let sq = g.mul(e, e)?;
                Ok(g.mean(sq))
            },
            &w0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.worst());
    }

    #[test]
    fn zero_spectrogram_frames_decode_to_zero() {
        let cfg = StftConfig::tiny();
        let p = init_decoder_as_istft(&cfg, 130).unwrap();
        let y = apply_learnable_decoder(&RISpectrogram::zeros(4, 65).stacked_frames(), &p).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }
}
