//! Short-time Fourier analysis and weighted overlap-add synthesis.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

use super::fft::{fft, ifft};
use crate::error::{contract_err, dim_err, Result};
use crate::tensorcore::Tensor;

/// Frame geometry shared by analysis, synthesis and the learnable decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl StftConfig {
    pub fn new(win_len: usize, hop: usize, fft_size: usize) -> Result<Self> {
        if win_len < 2 || hop == 0 || hop > win_len || fft_size < win_len {
            return Err(contract_err!(
                "stft config needs 0 < hop ≤ win_len ≤ fft_size and win_len ≥ 2, got win {win_len}, hop {hop}, fft {fft_size}"
            ));
        }
        if fft_size % 2 != 0 {
            return Err(contract_err!("stft config: fft_size {fft_size} must be even"));
        }
        Ok(Self { win_len, hop, fft_size })
    }

    /// 512-sample frames, 256-sample shift, 512-point transform.
    pub const fn full() -> Self {
        Self { win_len: 512, hop: 256, fft_size: 512 }
    }

    /// Quarter-size geometry used by the tiny model preset.
    pub const fn tiny() -> Self {
        Self { win_len: 128, hop: 64, fft_size: 128 }
    }

    /// Onesided bin count `fft_size/2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames covering `len` samples with tail padding; `None` when `len` is
    /// shorter than one window.
    pub fn n_frames(&self, len: usize) -> Option<usize> {
        (len >= self.win_len).then(|| 1 + (len - self.win_len).div_ceil(self.hop))
    }

    /// Samples produced by overlap-adding `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.hop + self.win_len
    }
}

/// Hann window. The periodic form `0.5(1 − cos(2πk/n))` overlap-adds to one
/// at 50% overlap; the symmetric form divides by `n − 1` instead.
pub fn hann(n: usize, periodic: bool) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(contract_err!("hann: length {n} < 2"));
    }
    let d = if periodic { n } else { n - 1 } as f64;
    Ok((0..n).map(|k| 0.5 * (1.0 - Float::cos(2.0 * PI * k as f64 / d))).collect())
}

/// Onesided real/imaginary spectrogram, `[T×F×2]` with the last axis holding
/// (real, imaginary).
#[derive(Clone, Debug, PartialEq)]
pub struct RISpectrogram {
    values: Tensor<f64>,
}

impl RISpectrogram {
    pub fn new(values: Tensor<f64>) -> Result<Self> {
        if values.rank() != 3 || values.shape()[2] != 2 {
            return Err(dim_err!("RI spectrogram must be [T×F×2], got {:?}", values.shape()));
        }
        if !values.is_finite() {
            return Err(crate::error::num_err!("RI spectrogram holds non-finite values"));
        }
        Ok(Self { values })
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self { values: Tensor::zeros(&[frames, bins, 2]) }
    }

    pub fn values(&self) -> &Tensor<f64> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<f64> {
        self.values
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn re(&self, t: usize, f: usize) -> f64 {
        self.values.data()[(t * self.bins() + f) * 2]
    }

    pub fn im(&self, t: usize, f: usize) -> f64 {
        self.values.data()[(t * self.bins() + f) * 2 + 1]
    }

    /// Channels-first `[2×T×bins]` planes (real then imaginary), keeping only
    /// the lowest `bins` frequency bins.
    pub fn planes(&self, bins: usize) -> Result<Tensor<f64>> {
        let (t, f) = (self.frames(), self.bins());
        if bins == 0 || bins > f {
            return Err(dim_err!("cannot take {bins} bins from a {f}-bin spectrogram"));
        }
        let d = self.values.data();
        Ok(Tensor::from_fn(&[2, t, bins], |i| {
            let (p, rest) = (i / (t * bins), i % (t * bins));
            let (ti, fi) = (rest / bins, rest % bins);
            d[(ti * f + fi) * 2 + p]
        }))
    }

    /// Stacked frame features `[T×2F]`: all real parts, then all imaginary.
    pub fn stacked_frames(&self) -> Tensor<f64> {
        let (t, f) = (self.frames(), self.bins());
        let d = self.values.data();
        Tensor::from_fn(&[t, 2 * f], |i| {
            let (ti, j) = (i / (2 * f), i % (2 * f));
            let (p, fi) = (j / f, j % f);
            d[(ti * f + fi) * 2 + p]
        })
    }
}

/// Analysis: tail-pads `x` to a whole number of frames, windows each frame
/// with a periodic Hann window and keeps the onesided transform.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<RISpectrogram> {
    let frames = cfg
        .n_frames(x.len())
        .ok_or_else(|| contract_err!("stft: {} samples is shorter than one {}-sample window", x.len(), cfg.win_len))?;
    let w = hann(cfg.win_len, true)?;
    let bins = cfg.n_bins();
    let mut out = vec![0.0; frames * bins * 2];
    let (mut re, mut im) = (vec![0.0; cfg.fft_size], vec![0.0; cfg.fft_size]);
    for t in 0..frames {
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v = 0.0);
        let start = t * cfg.hop;
        for (k, wk) in w.iter().enumerate() {
            re[k] = x.get(start + k).copied().unwrap_or(0.0) * wk;
        }
        fft(&mut re, &mut im);
        for f in 0..bins {
            out[(t * bins + f) * 2] = re[f];
            out[(t * bins + f) * 2 + 1] = im[f];
        }
    }
    RISpectrogram::new(Tensor::new(&[frames, bins, 2], out)?)
}

/// Synthesis by weighted overlap-add: each inverse-transformed frame is
/// windowed again and the sum is divided by the overlapped squared window.
/// Returns `(T−1)·hop + win_len` samples; where the squared-window sum
/// vanishes the output is zero.
pub fn istft(s: &RISpectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    if s.bins() != cfg.n_bins() {
        return Err(dim_err!("istft: spectrogram has {} bins, config expects {}", s.bins(), cfg.n_bins()));
    }
    let w = hann(cfg.win_len, true)?;
    let (frames, bins, n) = (s.frames(), s.bins(), cfg.fft_size);
    let len = cfg.output_len(frames);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let (mut re, mut im) = (vec![0.0; n], vec![0.0; n]);
    for t in 0..frames {
        for f in 0..bins {
            re[f] = s.re(t, f);
            im[f] = s.im(t, f);
        }
        // Hermitian completion; DC and Nyquist are forced real.
        im[0] = 0.0;
        im[bins - 1] = 0.0;
        for f in bins..n {
            re[f] = re[n - f];
            im[f] = -im[n - f];
        }
        ifft(&mut re, &mut im);
        let start = t * cfg.hop;
        for (k, wk) in w.iter().enumerate() {
            out[start + k] += re[k] * wk;
            norm[start + k] += wk * wk;
        }
    }
    for (o, d) in out.iter_mut().zip(&norm) {
        *o = if *d > 1e-10 { *o / d } else { 0.0 };
    }
    Ok(out)
}
