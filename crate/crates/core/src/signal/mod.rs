//! Waveforms, STFT analysis/synthesis and the learnable waveform decoder.

mod decoder;
pub mod fft;
mod stft;

use alloc::vec::Vec;

pub use decoder::{apply_learnable_decoder, init_decoder_as_istft, istft_kernel, LearnableDecoderParams};
pub use stft::{hann, istft, stft, RISpectrogram, StftConfig};

use crate::error::{contract_err, num_err, Result};

/// Canonical processing rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono samples at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(contract_err!("waveform sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(num_err!("waveform sample {i} is not finite"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Same signal at `rate` by linear interpolation.
    pub fn resampled(&self, rate: u32) -> Result<Self> {
        Self::new(resample_linear(&self.samples, self.sample_rate, rate)?, rate)
    }
}

/// Averages interleaved channels into one.
pub fn downmix(interleaved: &[f64], channels: usize) -> Result<Vec<f64>> {
    if channels == 0 || interleaved.len() % channels != 0 {
        return Err(contract_err!("downmix: {} samples do not split into {channels} channels", interleaved.len()));
    }
    Ok(interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect())
}

/// Linear-interpolation resampler. The output has `round(len·to/from)`
/// samples; output sample `i` reads the input at position `i·from/to`.
pub fn resample_linear(x: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == 0 || to == 0 {
        return Err(contract_err!("resample: rates must be positive ({from} → {to})"));
    }
    if from == to || x.is_empty() {
        return Ok(x.to_vec());
    }
    let ratio = f64::from(from) / f64::from(to);
    let n = ((x.len() as f64) / ratio + 0.5) as usize;
    Ok((0..n)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos as usize;
            let frac = pos - j as f64;
            match (x.get(j), x.get(j + 1)) {
                (Some(a), Some(b)) => a + (b - a) * frac,
                (Some(a), None) => *a,
                _ => *x.last().unwrap(),
            }
        })
        .collect())
}
