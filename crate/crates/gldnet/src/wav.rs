//! WAV reading and writing at the canonical 16 kHz mono format.

use std::path::Path;

use gldnet_core::metrics::resample_poly;
use gldnet_core::signal::{downmix, Waveform, SAMPLE_RATE};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Wav { path: path.to_path_buf(), msg: other.to_string() },
    }
}

/// Samples as written in the file, interleaved and scaled to `[-1, 1)`,
/// with the file's channel count and rate.
pub fn read_raw(path: &Path) -> Result<(Vec<f64>, usize, u32)> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    // the file opened, so from here on read failures mean a malformed file
    let format_err = |e: hound::Error| Error::Wav { path: path.to_path_buf(), msg: e.to_string() };
    let mut r = WavReader::new(std::io::BufReader::new(f)).map_err(format_err)?;
    let spec = r.spec();
    let samples: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(format_err)?,
        SampleFormat::Int => {
            let full = f64::from(1u32 << (spec.bits_per_sample - 1));
            r.samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / full))
                .collect::<std::result::Result<_, _>>()
                .map_err(format_err)?
        }
    };
    Ok((samples, usize::from(spec.channels), spec.sample_rate))
}

/// Mono 16 kHz waveform: channels are averaged and other rates resampled.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let (raw, channels, rate) = read_raw(path)?;
    let mono = downmix(&raw, channels)?;
    let mono = if rate == SAMPLE_RATE { mono } else { resample_poly(&mono, SAMPLE_RATE, rate) };
    Ok(Waveform::new(mono, SAMPLE_RATE)?)
}

/// Writes mono samples. PCM uses the same 2^15 scale as [`read_raw`] and
/// saturates outside `[-1, 1)`.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32, format: WavFormat) -> Result<()> {
    let spec = match format {
        WavFormat::Pcm16 => WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int },
        WavFormat::Float32 => WavSpec { channels: 1, sample_rate, bits_per_sample: 32, sample_format: SampleFormat::Float },
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        let res = match format {
            WavFormat::Pcm16 => w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
            WavFormat::Float32 => w.write_sample(s as f32),
        };
        res.map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..100).map(|i| f64::from(i as f32 * 0.01 - 0.5)).collect();
        write_wav(&p, &x, SAMPLE_RATE, WavFormat::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &x[..]);
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin() * 0.9).collect();
        write_wav(&p, &x, SAMPLE_RATE, WavFormat::Pcm16).unwrap();
        let y = read_wav(&p).unwrap();
        for (a, b) in x.iter().zip(y.samples()) {
            assert!((a - b).abs() <= 0.5 / 32768.0);
        }
    }

    #[test]
    fn stereo_8k_is_downmixed_and_resampled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for _ in 0..800 {
            w.write_sample(8192i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(y.sample_rate(), SAMPLE_RATE);
        assert_eq!(y.len(), 1600);
        assert!((y.samples()[800] - 0.125).abs() < 1e-3);
    }

    #[test]
    fn garbage_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFF\x04\x00\x00\x00WAVEjunk").unwrap();
        let e = read_wav(&p).unwrap_err();
        assert!(matches!(e, Error::Wav { .. }), "{e}");
        assert!(e.to_string().contains("bad.wav"));
    }
}
