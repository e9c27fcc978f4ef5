//! Flat `key = value` run configuration with `stft.*`, `model.*` and
//! `train.*` sections. Unknown keys are errors.

use std::fmt::Write as _;
use std::str::FromStr;

use gldnet_core::network::{DecoderInit, ModelConfig};
use gldnet_core::signal::StftConfig;
use gldnet_core::trainer::{Precision, TrainConfig};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown preset {s:?} (expected tiny or full)"))),
        }
    }
}

/// Synthetic corpus used in place of manifests.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub snr_db: f64,
    /// Clip length in samples.
    pub len: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { train_pairs: 200, val_pairs: 8, snr_db: 0.0, len: 16_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub toy: ToyConfig,
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let (model, crop_len) = match p {
            Preset::Tiny => (ModelConfig::tiny(), 4_000),
            Preset::Full => (ModelConfig::full(), 16_000),
        };
        Self {
            model,
            train: TrainConfig { crop_len, ..TrainConfig::default() },
            toy: ToyConfig::default(),
        }
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", no + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", no + 1, strip(e))))?;
        }
        Ok(())
    }

    /// Parses a text produced by [`RunConfig::render`] (or any subset of
    /// keys) on top of the given preset.
    pub fn parse(text: &str, base: Preset) -> Result<Self> {
        let mut c = Self::preset(base);
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.model.stft;
        StftConfig::new(s.win_len, s.hop, s.fft_size).map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.toy.train_pairs == 0 || self.toy.val_pairs == 0 {
            return Err(Error::Config("toy corpus sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "stft.win_len" | "stft.hop" | "stft.fft_size" => {
                let mut s = (m.stft.win_len, m.stft.hop, m.stft.fft_size);
                let n = parse::<usize>(key, value)?;
                match key {
                    "stft.win_len" => s.0 = n,
                    "stft.hop" => s.1 = n,
                    _ => s.2 = n,
                }
                // the triple is checked as a whole in `validate`
                m.stft = StftConfig { win_len: s.0, hop: s.1, fft_size: s.2 };
            }
            "model.enc_channels" => m.enc_channels = parse_list(key, value)?,
            "model.dec_channels" => m.dec_channels = parse_list(key, value)?,
            "model.lstm_layers" => m.lstm_layers = parse(key, value)?,
            "model.lstm_hidden" => m.lstm_hidden = parse(key, value)?,
            "model.enable_sb" => m.enable_sb = parse_bool(key, value)?,
            "model.enable_ib" => m.enable_ib = parse_bool(key, value)?,
            "model.intermediate_blocks" => m.intermediate_blocks = parse(key, value)?,
            "model.ri_head" => m.ri_head = parse_bool(key, value)?,
            "model.decoder_init" => {
                m.decoder_init = match value {
                    "random" => DecoderInit::Random,
                    "istft" => DecoderInit::Istft,
                    _ => return Err(Error::Config(format!("{key}: expected random or istft, got {value:?}"))),
                }
            }
            "model.literal_aggregation" => m.gld.literal_aggregation = parse_bool(key, value)?,
            "model.symmetric_mask" => m.gld.symmetric_mask = parse_bool(key, value)?,
            "model.attention_scale" => m.gld.attention_scale = parse_bool(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.batch" => t.batch = parse(key, value)?,
            "train.max_steps" => t.max_steps = parse(key, value)?,
            "train.eval_every" => t.eval_every = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.precision" => t.precision = parse_precision(value)?,
            "train.grad_clip" => {
                t.grad_clip = if value == "none" { None } else { Some(parse(key, value)?) };
            }
            "train.crop_len" => t.crop_len = parse(key, value)?,
            "train.toy_pairs" => self.toy.train_pairs = parse(key, value)?,
            "train.toy_val_pairs" => self.toy.val_pairs = parse(key, value)?,
            "train.toy_snr_db" => self.toy.snr_db = parse(key, value)?,
            "train.toy_len" => self.toy.len = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key in a fixed order; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let list = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("stft.win_len", m.stft.win_len.to_string());
        kv("stft.hop", m.stft.hop.to_string());
        kv("stft.fft_size", m.stft.fft_size.to_string());
        kv("model.enc_channels", list(&m.enc_channels));
        kv("model.dec_channels", list(&m.dec_channels));
        kv("model.lstm_layers", m.lstm_layers.to_string());
        kv("model.lstm_hidden", m.lstm_hidden.to_string());
        kv("model.enable_sb", m.enable_sb.to_string());
        kv("model.enable_ib", m.enable_ib.to_string());
        kv("model.intermediate_blocks", m.intermediate_blocks.to_string());
        kv("model.ri_head", m.ri_head.to_string());
        kv(
            "model.decoder_init",
            match m.decoder_init {
                DecoderInit::Random => "random",
                DecoderInit::Istft => "istft",
            }
            .into(),
        );
        kv("model.literal_aggregation", m.gld.literal_aggregation.to_string());
        kv("model.symmetric_mask", m.gld.symmetric_mask.to_string());
        kv("model.attention_scale", m.gld.attention_scale.to_string());
        kv("train.lr", format!("{:?}", t.lr));
        kv("train.batch", t.batch.to_string());
        kv("train.max_steps", t.max_steps.to_string());
        kv("train.eval_every", t.eval_every.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.precision", t.precision.bits().to_string());
        kv("train.grad_clip", t.grad_clip.map_or_else(|| "none".into(), |c| format!("{c:?}")));
        kv("train.crop_len", t.crop_len.to_string());
        kv("train.toy_pairs", self.toy.train_pairs.to_string());
        kv("train.toy_val_pairs", self.toy.val_pairs.to_string());
        kv("train.toy_snr_db", format!("{:?}", self.toy.snr_db));
        kv("train.toy_len", self.toy.len.to_string());
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on/off, got {value:?}"))),
    }
}

pub fn parse_precision(value: &str) -> Result<Precision> {
    match value {
        "32" | "f32" => Ok(Precision::F32),
        "64" | "f64" => Ok(Precision::F64),
        _ => Err(Error::Config(format!("precision must be 32 or 64, got {value:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        for p in [Preset::Tiny, Preset::Full] {
            let mut c = RunConfig::preset(p);
            c.train.grad_clip = Some(5.0);
            c.model.gld.symmetric_mask = true;
            assert_eq!(RunConfig::parse(&c.render(), Preset::Full).unwrap(), c);
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let e = RunConfig::parse("model.enable_sb = on\nmodel.colour = red\n", Preset::Tiny).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(e.to_string().contains("model.colour"), "{e}");
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::parse("train.lr = fast", Preset::Tiny).is_err());
        assert!(RunConfig::parse("train.lr = 0", Preset::Tiny).is_err());
        assert!(RunConfig::parse("no equals sign", Preset::Tiny).is_err());
        assert!(RunConfig::parse("stft.hop = 0", Preset::Tiny).is_err());
        assert!(RunConfig::parse("model.enc_channels = 4,8", Preset::Tiny).is_err());
    }

    #[test]
    fn later_assignments_win() {
        let c = RunConfig::parse("train.batch = 2\ntrain.batch = 3\n", Preset::Tiny).unwrap();
        assert_eq!(c.train.batch, 3);
    }
}
