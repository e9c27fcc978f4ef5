//! Training pairs from manifests on disk or from the synthetic toy corpus.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use gldnet_core::data::{batch_indices, crop_or_pad, crop_range, mix_with_policy, toy_corpus, Manifest, Mix, NoiseKind, Split, ToyKind};
use gldnet_core::rng::derive_seed;

use crate::config::ToyConfig;
use crate::error::{Error, Result};
use crate::wav::read_wav;

pub type Pair = (Vec<f64>, Vec<f64>);

/// Reads a manifest file. Relative audio paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path, split: Split) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = Manifest::parse(&text, split).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut m.entries {
        for p in [&mut e.clean_path, &mut e.noise_path] {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(p.as_str()).to_string_lossy().into_owned();
            }
        }
    }
    Ok(m)
}

/// Decoded audio keyed by path.
#[derive(Default)]
pub struct AudioCache {
    files: HashMap<PathBuf, Vec<f64>>,
}

impl AudioCache {
    pub fn get(&mut self, path: &str) -> Result<&[f64]> {
        let p = PathBuf::from(path);
        if !self.files.contains_key(&p) {
            let w = read_wav(&p)?;
            self.files.insert(p.clone(), w.into_samples());
        }
        Ok(&self.files[&p])
    }
}

/// Builds every mixture of a manifest at full length.
pub fn mix_manifest(m: &Manifest, cache: &mut AudioCache) -> Result<Vec<Mix>> {
    m.entries
        .iter()
        .map(|e| {
            let clean = cache.get(&e.clean_path)?.to_vec();
            let noise = cache.get(&e.noise_path)?;
            Ok(mix_with_policy(&clean, noise, e.snr_db, e.seed, e.offset)?)
        })
        .collect()
}

/// Draws `batch` pairs from `manifest`, each a `crop_len` window of its
/// mixture at a seeded offset (zero-padded if short).
pub fn sample_batch(manifest: &Manifest, cache: &mut AudioCache, batch: usize, crop_len: usize, seed: u64) -> Result<Vec<Pair>> {
    let idx = batch_indices(manifest.len(), batch, seed).map_err(|e| Error::Config(e.to_string()))?;
    idx.iter()
        .enumerate()
        .map(|(k, &i)| {
            let e = &manifest.entries[i];
            let clean = cache.get(&e.clean_path)?.to_vec();
            let noise = cache.get(&e.noise_path)?;
            let m = mix_with_policy(&clean, noise, e.snr_db, e.seed, e.offset)?;
            let s = derive_seed(seed, &format!("crop{k}"));
            Ok((crop_or_pad(&m.noisy, crop_len, s), crop_or_pad(&m.clean, crop_len, s)))
        })
        .collect()
}

/// Where training and validation pairs come from.
pub enum PairSource {
    Toy { train: Vec<Mix>, val: Vec<Mix> },
    Files { train: Manifest, val: Vec<Mix>, cache: AudioCache },
}

impl PairSource {
    /// Tones in white noise; train and validation pairs use disjoint seeds.
    pub fn toy(cfg: &ToyConfig, seed: u64) -> Result<Self> {
        let make = |n, label| toy_corpus(ToyKind::Tones, NoiseKind::White, cfg.snr_db, cfg.len, n, seed, label);
        Ok(Self::Toy { train: make(cfg.train_pairs, "toy-train")?, val: make(cfg.val_pairs, "toy-val")? })
    }

    pub fn files(train: Manifest, val: &Manifest) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config("train and validation manifests must be non-empty".into()));
        }
        let mut cache = AudioCache::default();
        let val = mix_manifest(val, &mut cache)?;
        Ok(Self::Files { train, val, cache })
    }

    /// The batch for one training step; a pure function of `seed`.
    pub fn batch(&mut self, batch: usize, crop_len: usize, seed: u64) -> Result<Vec<Pair>> {
        match self {
            Self::Toy { train, .. } => {
                let idx = batch_indices(train.len(), batch, seed)?;
                Ok(idx
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let m = &train[i];
                        let s = derive_seed(seed, &format!("crop{k}"));
                        match crop_range(m.clean.len(), crop_len, s) {
                            Some(off) => (m.noisy[off..off + crop_len].to_vec(), m.clean[off..off + crop_len].to_vec()),
                            None => (crop_or_pad(&m.noisy, crop_len, s), crop_or_pad(&m.clean, crop_len, s)),
                        }
                    })
                    .collect())
            }
            Self::Files { train, cache, .. } => sample_batch(train, cache, batch, crop_len, seed),
        }
    }

    pub fn validation(&self) -> &[Mix] {
        match self {
            Self::Toy { val, .. } | Self::Files { val, .. } => val,
        }
    }
}
