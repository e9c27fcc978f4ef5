//! Noisy mixtures at prescribed SNRs, manifests, and the synthetic toy corpus.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract_err, Result};
use crate::rng::{derive_seed, seeded, substream};
use crate::signal::SAMPLE_RATE;

/// SNR conditions of the training mixtures, in dB.
pub const TRAIN_SNRS_DB: [f64; 7] = [-5.0, -3.0, 0.0, 3.0, 5.0, 7.0, 10.0];

/// Root mean square; zero for an empty slice.
pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    Float::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

/// `10·log10(‖clean‖² / ‖noise‖²)`.
pub fn measured_snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    let ps: f64 = clean.iter().map(|v| v * v).sum();
    let pn: f64 = noise.iter().map(|v| v * v).sum();
    10.0 * Float::log10(ps / pn)
}

/// Where a noise excerpt starts inside its source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OffsetPolicy {
    /// Offset drawn from the mix seed.
    #[default]
    Seeded,
    /// Always start at sample 0.
    Start,
}

/// A mixture and its parts after scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct Mix {
    pub noisy: Vec<f64>,
    /// Loss target; carries the same peak normalization as `noisy`.
    pub clean: Vec<f64>,
    /// Scaled noise actually added to `clean`.
    pub noise: Vec<f64>,
    /// Gain applied to the raw noise excerpt.
    pub gain: f64,
    /// Joint peak normalization factor (1 when no clipping was needed).
    pub peak_scale: f64,
}

/// Noise excerpt of length `len`: cropped at an offset when the source is
/// longer, tiled from a circular offset when shorter.
pub fn fit_noise(noise: &[f64], len: usize, seed: u64, policy: OffsetPolicy) -> Result<Vec<f64>> {
    if noise.is_empty() {
        return Err(contract_err!("mix: noise is empty"));
    }
    let mut rng = substream(seed, "noise-offset");
    let n = noise.len();
    if n >= len {
        let off = match policy {
            OffsetPolicy::Seeded => rng.random_range(0..=n - len),
            OffsetPolicy::Start => 0,
        };
        return Ok(noise[off..off + len].to_vec());
    }
    let off = match policy {
        OffsetPolicy::Seeded => rng.random_range(0..n),
        OffsetPolicy::Start => 0,
    };
    Ok((0..len).map(|i| noise[(off + i) % n]).collect())
}

/// Adds noise to `clean` so that the clean-to-noise power ratio is `snr_db`.
///
/// If the mixture peaks above 1 the mixture, clean target and noise are
/// divided by that peak together, which leaves the SNR untouched.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64, seed: u64) -> Result<Mix> {
    mix_with_policy(clean, noise, snr_db, seed, OffsetPolicy::Seeded)
}

pub fn mix_with_policy(clean: &[f64], noise: &[f64], snr_db: f64, seed: u64, policy: OffsetPolicy) -> Result<Mix> {
    if !snr_db.is_finite() {
        return Err(contract_err!("mix: snr_db must be finite, got {snr_db}"));
    }
    let rc = rms(clean);
    if rc == 0.0 {
        return Err(contract_err!("mix: clean signal is silent"));
    }
    let raw = fit_noise(noise, clean.len(), seed, policy)?;
    let rn = rms(&raw);
    if rn == 0.0 {
        return Err(contract_err!("mix: noise excerpt is silent"));
    }
    let gain = rc / (rn * Float::powf(10.0, snr_db / 20.0));
    let mut scaled: Vec<f64> = raw.iter().map(|v| v * gain).collect();
    let mut noisy: Vec<f64> = clean.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    let mut clean = clean.to_vec();
    let peak = noisy.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let peak_scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak_scale != 1.0 {
        for v in noisy.iter_mut().chain(clean.iter_mut()).chain(scaled.iter_mut()) {
            *v *= peak_scale;
        }
    }
    Ok(Mix { noisy, clean, noise: scaled, gain, peak_scale })
}

/// Crop of exactly `len` samples at a seeded offset, zero-padded at the end
/// when `x` is shorter.
pub fn crop_or_pad(x: &[f64], len: usize, seed: u64) -> Vec<f64> {
    crop_range(x.len(), len, seed).map_or_else(
        || {
            let mut v = x.to_vec();
            v.resize(len, 0.0);
            v
        },
        |off| x[off..off + len].to_vec(),
    )
}

/// Start of a seeded `len`-sample window inside `total`, or `None` if it
/// does not fit.
pub fn crop_range(total: usize, len: usize, seed: u64) -> Option<usize> {
    (total >= len).then(|| substream(seed, "crop").random_range(0..=total - len))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(contract_err!("unknown split {s:?} (expected train, val or test)")),
        }
    }
}

/// One mixture recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct MixSpec {
    pub clean_path: String,
    pub noise_path: String,
    pub snr_db: f64,
    pub seed: u64,
    pub offset: OffsetPolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: Split,
    pub entries: Vec<MixSpec>,
    pub sample_rate: u32,
}

impl Manifest {
    pub fn new(split: Split, entries: Vec<MixSpec>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !e.snr_db.is_finite()) {
            return Err(contract_err!("manifest entry {:?}: snr_db must be finite", e.clean_path));
        }
        Ok(Self { split, entries, sample_rate: SAMPLE_RATE })
    }

    /// Parses `clean<TAB>noise<TAB>snr_db<TAB>seed` lines. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str, split: Split) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(contract_err!("manifest line {}: expected 4 tab-separated fields, found {}", no + 1, f.len()));
            }
            let snr_db = f[2]
                .trim()
                .parse::<f64>()
                .map_err(|_| contract_err!("manifest line {}: bad snr_db {:?}", no + 1, f[2]))?;
            let seed = f[3]
                .trim()
                .parse::<u64>()
                .map_err(|_| contract_err!("manifest line {}: bad seed {:?}", no + 1, f[3]))?;
            entries.push(MixSpec {
                clean_path: f[0].to_string(),
                noise_path: f[1].to_string(),
                snr_db,
                seed,
                offset: OffsetPolicy::Seeded,
            });
        }
        Self::new(split, entries)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&alloc::format!("{}\t{}\t{}\t{}\n", e.clean_path, e.noise_path, e.snr_db, e.seed));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Rejects any clean file that shows up in more than one split.
pub fn check_split_hygiene(manifests: &[&Manifest]) -> Result<()> {
    let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
    for m in manifests {
        for e in &m.entries {
            match owner.get(e.clean_path.as_str()) {
                Some(&s) if s != m.split => {
                    return Err(contract_err!(
                        "clean file {:?} appears in both {} and {} splits",
                        e.clean_path,
                        s.as_str(),
                        m.split.as_str()
                    ))
                }
                _ => {
                    owner.insert(&e.clean_path, m.split);
                }
            }
        }
    }
    Ok(())
}

/// Index order of one batch: `batch` draws with replacement from `0..n`.
pub fn batch_indices(n: usize, batch: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(contract_err!("cannot sample from an empty manifest"));
    }
    let mut rng = substream(seed, "batch");
    Ok((0..batch).map(|_| rng.random_range(0..n)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyKind {
    Tones,
    Chirp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Hum,
}

/// Smallest toy clip; shorter ones could fall entirely inside a gap.
pub const MIN_TOY_LEN: usize = 4096;

/// On/off activity envelope. Each cycle opens with a silent gap of at least
/// 30% of the cycle, then a raised-cosine burst.
pub fn activity_envelope(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "envelope");
    let sr = f64::from(SAMPLE_RATE);
    let ramp = (0.01 * sr) as usize;
    let mut env = vec![0.0; len];
    let mut start = 0;
    while start < len {
        let cycle = (rng.random_range(0.2..0.4) * sr) as usize;
        let on_ratio: f64 = rng.random_range(0.5..0.7);
        let off = cycle - (on_ratio * cycle as f64) as usize;
        let on_start = start + off;
        let on_end = (start + cycle).min(len);
        let on_len = (start + cycle) - on_start;
        for (k, i) in (on_start..on_end).enumerate() {
            let edge = k.min(on_len - 1 - k);
            env[i] = if edge >= ramp {
                1.0
            } else {
                0.5 * (1.0 - Float::cos(PI * edge as f64 / ramp as f64))
            };
        }
        start += cycle;
    }
    env
}

fn toy_clean(kind: ToyKind, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "toy-clean");
    let sr = f64::from(SAMPLE_RATE);
    let n_comp = rng.random_range(2..=4);
    let mut x = vec![0.0; len];
    for _ in 0..n_comp {
        let amp: f64 = rng.random_range(0.2..1.0);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let f0: f64 = rng.random_range(200.0..2000.0);
        let f1 = match kind {
            ToyKind::Tones => f0,
            ToyKind::Chirp => rng.random_range(200.0..3000.0),
        };
        let dur = len as f64 / sr;
        for (n, v) in x.iter_mut().enumerate() {
            let t = n as f64 / sr;
            // instantaneous frequency sweeps linearly from f0 to f1
            let arg = 2.0 * PI * (f0 * t + 0.5 * (f1 - f0) * t * t / dur) + phase;
            *v += amp * Float::sin(arg);
        }
    }
    let env = activity_envelope(len, seed);
    for (v, e) in x.iter_mut().zip(&env) {
        *v *= e;
    }
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    x
}

fn toy_noise(kind: NoiseKind, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, "toy-noise");
    match kind {
        NoiseKind::White => (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        NoiseKind::Hum => {
            let base = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
            let phases: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let sr = f64::from(SAMPLE_RATE);
            (0..len)
                .map(|n| {
                    let t = n as f64 / sr;
                    phases
                        .iter()
                        .enumerate()
                        .map(|(k, ph)| Float::sin(2.0 * PI * base * (k + 1) as f64 * t + ph) / (k + 1) as f64)
                        .sum()
                })
                .collect()
        }
    }
}

/// Synthetic clean signal of 2–4 enveloped sinusoids mixed with synthetic
/// noise at `snr_db`.
pub fn synth_toy_pair(kind: ToyKind, noise: NoiseKind, snr_db: f64, len: usize, seed: u64) -> Result<Mix> {
    if len < MIN_TOY_LEN {
        return Err(contract_err!("toy pair needs at least {MIN_TOY_LEN} samples, got {len}"));
    }
    let clean = toy_clean(kind, len, seed);
    let n = toy_noise(noise, len, seed);
    mix_with_policy(&clean, &n, snr_db, seed, OffsetPolicy::Start)
}

/// `count` toy pairs with seeds derived from `seed` and `label`.
pub fn toy_corpus(
    kind: ToyKind,
    noise: NoiseKind,
    snr_db: f64,
    len: usize,
    count: usize,
    seed: u64,
    label: &str,
) -> Result<Vec<Mix>> {
    let base = derive_seed(seed, label);
    let mut rng = seeded(base);
    (0..count).map(|_| synth_toy_pair(kind, noise, snr_db, len, rng.random())).collect()
}
