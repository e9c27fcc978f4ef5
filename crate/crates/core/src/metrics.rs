//! SI-SDR, segmental SNR and STOI, plus per-condition aggregation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt::Write as _;

use num_traits::Float;

use crate::error::{contract_err, dim_err, Result};
use crate::signal::fft::fft;

/// Magnitude bound on SI-SDR; a zero residual reports the upper value.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_err!("{what}: reference has {} samples, estimate {}", a.len(), b.len()));
    }
    Ok(())
}

/// Scale-invariant signal-to-distortion ratio in dB, without mean removal.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(reference, estimate, "si_sdr")?;
    let rr = dot(reference, reference);
    if rr == 0.0 {
        return Err(contract_err!("si_sdr: reference is all zeros"));
    }
    let a = dot(estimate, reference) / rr;
    let t: f64 = a * a * rr;
    let res: f64 = reference.iter().zip(estimate).map(|(r, e)| (e - a * r) * (e - a * r)).sum();
    if res == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    if t == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * Float::log10(t / res)).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

pub const SEG_FRAME: usize = 512;
pub const SEG_HOP: usize = 256;
pub const SEG_FLOOR_DB: f64 = -10.0;
pub const SEG_CEIL_DB: f64 = 35.0;
/// Frames whose reference level is at or below this (dBFS) are skipped.
pub const SEG_VOICED_DBFS: f64 = -40.0;

/// Mean per-frame SNR over voiced reference frames, each clamped to
/// `[SEG_FLOOR_DB, SEG_CEIL_DB]`.
pub fn seg_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(reference, estimate, "seg_snr")?;
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + SEG_FRAME <= reference.len() {
        let r = &reference[start..start + SEG_FRAME];
        let e = &estimate[start..start + SEG_FRAME];
        let pr = dot(r, r);
        if 10.0 * Float::log10(pr / SEG_FRAME as f64) > SEG_VOICED_DBFS {
            let pe: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            let snr = if pe == 0.0 { SEG_CEIL_DB } else { 10.0 * Float::log10(pr / pe) };
            sum += snr.clamp(SEG_FLOOR_DB, SEG_CEIL_DB);
            count += 1;
        }
        start += SEG_HOP;
    }
    if count == 0 {
        return Err(contract_err!("seg_snr: no voiced frames in the reference"));
    }
    Ok(sum / count as f64)
}

const STOI_FS: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Short-time objective intelligibility of `estimate` against `reference`,
/// both sampled at `fs`. Inputs shorter than one second are rejected.
pub fn stoi(reference: &[f64], estimate: &[f64], fs: u32) -> Result<f64> {
    same_len(reference, estimate, "stoi")?;
    if fs == 0 || reference.len() < fs as usize {
        return Err(contract_err!("stoi: needs at least one second of audio, got {} samples at {fs} Hz", reference.len()));
    }
    let (x, y) = if fs == STOI_FS {
        (reference.to_vec(), estimate.to_vec())
    } else {
        (resample_poly(reference, STOI_FS, fs), resample_poly(estimate, STOI_FS, fs))
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let xs = band_envelopes(&x);
    let ys = band_envelopes(&y);
    let frames = xs.len();
    if frames < STOI_SEGMENT {
        return Err(contract_err!(
            "stoi: {frames} active frames after silence removal, need {STOI_SEGMENT}"
        ));
    }
    let clip = Float::powf(10.0, -STOI_BETA_DB / 20.0);
    let mut total = 0.0;
    let mut xv = vec![0.0; STOI_SEGMENT];
    let mut yv = vec![0.0; STOI_SEGMENT];
    for m in STOI_SEGMENT..=frames {
        for band in 0..STOI_BANDS {
            for (k, t) in (m - STOI_SEGMENT..m).enumerate() {
                xv[k] = xs[t][band];
                yv[k] = ys[t][band];
            }
            let alpha = Float::sqrt(dot(&xv, &xv)) / (Float::sqrt(dot(&yv, &yv)) + EPS);
            for (yk, xk) in yv.iter_mut().zip(&xv) {
                *yk = (*yk * alpha).min(xk * (1.0 + clip));
            }
            total += centered_correlation(&mut xv, &mut yv);
        }
    }
    Ok(total / ((frames - STOI_SEGMENT + 1) * STOI_BANDS) as f64)
}

fn centered_correlation(x: &mut [f64], y: &mut [f64]) -> f64 {
    for v in [&mut *x, &mut *y] {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|e| *e -= mean);
        let norm = Float::sqrt(dot(v, v)) + EPS;
        v.iter_mut().for_each(|e| *e /= norm);
    }
    dot(x, y)
}

/// `n` interior points of a Hann window of length `n+2`.
fn stoi_window(n: usize) -> Vec<f64> {
    (1..=n).map(|k| 0.5 - 0.5 * Float::cos(2.0 * PI * k as f64 / (n + 1) as f64)).collect()
}

/// Frame starts `0, hop, …` strictly below `len − frame`.
fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

/// Drops frames of both signals where the reference is more than
/// `STOI_DYN_RANGE_DB` below its loudest frame, then overlap-adds the rest.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = stoi_window(STOI_FRAME);
    let hop = STOI_FRAME / 2;
    let starts: Vec<usize> = frame_starts(x.len(), STOI_FRAME, hop).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..STOI_FRAME).map(|k| (w[k] * x[s + k]).powi(2)).sum();
            20.0 * Float::log10(Float::sqrt(e) + EPS)
        })
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - STOI_DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * hop + STOI_FRAME };
    let mut xo = vec![0.0; out_len];
    let mut yo = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        for k in 0..STOI_FRAME {
            xo[j * hop + k] += w[k] * x[s + k];
            yo[j * hop + k] += w[k] * y[s + k];
        }
    }
    (xo, yo)
}

/// One-third-octave band index ranges `[lo, hi)` over the onesided FFT bins.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = STOI_NFFT / 2 + 1;
    let f = |i: usize| i as f64 * f64::from(STOI_FS) / STOI_NFFT as f64;
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| (f(a) - target).powi(2).partial_cmp(&(f(b) - target).powi(2)).unwrap())
            .unwrap_or(0)
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * Float::powf(2.0, (2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * Float::powf(2.0, (2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Per-frame band magnitudes `[frames][bands]`.
fn band_envelopes(x: &[f64]) -> Vec<[f64; STOI_BANDS]> {
    let w = stoi_window(STOI_FRAME);
    let bands = third_octave_bands();
    let mut re = vec![0.0; STOI_NFFT];
    let mut im = vec![0.0; STOI_NFFT];
    frame_starts(x.len(), STOI_FRAME, STOI_FRAME / 2)
        .map(|s| {
            re.iter_mut().for_each(|v| *v = 0.0);
            im.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..STOI_FRAME {
                re[k] = w[k] * x[s + k];
            }
            fft(&mut re, &mut im);
            let mut out = [0.0; STOI_BANDS];
            for (o, &(lo, hi)) in out.iter_mut().zip(&bands) {
                *o = Float::sqrt((lo..hi).map(|i| re[i] * re[i] + im[i] * im[i]).sum::<f64>());
            }
            out
        })
        .collect()
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Polyphase resampler with a Kaiser-windowed sinc lowpass (60 dB stopband,
/// roll-off a tenth of the cutoff), normalized to unit DC gain per phase
/// on average. Output length is `ceil(len·to/from)`.
pub fn resample_poly(x: &[f64], to: u32, from: u32) -> Vec<f64> {
    let g = gcd(to, from);
    let (up, down) = ((to / g) as usize, (from / g) as usize);
    if up == 1 && down == 1 {
        return x.to_vec();
    }
    let cutoff = 1.0 / (2 * up.max(down)) as f64;
    let rejection_db = 60.0;
    let half = Float::ceil((rejection_db - 8.0) / (28.714 * cutoff / 10.0)) as usize;
    let beta = 0.1102 * (rejection_db - 8.7);
    let m = 2 * half;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..=m)
        .map(|k| {
            let t = k as f64 - half as f64;
            let arg = 2.0 * cutoff * t;
            let sinc = if arg == 0.0 { 1.0 } else { Float::sin(PI * arg) / (PI * arg) };
            let r = 2.0 * k as f64 / m as f64 - 1.0;
            let win = bessel_i0(beta * Float::sqrt((1.0 - r * r).max(0.0))) / i0b;
            2.0 * up as f64 * cutoff * sinc * win
        })
        .collect();
    let total: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= up as f64 / total);
    let n_out = (x.len() * up).div_ceil(down);
    (0..n_out)
        .map(|o| {
            // tap index: o·down + half − n·up, over n with a valid tap
            let centre = o * down + half;
            let n_hi = (centre / up).min(x.len().saturating_sub(1));
            let n_lo = centre.saturating_sub(m).div_ceil(up);
            (n_lo..=n_hi).filter(|_| !x.is_empty()).map(|n| x[n] * h[centre - n * up]).sum()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    SiSdr,
    SegSnr,
    Stoi,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::SiSdr, Metric::SegSnr, Metric::Stoi];

    pub fn name(self) -> &'static str {
        match self {
            Self::SiSdr => "si_sdr",
            Self::SegSnr => "seg_snr",
            Self::Stoi => "stoi",
        }
    }

    fn heading(self) -> &'static str {
        match self {
            Self::SiSdr => "SI-SDR (dB)",
            Self::SegSnr => "segSNR (dB)",
            Self::Stoi => "STOI (in %)",
        }
    }

    fn table_scale(self) -> f64 {
        match self {
            Self::Stoi => 100.0,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub condition_db: f64,
    pub si_sdr: f64,
    pub seg_snr: f64,
    pub stoi: f64,
}

impl UtteranceScore {
    /// Scores `estimate` against `reference` with all three metrics.
    pub fn compute(id: &str, condition_db: f64, reference: &[f64], estimate: &[f64], fs: u32) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            condition_db,
            si_sdr: si_sdr(reference, estimate)?,
            seg_snr: seg_snr(reference, estimate)?,
            stoi: stoi(reference, estimate, fs)?,
        })
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::SiSdr => self.si_sdr,
            Metric::SegSnr => self.seg_snr,
            Metric::Stoi => self.stoi,
        }
    }
}

/// Per-utterance scores grouped by SNR condition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub records: Vec<UtteranceScore>,
}

impl MetricReport {
    pub fn push(&mut self, s: UtteranceScore) {
        self.records.push(s);
    }

    /// Distinct conditions in ascending order.
    pub fn conditions(&self) -> Vec<f64> {
        let mut c: Vec<f64> = self.records.iter().map(|r| r.condition_db).collect();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        c.dedup();
        c
    }

    /// Mean of `m` over utterances at `condition_db`; `None` if there are none.
    pub fn condition_mean(&self, m: Metric, condition_db: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.condition_db == condition_db)
            .map(|r| r.get(m))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean of the available condition means among `conditions`.
    pub fn average(&self, m: Metric, conditions: &[f64]) -> Option<f64> {
        let v: Vec<f64> = conditions.iter().filter_map(|&c| self.condition_mean(m, c)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean of `m` over every utterance.
    pub fn overall_mean(&self, m: Metric) -> Option<f64> {
        (!self.records.is_empty())
            .then(|| self.records.iter().map(|r| r.get(m)).sum::<f64>() / self.records.len() as f64)
    }

    /// One `id<TAB>condition<TAB>metric<TAB>value` line per utterance and metric.
    pub fn records_text(&self, system: &str) -> String {
        let mut s = String::new();
        for r in &self.records {
            for m in Metric::ALL {
                let _ = writeln!(s, "{system}\t{}\t{}\t{}\t{}", r.id, r.condition_db, m.name(), r.get(m));
            }
        }
        s
    }
}

/// Evaluation SNR columns.
pub const TABLE_CONDITIONS_DB: [f64; 4] = [-5.0, 0.0, 5.0, 10.0];

/// Text table with one block of condition columns plus `Avg.` per metric
/// and one row per system. STOI is shown in percent; missing cells are `-`.
pub fn render_table(rows: &[(&str, &MetricReport)], conditions: &[f64]) -> String {
    let label_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Test SNR".len());
    let cell = 7;
    let block = (conditions.len() + 1) * (cell + 1) - 1;
    let mut s = String::new();
    let _ = write!(s, "{:<label_w$}", "Metric");
    for m in Metric::ALL {
        let _ = write!(s, " | {:^block$}", m.heading());
    }
    s.push('\n');
    let _ = write!(s, "{:<label_w$}", "Test SNR");
    for _ in Metric::ALL {
        s.push_str(" |");
        for c in conditions {
            let _ = write!(s, " {:>cell$}", alloc::format!("{c}"));
        }
        let _ = write!(s, " {:>cell$}", "Avg.");
    }
    s.push('\n');
    for (name, rep) in rows {
        let _ = write!(s, "{name:<label_w$}");
        for m in Metric::ALL {
            s.push_str(" |");
            let k = m.table_scale();
            let cells = conditions.iter().map(|&c| rep.condition_mean(m, c)).chain([rep.average(m, conditions)]);
            for v in cells {
                match v {
                    Some(v) => {
                        let _ = write!(s, " {:>cell$.2}", v * k);
                    }
                    None => {
                        let _ = write!(s, " {:>cell$}", "-");
                    }
                }
            }
        }
        s.push('\n');
    }
    s
}
