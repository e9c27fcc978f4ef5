//! Empirical behaviour of the metrics on a speech-like synthetic signal.

use std::f64::consts::PI;

use gldnet_core::data::mix_at_snr;
use gldnet_core::metrics::{seg_snr, stoi};
use gldnet_core::rng::seeded;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const FS: u32 = 16_000;

/// Vowel-like syllables: a jittered glottal pulse train through three
/// formant resonators, 4–6 syllables per second with short pauses.
fn speech_like(len: usize, seed: u64) -> Vec<f64> {
    const VOWELS: [[f64; 3]; 5] = [[730.0, 1090.0, 2440.0], [270.0, 2290.0, 3010.0], [530.0, 1840.0, 2480.0], [570.0, 840.0, 2410.0], [300.0, 870.0, 2240.0]];
    let mut rng = seeded(seed);
    let fs = f64::from(FS);
    let mut out = vec![0.0; len];
    let mut pos = 0;
    while pos < len {
        let syl = (rng.random_range(0.12..0.22) * fs) as usize;
        let pause = (rng.random_range(0.03..0.12) * fs) as usize;
        let formants = VOWELS[rng.random_range(0..VOWELS.len())];
        let f0: f64 = rng.random_range(100.0..200.0);
        let mut src = vec![0.0; syl];
        let mut t = 0.0;
        while (t as usize) < syl {
            src[t as usize] = 1.0;
            t += fs / (f0 * rng.random_range(0.97..1.03));
        }
        let mut voiced = vec![0.0; syl];
        for (k, &fc) in formants.iter().enumerate() {
            // two-pole resonator with 80 Hz bandwidth
            let r = (-PI * 80.0 / fs).exp();
            let (a1, a2) = (2.0 * r * (2.0 * PI * fc / fs).cos(), -r * r);
            let (mut y1, mut y2) = (0.0, 0.0);
            let gain = 1.0 / (k + 1) as f64;
            for (v, &s) in voiced.iter_mut().zip(&src) {
                let y = s + a1 * y1 + a2 * y2;
                *v += gain * y;
                y2 = y1;
                y1 = y;
            }
        }
        for (n, v) in voiced.iter().enumerate() {
            if pos + n >= len {
                break;
            }
            let env = (PI * n as f64 / syl as f64).sin();
            out[pos + n] = env * v;
        }
        pos += syl + pause;
    }
    let peak = out.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    out.iter().map(|v| 0.5 * v / peak).collect()
}

fn white(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed ^ 0x9e37_79b9);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn stoi_of_identity_is_one() {
    for seed in 0..5 {
        let x = speech_like(24_000, seed);
        assert!(stoi(&x, &x, FS).unwrap() >= 0.999);
    }
}

// The clipping step keeps STOI of an unrelated signal above zero: pystoi on
// signals from this generator gives 0.22..0.36; the recorded envelope is [0.15, 0.4).
#[test]
fn stoi_of_unrelated_noise_is_low() {
    let scores: Vec<f64> = (0..20)
        .map(|seed| {
            let x = speech_like(32_000, seed);
            stoi(&x, &white(32_000, seed), FS).unwrap()
        })
        .collect();
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("stoi(x, white noise) over 20 seeds: [{lo:.3}, {hi:.3}]");
    assert!(lo >= 0.15 && hi < 0.4, "[{lo}, {hi}]");
}

#[test]
fn stoi_rises_with_snr() {
    let mut wins = 0;
    for seed in 0..100 {
        let x = speech_like(20_000, seed);
        let n = white(20_000, seed);
        let hi = mix_at_snr(&x, &n, 10.0, seed).unwrap();
        let lo = mix_at_snr(&x, &n, -5.0, seed).unwrap();
        let (a, b) = (stoi(&hi.clean, &hi.noisy, FS).unwrap(), stoi(&lo.clean, &lo.noisy, FS).unwrap());
        assert!((-1.0..=1.0).contains(&a) && (-1.0..=1.0).contains(&b));
        wins += usize::from(a > b);
    }
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn seg_snr_of_white_noise_at_zero_db_is_near_zero() {
    for seed in 0..100 {
        let x = speech_like(16_000, seed);
        let m = mix_at_snr(&x, &white(16_000, seed), 0.0, seed).unwrap();
        let v = seg_snr(&m.clean, &m.noisy).unwrap();
        assert!((-5.0..=5.0).contains(&v), "seed {seed}: {v}");
    }
}

#[test]
fn seg_snr_identity_hits_the_ceiling() {
    let x = speech_like(16_000, 3);
    assert_eq!(seg_snr(&x, &x).unwrap(), 35.0);
}
