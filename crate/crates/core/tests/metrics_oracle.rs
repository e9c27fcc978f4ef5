//! Metric values checked against a reference STOI implementation on
//! signals that both sides generate from closed forms.

use std::f64::consts::PI;

use gldnet_core::metrics::{resample_poly, si_sdr, stoi};

fn lcg(n: usize, seed: u64) -> Vec<f64> {
    let mut u = seed;
    (0..n)
        .map(|_| {
            u = (1_664_525 * u + 1_013_904_223) % (1 << 32);
            u as f64 / 4_294_967_296.0 - 0.5
        })
        .collect()
}

fn clean(n: usize, fs: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let gate = if t % 0.5 < 0.3 { 1.0 } else { 0.0 };
            (2.0 * PI * 440.0 * t).sin() * (0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin())
                + 0.3 * (2.0 * PI * 1200.0 * t + 0.5).sin() * gate
        })
        .collect()
}

fn variants(fs: u32, n: usize) -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let x = clean(n, f64::from(fs));
    let e = lcg(n, 12345);
    let mild = x.iter().zip(&e).map(|(a, b)| a + 0.5 * b).collect();
    let heavy = x.iter().zip(&e).map(|(a, b)| 0.2 * a + b).collect();
    vec![
        ("x", x.clone(), x.clone()),
        ("mild", x.clone(), mild),
        ("heavy", x.clone(), heavy),
        ("noise", x, e),
    ]
}

#[test]
fn stoi_matches_reference_at_native_rate() {
    let expected = [0.9999999999999994, 0.5793772006207585, 0.5216552839898447, 0.45589701383113984];
    for ((name, x, y), want) in variants(10_000, 15_000).into_iter().zip(expected) {
        let got = stoi(&x, &y, 10_000).unwrap();
        assert!((got - want).abs() < 1e-9, "{name}: {got} vs {want}");
    }
}

#[test]
fn stoi_matches_reference_after_resampling() {
    let expected = [0.9999999999999994, 0.6345873905517923, 0.5863699272067949, 0.5200467600545539];
    for ((name, x, y), want) in variants(16_000, 24_000).into_iter().zip(expected) {
        let got = stoi(&x, &y, 16_000).unwrap();
        assert!((got - want).abs() < 1e-6, "{name}: {got} vs {want}");
    }
}

#[test]
fn stoi_rejects_short_input() {
    let x = clean(8_000, 16_000.0);
    assert!(stoi(&x, &x, 16_000).is_err());
}

#[test]
fn resampler_length_and_dc() {
    let y = resample_poly(&[1.0; 1601], 10_000, 16_000);
    assert_eq!(y.len(), 1001);
    for v in &y[400..600] {
        assert!((v - 1.0).abs() < 1e-3, "{v}");
    }
}

#[test]
fn si_sdr_hand_example() {
    // projection of [2,1] onto [1,0] is [2,0]; residual [0,1]
    let v = si_sdr(&[1.0, 0.0], &[2.0, 1.0]).unwrap();
    assert!((v - 10.0 * 4f64.log10()).abs() < 1e-12);
}
