//! In-place complex FFT. Power-of-two sizes use iterative radix-2; other
//! sizes fall back to a direct DFT.

use alloc::vec;
use core::f64::consts::PI;

use num_traits::Float;

/// Forward transform (`e^{−2πi kn/N}`), unnormalized.
pub fn fft(re: &mut [f64], im: &mut [f64]) {
    transform(re, im, false);
}

/// Inverse transform including the `1/N` factor.
pub fn ifft(re: &mut [f64], im: &mut [f64]) {
    transform(re, im, true);
    let k = 1.0 / re.len() as f64;
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= k);
}

fn transform(re: &mut [f64], im: &mut [f64], inverse: bool) {
    assert_eq!(re.len(), im.len());
    let n = re.len();
    if n <= 1 {
        return;
    }
    if !n.is_power_of_two() {
        dft(re, im, inverse);
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = Float::sin_cos(ang * k as f64);
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn dft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let (mut or, mut oi) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        for t in 0..n {
            let (s, c) = Float::sin_cos(sign * 2.0 * PI * ((k * t) % n) as f64 / n as f64);
            or[k] += re[t] * c - im[t] * s;
            oi[k] += re[t] * s + im[t] * c;
        }
    }
    re.copy_from_slice(&or);
    im.copy_from_slice(&oi);
}
