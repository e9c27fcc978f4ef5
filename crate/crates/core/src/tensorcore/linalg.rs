//! Row-major dense kernels. All routines accumulate into `c`; callers zero it
//! first when they want a plain product. Loop orders keep the innermost loop
//! contiguous so it vectorizes, and the reduction order is fixed, so results
//! are bitwise reproducible.

use crate::scalar::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == S::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let n = a.len().min(b.len());
    let mut acc = [S::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (ac, bc) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += ac[l] * bc[l];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// 2-D sampling geometry shared by convolution and transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    /// Extra trailing rows/columns on the output of a transposed
    /// convolution. Ignored by the forward convolution.
    pub output_padding: (usize, usize),
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
            output_padding: (0, 0),
        }
    }
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            stride,
            padding,
            ..Self::default()
        }
    }

    pub fn with_output_padding(mut self, output_padding: (usize, usize)) -> Self {
        self.output_padding = output_padding;
        self
    }

    pub fn with_dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }
}

/// Extents of one spatial image plus a kernel, bundled for im2col/col2im.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Patch {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Unfolds `x[c×h×w]` into `cols[(c·kh·kw) × (oh·ow)]`.
pub(crate) fn im2col<S: Scalar>(x: &[S], p: Patch, g: &ConvGeom, cols: &mut [S]) {
    let plane = p.oh * p.ow;
    let mut row = 0;
    for c in 0..p.channels {
        let img = &x[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                row += 1;
                for oi in 0..p.oh {
                    let ii = (oi * g.stride.0 + ki * g.dilation.0) as isize - g.padding.0 as isize;
                    let out = &mut dst[oi * p.ow..(oi + 1) * p.ow];
                    if ii < 0 || ii >= p.h as isize {
                        out.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &img[ii as usize * p.w..(ii as usize + 1) * p.w];
                    let off = (kj * g.dilation.1) as isize - g.padding.1 as isize;
                    let (lo, hi) = valid_cols(off, g.stride.1, p.w, p.ow);
                    out[..lo].iter_mut().for_each(|v| *v = S::zero());
                    out[hi..].iter_mut().for_each(|v| *v = S::zero());
                    if g.stride.1 == 1 {
                        let start = (lo as isize + off) as usize;
                        out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (oj, v) in out[lo..hi].iter_mut().enumerate() {
                            *v = src[(((oj + lo) * g.stride.1) as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose input column `oj·stride + off` lies in `[0, w)`.
fn valid_cols(off: isize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off < 0 { ((-off + s - 1) / s) as usize } else { 0 };
    let span = w as isize - off;
    let hi = if span <= 0 { 0 } else { ((span + s - 1) / s) as usize };
    let hi = hi.min(ow);
    (lo.min(hi), hi)
}

/// Adjoint of [`im2col`]: scatters `cols` back onto `x`, accumulating.
pub(crate) fn col2im<S: Scalar>(cols: &[S], p: Patch, g: &ConvGeom, x: &mut [S]) {
    let plane = p.oh * p.ow;
    let mut row = 0;
    for c in 0..p.channels {
        let img = &mut x[c * p.h * p.w..(c + 1) * p.h * p.w];
        for ki in 0..p.kh {
            for kj in 0..p.kw {
                let src = &cols[row * plane..(row + 1) * plane];
                row += 1;
                for oi in 0..p.oh {
                    let ii = (oi * g.stride.0 + ki * g.dilation.0) as isize - g.padding.0 as isize;
                    if ii < 0 || ii >= p.h as isize {
                        continue;
                    }
                    let dst = &mut img[ii as usize * p.w..(ii as usize + 1) * p.w];
                    let off = (kj * g.dilation.1) as isize - g.padding.1 as isize;
                    let (lo, hi) = valid_cols(off, g.stride.1, p.w, p.ow);
                    let row_src = &src[oi * p.ow + lo..oi * p.ow + hi];
                    if g.stride.1 == 1 {
                        let start = (lo as isize + off) as usize;
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(row_src) {
                            *d += v;
                        }
                    } else {
                        for (oj, &v) in row_src.iter().enumerate() {
                            dst[(((oj + lo) * g.stride.1) as isize + off) as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
