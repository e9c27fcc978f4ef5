//! 2-D convolution (cross-correlation) and its transpose, batched over a
//! leading sample axis. Both lower to GEMM through im2col/col2im.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{Graph, Op, Var};
use super::linalg::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom, Patch};
use super::tensor::Tensor;
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Output extent of a convolution along one axis, if the kernel fits.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    (len + 2 * pad >= span && stride > 0).then(|| (len + 2 * pad - span) / stride + 1)
}

/// Output extent of a transposed convolution along one axis. `out_pad` must
/// be smaller than the stride so the result maps back onto `len` under the
/// forward convolution.
pub fn deconv_out_len(len: usize, k: usize, stride: usize, pad: usize, dil: usize, out_pad: usize) -> Option<usize> {
    if stride == 0 || out_pad >= stride {
        return None;
    }
    let full = (len - 1) * stride + dil * (k - 1) + out_pad + 1;
    (full > 2 * pad).then(|| full - 2 * pad)
}

/// `[N, C, H, W]` view of a rank-3 or rank-4 activation.
fn nchw(shape: &[usize], what: &str) -> Result<[usize; 4]> {
    match *shape {
        [c, h, w] => Ok([1, c, h, w]),
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(dim_err!("{what}: expected [C×T×F] or [N×C×T×F], got {:?}", shape)),
    }
}

fn out_shape(rank: usize, n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if rank == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}

impl<S: Scalar> Graph<S> {
    /// Cross-correlation of `x` with `w[C_out×C_in×kT×kF]` plus optional
    /// per-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let [n, ci, h, wd] = nchw(&sx, "conv2d")?;
        let sw = self.shape(w).to_vec();
        let [co, wci, kh, kw] = match *sw {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(dim_err!("conv2d: weight must be [C_out×C_in×kT×kF], got {:?}", sw)),
        };
        if wci != ci {
            return Err(dim_err!("conv2d: input {:?} has {ci} channels, weight {:?} expects {wci}", sx, sw));
        }
        check_bias(self, b, co, "conv2d")?;
        let oh = conv_out_len(h, kh, geom.stride.0, geom.padding.0, geom.dilation.0);
        let ow = conv_out_len(wd, kw, geom.stride.1, geom.padding.1, geom.dilation.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(dim_err!("conv2d: kernel {kh}×{kw} larger than padded input {:?} (padding {:?})", sx, geom.padding));
        };
        let p = Patch { channels: ci, h, w: wd, kh, kw, oh, ow };
        let ck = ci * kh * kw;
        let plane = oh * ow;
        let mut cols = vec![S::zero(); ck * plane];
        let mut out = vec![S::zero(); n * co * plane];
        let (xd, wdata) = (self.data(x), self.data(w));
        for s in 0..n {
            im2col(&xd[s * ci * h * wd..(s + 1) * ci * h * wd], p, &geom, &mut cols);
            let dst = &mut out[s * co * plane..(s + 1) * co * plane];
            if let Some(b) = b {
                for (c, &bv) in self.data(b).iter().enumerate() {
                    dst[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm_nn(co, plane, ck, wdata, &cols, dst);
        }
        let value = Tensor::new(&out_shape(sx.len(), n, co, oh, ow), out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Transposed convolution with weight `w[C_in×C_out×kT×kF]`: the adjoint
    /// of [`Graph::conv2d`] under the same geometry, plus optional bias.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let [n, ci, h, wd] = nchw(&sx, "deconv2d")?;
        let sw = self.shape(w).to_vec();
        let [wci, co, kh, kw] = match *sw {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(dim_err!("deconv2d: weight must be [C_in×C_out×kT×kF], got {:?}", sw)),
        };
        if wci != ci {
            return Err(dim_err!("deconv2d: input {:?} has {ci} channels, weight {:?} expects {wci}", sx, sw));
        }
        check_bias(self, b, co, "deconv2d")?;
        let g = &geom;
        let oh = deconv_out_len(h, kh, g.stride.0, g.padding.0, g.dilation.0, g.output_padding.0);
        let ow = deconv_out_len(wd, kw, g.stride.1, g.padding.1, g.dilation.1, g.output_padding.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(dim_err!(
                "deconv2d: inconsistent geometry for input {:?}: stride {:?}, padding {:?}, output_padding {:?}",
                sx, g.stride, g.padding, g.output_padding
            ));
        };
        // The output plays the role of the convolution input.
        let p = Patch { channels: co, h: oh, w: ow, kh, kw, oh: h, ow: wd };
        let ck = co * kh * kw;
        let plane_in = h * wd;
        let plane_out = oh * ow;
        let mut cols = vec![S::zero(); ck * plane_in];
        let mut out = vec![S::zero(); n * co * plane_out];
        let (xd, wdata) = (self.data(x), self.data(w));
        for s in 0..n {
            cols.iter_mut().for_each(|v| *v = S::zero());
            gemm_tn(ck, plane_in, ci, wdata, &xd[s * ci * plane_in..(s + 1) * ci * plane_in], &mut cols);
            let dst = &mut out[s * co * plane_out..(s + 1) * co * plane_out];
            col2im(&cols, p, g, dst);
            if let Some(b) = b {
                for (c, &bv) in self.data(b).iter().enumerate() {
                    dst[c * plane_out..(c + 1) * plane_out].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        let value = Tensor::new(&out_shape(sx.len(), n, co, oh, ow), out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Deconv2d { x, w, b, geom }, rg))
    }
}

fn check_bias<S: Scalar>(g: &Graph<S>, b: Option<Var>, co: usize, what: &str) -> Result<()> {
    if let Some(b) = b {
        if g.value(b).numel() != co {
            return Err(dim_err!("{what}: bias {:?} for {co} output channels", g.shape(b)));
        }
    }
    Ok(())
}

fn bias_grad<S: Scalar>(grad: &[S], n: usize, co: usize, plane: usize) -> Vec<S> {
    let mut d = vec![S::zero(); co];
    for s in 0..n {
        for (c, dv) in d.iter_mut().enumerate() {
            let base = (s * co + c) * plane;
            *dv += grad[base..base + plane].iter().copied().sum::<S>();
        }
    }
    d
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<S: Scalar>(
    gr: &Graph<S>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeom,
    out_shape: &[usize],
    grad: &[S],
    out: &mut Vec<(Var, Vec<S>)>,
) {
    let [n, ci, h, wd] = nchw(gr.shape(x), "conv2d").expect("checked in forward");
    let sw = gr.shape(w);
    let (co, kh, kw) = (sw[0], sw[2], sw[3]);
    let (oh, ow) = (out_shape[out_shape.len() - 2], out_shape[out_shape.len() - 1]);
    let p = Patch { channels: ci, h, w: wd, kh, kw, oh, ow };
    let ck = ci * kh * kw;
    let plane = oh * ow;
    let (need_x, need_w) = (gr.rg(x), gr.rg(w));
    let xd = gr.data(x);
    let wdata = gr.data(w);
    let mut dw = vec![S::zero(); if need_w { co * ck } else { 0 }];
    let mut dx = vec![S::zero(); if need_x { n * ci * h * wd } else { 0 }];
    let mut cols = vec![S::zero(); ck * plane];
    for s in 0..n {
        let gs = &grad[s * co * plane..(s + 1) * co * plane];
        if need_w {
            im2col(&xd[s * ci * h * wd..(s + 1) * ci * h * wd], p, geom, &mut cols);
            gemm_nt(co, ck, plane, gs, &cols, &mut dw);
        }
        if need_x {
            cols.iter_mut().for_each(|v| *v = S::zero());
            gemm_tn(ck, plane, co, wdata, gs, &mut cols);
            col2im(&cols, p, geom, &mut dx[s * ci * h * wd..(s + 1) * ci * h * wd]);
        }
    }
    if need_x {
        out.push((x, dx));
    }
    if need_w {
        out.push((w, dw));
    }
    if let Some(b) = b.filter(|&b| gr.rg(b)) {
        out.push((b, bias_grad(grad, n, co, plane)));
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn deconv2d_backward<S: Scalar>(
    gr: &Graph<S>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: &ConvGeom,
    out_shape: &[usize],
    grad: &[S],
    out: &mut Vec<(Var, Vec<S>)>,
) {
    let [n, ci, h, wd] = nchw(gr.shape(x), "deconv2d").expect("checked in forward");
    let sw = gr.shape(w);
    let (co, kh, kw) = (sw[1], sw[2], sw[3]);
    let (oh, ow) = (out_shape[out_shape.len() - 2], out_shape[out_shape.len() - 1]);
    let p = Patch { channels: co, h: oh, w: ow, kh, kw, oh: h, ow: wd };
    let ck = co * kh * kw;
    let plane_in = h * wd;
    let plane_out = oh * ow;
    let (need_x, need_w) = (gr.rg(x), gr.rg(w));
    let xd = gr.data(x);
    let wdata = gr.data(w);
    let mut dw = vec![S::zero(); if need_w { ci * ck } else { 0 }];
    let mut dx = vec![S::zero(); if need_x { n * ci * plane_in } else { 0 }];
    let mut cols = vec![S::zero(); ck * plane_in];
    for s in 0..n {
        im2col(&grad[s * co * plane_out..(s + 1) * co * plane_out], p, geom, &mut cols);
        if need_x {
            gemm_nn(ci, plane_in, ck, wdata, &cols, &mut dx[s * ci * plane_in..(s + 1) * ci * plane_in]);
        }
        if need_w {
            gemm_nt(ci, ck, plane_in, &xd[s * ci * plane_in..(s + 1) * ci * plane_in], &cols, &mut dw);
        }
    }
    if need_x {
        out.push((x, dx));
    }
    if need_w {
        out.push((w, dw));
    }
    if let Some(b) = b.filter(|&b| gr.rg(b)) {
        out.push((b, bias_grad(grad, n, co, plane_out)));
    }
}
