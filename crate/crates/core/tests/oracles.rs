//! Library kernels against independent brute-force implementations.

use gldnet_core::gld::{channel_attention, GldOptions};
use gldnet_core::rng::seeded;
use gldnet_core::signal::{hann, istft, stft, StftConfig};
use gldnet_core::tensorcore::{BnMode, ConvGeom, Ctx, Graph, LstmLayerVars, Mode, ParamStore, Tensor, BN_EPS};
use gldnet_core::trainer::mse_loss;
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct cross-correlation over `[N×C×H×W]`.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], g: ConvGeom) -> Tensor<f64> {
    let [n, ci, h, wd] = x.shape().try_into().unwrap();
    let [co, _, kh, kw] = w.shape().try_into().unwrap();
    let oh = (h + 2 * g.padding.0 - g.dilation.0 * (kh - 1) - 1) / g.stride.0 + 1;
    let ow = (wd + 2 * g.padding.1 - g.dilation.1 * (kw - 1) - 1) / g.stride.1 + 1;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for s in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let r = (i * g.stride.0 + a * g.dilation.0) as isize - g.padding.0 as isize;
                                let q = (j * g.stride.1 + bb * g.dilation.1) as isize - g.padding.1 as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= wd as isize {
                                    continue;
                                }
                                acc += x.at(&[s, c, r as usize, q as usize]) * w.at(&[o, c, a, bb]);
                            }
                        }
                    }
                    let k = out.offset(&[s, o, i, j]);
                    out.data_mut()[k] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form of the transposed convolution, written independently of
/// the gather form above.
fn deconv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, g: ConvGeom) -> Tensor<f64> {
    let [n, ci, h, wd] = x.shape().try_into().unwrap();
    let [_, co, kh, kw] = w.shape().try_into().unwrap();
    let oh = (h - 1) * g.stride.0 + g.dilation.0 * (kh - 1) + 1 + g.output_padding.0 - 2 * g.padding.0;
    let ow = (wd - 1) * g.stride.1 + g.dilation.1 * (kw - 1) + 1 + g.output_padding.1 - 2 * g.padding.1;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for s in 0..n {
        for c in 0..ci {
            for i in 0..h {
                for j in 0..wd {
                    let v = x.at(&[s, c, i, j]);
                    for o in 0..co {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let r = (i * g.stride.0 + a * g.dilation.0) as isize - g.padding.0 as isize;
                                let q = (j * g.stride.1 + bb * g.dilation.1) as isize - g.padding.1 as isize;
                                if r < 0 || q < 0 || r >= oh as isize || q >= ow as isize {
                                    continue;
                                }
                                let k = out.offset(&[s, o, r as usize, q as usize]);
                                out.data_mut()[k] += v * w.at(&[c, o, a, bb]);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loops() {
    let cases = [
        ([2, 3, 5, 7], [4, 3, 3, 3], ConvGeom::new((1, 1), (1, 1))),
        ([1, 2, 4, 8], [3, 2, 3, 3], ConvGeom::new((1, 2), (1, 1))),
        ([2, 1, 6, 5], [2, 1, 2, 3], ConvGeom::new((2, 1), (0, 2))),
        ([1, 2, 7, 7], [2, 2, 3, 3], ConvGeom { dilation: (2, 1), ..ConvGeom::new((1, 1), (2, 1)) }),
    ];
    for (k, (xs, ws, geom)) in cases.into_iter().enumerate() {
        let (x, w) = (random(&xs, 10 + k as u64), random(&ws, 20 + k as u64));
        let b = random(&[ws[0]], 30 + k as u64);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv), geom).unwrap();
        let want = conv_oracle(&x, &w, b.data(), geom);
        assert_eq!(g.shape(y), want.shape(), "case {k}");
        assert!(max_abs_diff(g.value(y).data(), want.data()) < 1e-12, "case {k}");
    }
}

#[test]
fn deconv2d_matches_scatter_loops() {
    let cases = [
        ([1, 3, 4, 4], [3, 2, 3, 3], ConvGeom::new((1, 1), (1, 1))),
        ([2, 2, 4, 2], [2, 3, 3, 3], ConvGeom::new((1, 2), (1, 1)).with_output_padding((0, 1))),
        ([1, 2, 3, 3], [2, 2, 2, 2], ConvGeom::new((2, 2), (0, 0))),
    ];
    for (k, (xs, ws, geom)) in cases.into_iter().enumerate() {
        let (x, w) = (random(&xs, 40 + k as u64), random(&ws, 50 + k as u64));
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.deconv2d(xv, wv, None, geom).unwrap();
        let want = deconv_oracle(&x, &w, geom);
        assert_eq!(g.shape(y), want.shape(), "case {k}");
        assert!(max_abs_diff(g.value(y).data(), want.data()) < 1e-12, "case {k}");
    }
}

#[test]
fn stride_one_unit_kernel_deconv_is_identity() {
    let x = random(&[1, 2, 5, 6], 1);
    let w = Tensor::from_fn(&[2, 2, 1, 1], |i| if i == 0 || i == 3 { 1.0 } else { 0.0 });
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w));
    let y = g.deconv2d(xv, wv, None, ConvGeom::default()).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn stride_1x2_deconv_restores_width() {
    // 1×4×2 → 1×4×4 with output padding (0, 1)
    let mut g = Graph::new();
    let x = g.constant(random(&[1, 4, 2], 2));
    let w = g.constant(random(&[1, 1, 3, 3], 3));
    let geom = ConvGeom::new((1, 2), (1, 1)).with_output_padding((0, 1));
    let y = g.deconv2d(x, w, None, geom).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 4]);
}

#[test]
fn batchnorm_train_and_eval_match_formula() {
    let x = random(&[3, 2, 4, 5], 7);
    let gamma = Tensor::new(&[2], vec![1.5, -0.5]).unwrap();
    let beta = Tensor::new(&[2], vec![0.25, 2.0]).unwrap();
    let per_channel = |c: usize| -> Vec<f64> {
        (0..3).flat_map(|s| (0..20).map(move |k| (s, k))).map(|(s, k)| x.data()[(s * 2 + c) * 20 + k]).collect()
    };
    let mut g = Graph::new();
    let (xv, gv, bv) = (g.constant(x.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
    let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
    let y = g.batchnorm2d(xv, gv, bv, BnMode::Train { running: Some((&mut rm, &mut rv)) }).unwrap();
    for c in 0..2 {
        let v = per_channel(c);
        let mean = v.iter().sum::<f64>() / 60.0;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 60.0;
        for s in 0..3 {
            for k in 0..20 {
                let i = (s * 2 + c) * 20 + k;
                let want = gamma.data()[c] * (x.data()[i] - mean) / (var + BN_EPS).sqrt() + beta.data()[c];
                assert!((g.value(y).data()[i] - want).abs() < 1e-12);
            }
        }
        // momentum 0.9 on the running buffers, unbiased variance
        assert!((rm[c] - 0.1 * mean).abs() < 1e-12);
        assert!((rv[c] - (0.9 + 0.1 * var * 60.0 / 59.0)).abs() < 1e-12);
    }
    let mut g = Graph::new();
    let (xv, gv, bv) = (g.constant(x.clone()), g.constant(gamma.clone()), g.constant(beta.clone()));
    let y = g.batchnorm2d(xv, gv, bv, BnMode::Eval { mean: &rm, var: &rv }).unwrap();
    for (i, &v) in x.data().iter().enumerate() {
        let c = (i / 20) % 2;
        let want = gamma.data()[c] * (v - rm[c]) / (rv[c] + BN_EPS).sqrt() + beta.data()[c];
        assert!((g.value(y).data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn lstm_matches_scalar_recurrence() {
    let (n, t, d, h) = (2, 5, 3, 4);
    let x = random(&[n, t, d], 1);
    let wih = random(&[4 * h, d], 2);
    let whh = random(&[4 * h, h], 3);
    let bias = random(&[4 * h], 4);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let p = LstmLayerVars { w_ih: g.constant(wih.clone()), w_hh: g.constant(whh.clone()), bias: g.constant(bias.clone()) };
    let y = g.lstm_layer(xv, p).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for s in 0..n {
        let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
        for step in 0..t {
            let z: Vec<f64> = (0..4 * h)
                .map(|r| {
                    bias.data()[r]
                        + (0..d).map(|k| wih.at(&[r, k]) * x.at(&[s, step, k])).sum::<f64>()
                        + (0..h).map(|k| whh.at(&[r, k]) * hs[k]).sum::<f64>()
                })
                .collect();
            for j in 0..h {
                let (i, f, gg, o) = (sig(z[j]), sig(z[h + j]), z[2 * h + j].tanh(), sig(z[3 * h + j]));
                cs[j] = f * cs[j] + i * gg;
                hs[j] = o * cs[j].tanh();
                assert!((g.value(y).at(&[s, step, j]) - hs[j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn stft_matches_direct_dft() {
    let cfg = StftConfig::tiny();
    let mut rng = seeded(5);
    let x: Vec<f64> = (0..cfg.win_len + 3 * cfg.hop).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = stft(&x, &cfg).unwrap();
    let w = hann(cfg.win_len, true).unwrap();
    for t in 0..s.frames() {
        for f in 0..s.bins() {
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..cfg.win_len {
                let v = x.get(t * cfg.hop + k).copied().unwrap_or(0.0) * w[k];
                let ang = -2.0 * std::f64::consts::PI * (f * k) as f64 / cfg.fft_size as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            assert!((s.re(t, f) - re).abs() < 1e-10 && (s.im(t, f) - im).abs() < 1e-10, "frame {t} bin {f}");
        }
    }
    assert_eq!(istft(&s, &cfg).unwrap().len(), cfg.output_len(s.frames()));
}

/// `G_j = α·Σ_i softmax_i(⟨K_i, V_j⟩)·V_i` evaluated with plain loops.
fn attention_oracle(v: &Tensor<f64>, k: &Tensor<f64>, alpha: f64, scale: bool) -> (Vec<f64>, Vec<f64>) {
    let c = v.shape()[0];
    let tf = v.numel() / c;
    let (vd, kd) = (v.data(), k.data());
    let mut map = vec![0.0; c * c];
    let mut out = vec![0.0; c * tf];
    let s = if scale { 1.0 / (tf as f64).sqrt() } else { 1.0 };
    for j in 0..c {
        let logits: Vec<f64> = (0..c)
            .map(|i| s * (0..tf).map(|p| kd[i * tf + p] * vd[j * tf + p]).sum::<f64>())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for i in 0..c {
            map[j * c + i] = (logits[i] - m).exp() / z;
        }
        for p in 0..tf {
            out[j * tf + p] = alpha * (0..c).map(|i| map[j * c + i] * vd[i * tf + p]).sum::<f64>();
        }
    }
    (map, out)
}

#[test]
fn channel_attention_matches_dense_oracle() {
    for (seed, c, scale) in [(1, 2, false), (2, 2, true), (3, 5, true), (4, 3, false)] {
        let v = random(&[c, 3, 4], seed);
        let k = random(&[c, 3, 4], seed + 100);
        let alpha = if seed == 1 { 1.0 } else { 0.8 };
        let mut store = ParamStore::<f64>::new();
        let a = store.add_param("alpha", Tensor::scalar(alpha)).unwrap();
        let mut ctx = Ctx::new(&mut store, Mode::Eval);
        let (vv, kv) = (ctx.graph.constant(v.clone()), ctx.graph.constant(k.clone()));
        let av = ctx.param(a);
        let opts = GldOptions { attention_scale: scale, ..GldOptions::default() };
        let att = channel_attention(&mut ctx, vv, kv, av, &opts).unwrap();
        let (map, out) = attention_oracle(&v, &k, alpha, scale);
        assert!(max_abs_diff(ctx.graph.value(att.map).data(), &map) < 1e-12);
        assert!(max_abs_diff(ctx.graph.value(att.out).data(), &out) < 1e-12);
        assert_eq!(ctx.graph.shape(att.out), v.shape());
    }
}

#[test]
fn identical_channels_give_uniform_rows() {
    let row = random(&[1, 2, 3], 9);
    let v = Tensor::from_fn(&[4, 2, 3], |i| row.data()[i % 6]);
    let mut store = ParamStore::<f64>::new();
    let a = store.add_param("alpha", Tensor::scalar(0.5)).unwrap();
    let mut ctx = Ctx::new(&mut store, Mode::Eval);
    let (vv, kv) = (ctx.graph.constant(v.clone()), ctx.graph.constant(v.clone()));
    let av = ctx.param(a);
    let att = channel_attention(&mut ctx, vv, kv, av, &GldOptions::default()).unwrap();
    assert!(ctx.graph.value(att.map).data().iter().all(|&m| (m - 0.25).abs() < 1e-15));
    // G_j = α·V̄, and every channel of V is the same
    for (o, x) in ctx.graph.value(att.out).data().iter().zip(v.data()) {
        assert!((o - 0.5 * x).abs() < 1e-15);
    }
}

#[test]
fn mse_gradient_is_two_residual_over_count() {
    let pred = random(&[3, 7], 11);
    let target = random(&[3, 7], 12);
    let mut g = Graph::new();
    let (p, t) = (g.input(pred.clone(), true), g.constant(target.clone()));
    let l = mse_loss(&mut g, p, t).unwrap();
    g.backward(l).unwrap();
    let want: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 21.0;
    assert!((g.value(l).item().unwrap() - want).abs() < 1e-15);
    for ((gr, a), b) in g.grad(p).unwrap().iter().zip(pred.data()).zip(target.data()) {
        assert!((gr - 2.0 * (a - b) / 21.0).abs() < 1e-15);
    }
    let offset = Tensor::from_fn(&[3, 7], |i| target.data()[i] + 0.1);
    let mut g = Graph::new();
    let (p, t) = (g.constant(offset), g.constant(target));
    let l = mse_loss(&mut g, p, t).unwrap();
    assert!((g.value(l).item().unwrap() - 0.01).abs() < 1e-15);
}
