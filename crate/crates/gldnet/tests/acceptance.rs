//! The ten acceptance criteria, run in order with one PASS/FAIL line each.
//!
//! `cargo test -p gldnet --test acceptance -- 3 7` runs a subset by number.
//! The process exits non-zero if any selected criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use gldnet::config::{Preset, RunConfig};
use gldnet::dataset::PairSource;
use gldnet::evaluate::{evaluate, EvalItem, LoadedNet};
use gldnet::fit::{fit, LAST_CKPT};
use gldnet::gradsuite::{run_suite, SuiteOptions};
use gldnet_core::data::{measured_snr_db, mix_at_snr, synth_toy_pair, toy_corpus, NoiseKind, ToyKind, TRAIN_SNRS_DB};
use gldnet_core::gld::{gld_block_forward, row_sums, BlockVariant, GldBlockParams, GldOptions};
use gldnet_core::metrics::{si_sdr, stoi};
use gldnet_core::network::{count_params, DecoderInit, GldNet, ModelConfig};
use gldnet_core::rng::seeded;
use gldnet_core::signal::{istft, stft, RISpectrogram, StftConfig, SAMPLE_RATE};
use gldnet_core::tensorcore::{AdamState, Ctx, Graph, Mode, ParamStore, Tensor};
use gldnet_core::trainer::{eval_loss, train_step, Batch, Precision, TrainConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let err: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let nrm: f64 = b.iter().map(|y| y * y).sum();
    (err / nrm).sqrt()
}

fn random_block_input(seed: u64) -> Tensor<f64> {
    let mut rng = seeded(seed);
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    Tensor::from_fn(&[4, 8, 8], |_| scale * rng.random_range(-1.0..1.0))
}

fn attention_rows() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut store = ParamStore::<f64>::new();
        let p = GldBlockParams::register(&mut store, seed, "gld", 4, 4, 4).map_err(|e| e.to_string())?;
        // nonzero α, β so the maps feed the output
        store.get_mut(p.alpha).value = Tensor::full(&[1], 0.5);
        store.get_mut(p.beta).value = Tensor::full(&[1], -0.5);
        let variant = if seed % 2 == 0 { BlockVariant::Speech } else { BlockVariant::Interference };
        let mut ctx = Ctx::new(&mut store, Mode::Train);
        let x = ctx.graph.constant(random_block_input(seed));
        let tr = gld_block_forward(&mut ctx, x, &p, variant, &GldOptions::default()).map_err(|e| e.to_string())?;
        for m in [tr.x, tr.y] {
            for s in row_sums(ctx.graph.value(m)) {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    check(worst <= 1e-6, format!("max |row sum − 1| = {worst:.2e} over 100 inputs"))
}

fn zero_init_degeneracy() -> Outcome {
    let mut nonzero = 0usize;
    for seed in 0..100u64 {
        let mut store = ParamStore::<f64>::new();
        let p = GldBlockParams::register(&mut store, seed, "gld", 4, 4, 4).map_err(|e| e.to_string())?;
        let variant = if seed % 2 == 0 { BlockVariant::Speech } else { BlockVariant::Interference };
        let mut ctx = Ctx::new(&mut store, Mode::Train);
        let x = ctx.graph.constant(random_block_input(seed ^ 0xa5));
        let tr = gld_block_forward(&mut ctx, x, &p, variant, &GldOptions::default()).map_err(|e| e.to_string())?;
        nonzero += ctx.graph.value(tr.l).data().iter().filter(|&&v| v != 0.0).count();
    }
    check(nonzero == 0, format!("{nonzero} nonzero entries of L over 100 inputs"))
}

fn gradient_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for seed in 0..10 {
        let o = SuiteOptions { seed, ops: false, ..SuiteOptions::default() };
        let r = run_suite(&o).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_error());
        samples += r.components.iter().map(|c| c.report.samples.len()).sum::<usize>();
    }
    check(worst <= 1e-4, format!("max relative error {worst:.2e} over {samples} coordinates, 10 seeds"))
}

fn stft_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let cfg = if seed % 2 == 0 { StftConfig::full() } else { StftConfig::tiny() };
        let x = gaussian(SAMPLE_RATE as usize, seed);
        let y = istft(&stft(&x, &cfg).map_err(|e| e.to_string())?, &cfg).map_err(|e| e.to_string())?;
        let (a, b) = (cfg.win_len, x.len() - cfg.win_len);
        worst = worst.max(rel_l2(&y[a..b], &x[a..b]));
    }
    check(worst <= 1e-6, format!("max interior relative L2 {worst:.2e} over 100 signals"))
}

fn decoder_equivalence() -> Outcome {
    let nets = [ModelConfig::full(), ModelConfig::tiny()]
        .map(|base| GldNet::<f64>::new(ModelConfig { decoder_init: DecoderInit::Istft, ..base.with_ri_head(true) }, 0));
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let net = nets[(seed % 2) as usize].as_ref().map_err(|e| e.to_string())?;
        let cfg = &net.cfg;
        let (f_in, bins) = (cfg.f_in(), cfg.stft.n_bins());
        let mut rng = seeded(seed);
        let t = rng.random_range(6..24);
        // the network's bins with the Nyquist bin reattached as zero
        let spec = Tensor::from_fn(&[t, bins, 2], |i| {
            if (i / 2) % bins == f_in {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let spec = RISpectrogram::new(spec).map_err(|e| e.to_string())?;
        let reference = istft(&spec, &cfg.stft).map_err(|e| e.to_string())?;
        let stacked = spec.stacked_frames();
        let frames = Tensor::from_fn(&[1, t, 2 * f_in], |i| {
            let (ti, j) = (i / (2 * f_in), i % (2 * f_in));
            let (plane, f) = (j / f_in, j % f_in);
            stacked.at(&[ti, plane * bins + f])
        });
        let mut g = Graph::new();
        let fv = g.constant(frames);
        let wv = g.constant(net.store.get(net.params.wave_dec).value.clone());
        let y = g.learnable_decoder(fv, wv, cfg.stft.hop).map_err(|e| e.to_string())?;
        let y = g.value(y).data();
        let (a, b) = (cfg.stft.win_len, reference.len() - cfg.stft.win_len);
        worst = worst.max(rel_l2(&y[a..b], &reference[a..b]));
    }
    check(worst <= 1e-5, format!("max interior relative L2 {worst:.2e} over 100 spectrograms"))
}

fn mixture_snr() -> Outcome {
    let mut worst: f64 = 0.0;
    for (k, &snr) in TRAIN_SNRS_DB.iter().enumerate() {
        for rep in 0..10u64 {
            let seed = 100 * k as u64 + rep;
            let clean = gaussian(16_000, seed);
            let noise: Vec<f64> = gaussian(9_000 + 1000 * rep as usize, seed ^ 1).iter().map(|v| 3.0 * v).collect();
            let m = mix_at_snr(&clean, &noise, snr, seed).map_err(|e| e.to_string())?;
            worst = worst.max((measured_snr_db(&m.clean, &m.noise) - snr).abs());
        }
    }
    check(worst <= 1e-6, format!("max |achieved − requested| = {worst:.2e} dB over {:?}", TRAIN_SNRS_DB))
}

fn overfit() -> Outcome {
    let pair = synth_toy_pair(ToyKind::Tones, NoiseKind::White, 0.0, 8000, 7).map_err(|e| e.to_string())?;
    let batch = Batch::<f32>::from_pairs(&[(pair.noisy, pair.clean)]).map_err(|e| e.to_string())?;
    let mut net = GldNet::<f32>::new(ModelConfig::tiny(), 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { lr: 2e-4, batch: 1, ..TrainConfig::default() };
    let mut opt = AdamState::new(&net.store, cfg.lr);
    let first = train_step(&mut net, &batch, &mut opt, &cfg).map_err(|e| e.to_string())?.loss;
    for _ in 1..500 {
        train_step(&mut net, &batch, &mut opt, &cfg).map_err(|e| e.to_string())?;
    }
    let eval = eval_loss(&mut net, &batch).map_err(|e| e.to_string())?;
    // the loss of a 501st step is computed before its update: the MSE after 500 steps
    let after = train_step(&mut net, &batch, &mut opt, &cfg).map_err(|e| e.to_string())?.loss;
    let ratio = after / first;
    check(ratio <= 0.1, format!("MSE {first:.3e} → {after:.3e} after 500 steps, ratio {ratio:.3} (running-stats MSE {eval:.3e})"))
}

fn toy_gain() -> Outcome {
    const STEPS: u64 = 3000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut run = RunConfig::preset(Preset::Tiny);
    run.apply_text(
        "train.batch = 4\ntrain.crop_len = 4000\ntrain.toy_pairs = 200\ntrain.toy_val_pairs = 8\ntrain.toy_len = 16000\ntrain.toy_snr_db = 0",
    )
    .map_err(|e| e.to_string())?;
    run.train.max_steps = STEPS;
    run.train.eval_every = STEPS;
    run.train.precision = Precision::F32;
    let mut source = PairSource::toy(&run.toy, run.train.seed).map_err(|e| e.to_string())?;
    fit(&run, &mut source, dir.path(), false).map_err(|e| e.to_string())?;
    let (mut net, _) = LoadedNet::load(&dir.path().join(LAST_CKPT)).map_err(|e| e.to_string())?;

    let test = toy_corpus(ToyKind::Tones, NoiseKind::White, 0.0, 16_000, 50, run.train.seed, "toy-test")
        .map_err(|e| e.to_string())?;
    let items: Vec<EvalItem> = test
        .into_iter()
        .enumerate()
        .map(|(i, m)| EvalItem { id: format!("toy{i}"), condition_db: 0.0, noisy: m.noisy, clean: m.clean })
        .collect();
    let mut sdr_gain = 0.0;
    let mut wins = 0;
    for it in &items {
        let e = net.enhance(&it.noisy).map_err(|e| e.to_string())?;
        let sdr = |x: &[f64]| si_sdr(&it.clean, x).map_err(|e| e.to_string());
        let st = |x: &[f64]| stoi(&it.clean, x, SAMPLE_RATE).map_err(|e| e.to_string());
        sdr_gain += sdr(&e)? - sdr(&it.noisy)?;
        wins += usize::from(st(&e)? > st(&it.noisy)?);
    }
    sdr_gain /= items.len() as f64;
    let frac = wins as f64 / items.len() as f64;
    check(
        sdr_gain >= 3.0 && frac >= 0.8,
        format!(
            "mean SI-SDR gain {sdr_gain:.2} dB (need ≥ 3), STOI higher on {wins}/{} pairs = {:.0}% (need ≥ 80%)",
            items.len(),
            100.0 * frac
        ),
    )
}

fn ablation_structure() -> Outcome {
    let cfg = |sb, ib| ModelConfig { enable_sb: sb, enable_ib: ib, ..ModelConfig::tiny() };
    let pair = synth_toy_pair(ToyKind::Tones, NoiseKind::White, 0.0, 4096, 2).map_err(|e| e.to_string())?;
    let batch = Batch::<f32>::from_pairs(&[(pair.noisy, pair.clean)]).map_err(|e| e.to_string())?;
    let mut counts = Vec::new();
    for (sb, ib) in [(true, true), (false, true), (true, false), (false, false)] {
        let mut net = GldNet::<f32>::new(cfg(sb, ib), 1).map_err(|e| e.to_string())?;
        let before = net.store.clone();
        let mut opt = AdamState::new(&net.store, 2e-4);
        let r = train_step(&mut net, &batch, &mut opt, &TrainConfig::default()).map_err(|e| e.to_string())?;
        let moved = before.entries().iter().zip(net.store.entries()).any(|(a, b)| a.value != b.value);
        if !r.loss.is_finite() || !moved {
            return Err(format!("sb={sb} ib={ib}: step did not update (loss {})", r.loss));
        }
        counts.push(count_params(&cfg(sb, ib)).map_err(|e| e.to_string())?);
    }
    let [full, no_sb, no_ib, none] = counts[..] else { unreachable!() };
    check(
        full > no_ib && no_ib > none && full > no_sb,
        format!("params full {full}, w/o SB {no_sb}, w/o IB {no_ib}, w/o SB+IB {none}"),
    )
}

fn metric_sanity() -> Outcome {
    let pair = synth_toy_pair(ToyKind::Tones, NoiseKind::White, 5.0, 24_000, 4).map_err(|e| e.to_string())?;
    let own = stoi(&pair.clean, &pair.clean, SAMPLE_RATE).map_err(|e| e.to_string())?;
    let base = si_sdr(&pair.clean, &pair.noisy).map_err(|e| e.to_string())?;
    let mut drift: f64 = 0.0;
    for a in [1e-3, 0.37, 2.0, 750.0] {
        let scaled: Vec<f64> = pair.noisy.iter().map(|v| a * v).collect();
        drift = drift.max((si_sdr(&pair.clean, &scaled).map_err(|e| e.to_string())? - base).abs());
    }
    let mut items = Vec::new();
    for (k, snr) in [-5.0, 0.0, 5.0, 10.0].into_iter().enumerate() {
        let m = synth_toy_pair(ToyKind::Tones, NoiseKind::White, snr, 20_000, 30 + k as u64).map_err(|e| e.to_string())?;
        items.push(EvalItem { id: format!("u{k}"), condition_db: snr, noisy: m.noisy, clean: m.clean });
    }
    let mut net = LoadedNet::F32(GldNet::new(ModelConfig::tiny(), 0).map_err(|e| e.to_string())?);
    let table = evaluate(&mut net, &items).map_err(|e| e.to_string())?.table();
    let lines: Vec<&str> = table.lines().collect();
    let header_ok = lines.len() == 4
        && lines[1]
            .split('|')
            .skip(1)
            .all(|b| b.split_whitespace().collect::<Vec<_>>() == ["-5", "0", "5", "10", "Avg."]);
    let rows_ok = lines.len() == 4 && lines[2].starts_with("Unprocessed") && lines[3].starts_with("GLD-Net");
    check(
        own >= 0.999 && drift <= 1e-9 && header_ok && rows_ok,
        format!("stoi(x,x) {own:.6}, si_sdr scale drift {drift:.1e}, table layout {}", if header_ok && rows_ok { "ok" } else { "wrong" }),
    )
}

const CRITERIA: [(&str, fn() -> Outcome); 10] = [
    ("attention rows sum to one", attention_rows),
    ("zero-init degeneracy", zero_init_degeneracy),
    ("gradient correctness", gradient_correctness),
    ("STFT fidelity", stft_fidelity),
    ("learnable-decoder equivalence", decoder_equivalence),
    ("mixture SNR exactness", mixture_snr),
    ("overfit convergence", overfit),
    ("toy enhancement gain", toy_gain),
    ("ablation structure", ablation_structure),
    ("metric sanity", metric_sanity),
];

fn main() -> ExitCode {
    // libtest flags such as --nocapture may be forwarded by cargo; numbers select criteria
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !picked.is_empty() && !picked.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let (status, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {status} {name}: {detail} [{:.1} s]", t0.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
