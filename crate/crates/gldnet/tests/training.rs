//! Training driver: validation cadence, best checkpoint, resume and
//! checkpoint round trips.

use std::path::Path;

use gldnet::checkpoint::Checkpoint;
use gldnet::config::{Preset, RunConfig};
use gldnet::dataset::PairSource;
use gldnet::fit::{fit, FitSummary, BEST_CKPT, LAST_CKPT, LOG_FILE};
use gldnet::Error;
use gldnet_core::network::{GldNet, ModelConfig};
use gldnet_core::tensorcore::AdamState;
use gldnet_core::trainer::{train_step, Batch, Precision};

fn small_run(max_steps: u64, eval_every: u64, precision: Precision) -> RunConfig {
    let mut run = RunConfig::preset(Preset::Tiny);
    run.apply_text(
        "train.batch = 1\ntrain.crop_len = 1024\ntrain.toy_pairs = 4\ntrain.toy_val_pairs = 2\ntrain.toy_len = 4096\ntrain.seed = 5",
    )
    .unwrap();
    run.train.max_steps = max_steps;
    run.train.eval_every = eval_every;
    run.train.precision = precision;
    run.validate().unwrap();
    run
}

fn run_fit(run: &RunConfig, dir: &Path, resume: bool) -> FitSummary {
    let mut src = PairSource::toy(&run.toy, run.train.seed).unwrap();
    fit(run, &mut src, dir, resume).unwrap()
}

#[test]
fn validation_cadence_and_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_fit(&small_run(200, 50, Precision::F32), dir.path(), false);
    assert_eq!(s.log.iter().map(|r| r.step).collect::<Vec<_>>(), [50, 100, 150, 200]);
    let lines = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 4);
    assert!(s.log.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));

    let best = s.best_val_loss.unwrap();
    assert!(s.log.iter().all(|r| best <= r.val_loss));
    let ck = Checkpoint::load(&dir.path().join(BEST_CKPT)).unwrap();
    assert_eq!(Some(ck.step), s.best_step);
    assert_eq!(Checkpoint::load(&dir.path().join(LAST_CKPT)).unwrap().step, 200);
}

#[test]
fn resume_continues_the_step_counter() {
    for precision in [Precision::F32, Precision::F64] {
        let whole = tempfile::tempdir().unwrap();
        let reference = run_fit(&small_run(60, 20, precision), whole.path(), false);

        let split = tempfile::tempdir().unwrap();
        let first = run_fit(&small_run(40, 20, precision), split.path(), false);
        assert_eq!(first.final_step, 40);
        let second = run_fit(&small_run(60, 20, precision), split.path(), true);
        assert_eq!(second.start_step, 40);
        assert_eq!(second.final_step, 60);
        assert_eq!(second.log.iter().map(|r| r.step).collect::<Vec<_>>(), [60]);
        // same batches, restored Adam moments: the continuation is exact
        assert_eq!(second.train_losses, reference.train_losses[40..]);
        assert_eq!(second.log, reference.log[2..]);
        let log = std::fs::read_to_string(split.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 3);
    }
}

#[test]
fn identical_runs_give_identical_losses() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = small_run(30, 10, Precision::F32);
    assert_eq!(run_fit(&run, a.path(), false).train_losses, run_fit(&run, b.path(), false).train_losses);
}

fn round_trip<S: gldnet_core::Scalar>() {
    let cfg = ModelConfig::tiny();
    let mut net = GldNet::<S>::new(cfg, 8).unwrap();
    let mut opt = AdamState::new(&net.store, 2e-4);
    let pair: Vec<f64> = (0..1500).map(|i| (0.031 * i as f64).sin() * 0.4).collect();
    let noisy: Vec<f64> = pair.iter().enumerate().map(|(i, v)| v + 0.1 * (1.7 * i as f64).cos()).collect();
    let batch = Batch::<S>::from_pairs(&[(noisy.clone(), pair)]).unwrap();
    // a few steps so the batchnorm buffers and Adam moments are non-trivial
    for _ in 0..3 {
        train_step(&mut net, &batch, &mut opt, &Default::default()).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    Checkpoint::capture(&net, Some(&opt), 3, "").save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    assert!(ck.has_optimizer());
    let mut back = GldNet::<S>::new(ModelConfig::tiny(), 99).unwrap();
    let mut back_opt = AdamState::new(&back.store, 2e-4);
    ck.restore(&mut back, Some(&mut back_opt), &path).unwrap();
    assert_eq!(net.enhance(&noisy).unwrap(), back.enhance(&noisy).unwrap());
    assert_eq!(back_opt.step, 3);
    assert_eq!(opt.m, back_opt.m);
    assert_eq!(opt.v, back_opt.v);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    round_trip::<f32>();
    round_trip::<f64>();
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let net = GldNet::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let bytes = Checkpoint::capture(&net, None, 0, "").to_bytes();
    let path = Path::new("flipped.ckpt");
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x10;
    let err = Checkpoint::from_bytes(&flipped, path).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9], path), Err(Error::Checkpoint { .. })));
    assert!(matches!(Checkpoint::from_bytes(b"RIFF....WAVE", path), Err(Error::Checkpoint { .. })));

    // a checkpoint of another architecture does not load
    let other = GldNet::<f32>::new(ModelConfig { enable_ib: false, ..ModelConfig::tiny() }, 1).unwrap();
    let ck = Checkpoint::capture(&other, None, 0, "");
    let mut target = GldNet::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    assert!(matches!(ck.restore(&mut target, None, path), Err(Error::Checkpoint { .. })));
}
