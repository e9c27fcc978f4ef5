//! Training loop with periodic validation, checkpoints and a JSON-lines log.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gldnet_core::network::GldNet;
use gldnet_core::rng::derive_seed;
use gldnet_core::scalar::Scalar;
use gldnet_core::tensorcore::AdamState;
use gldnet_core::trainer::{eval_loss, train_step, Batch, Precision};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::PairSource;
use crate::error::{Error, Result};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";

/// One validation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Completed optimizer steps.
    pub step: u64,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    pub val_loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    /// Records written by this call.
    pub log: Vec<LogRecord>,
    pub start_step: u64,
    pub final_step: u64,
    pub best_step: Option<u64>,
    pub best_val_loss: Option<f64>,
    /// Training loss of every step run by this call.
    pub train_losses: Vec<f64>,
}

/// Seed of the batch drawn at `step`.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    derive_seed(seed, &format!("step{step}"))
}

/// Mean loss over the validation pairs, one pair at a time.
pub fn validation_loss<S: Scalar>(net: &mut GldNet<S>, source: &PairSource) -> Result<f64> {
    let val = source.validation();
    let mut sum = 0.0;
    for m in val {
        let b = Batch::<S>::from_pairs(&[(m.noisy.clone(), m.clean.clone())])?;
        sum += eval_loss(net, &b)?;
    }
    Ok(sum / val.len() as f64)
}

fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Trains at the precision named in `run.train`.
pub fn fit(run: &RunConfig, source: &mut PairSource, out_dir: &Path, resume: bool) -> Result<FitSummary> {
    match run.train.precision {
        Precision::F32 => fit_typed::<f32>(run, source, out_dir, resume),
        Precision::F64 => fit_typed::<f64>(run, source, out_dir, resume),
    }
}

/// Runs steps until `run.train.max_steps` have completed. With `resume`,
/// model, optimizer and step counter continue from `out_dir/last.ckpt`.
pub fn fit_typed<S: Scalar>(run: &RunConfig, source: &mut PairSource, out_dir: &Path, resume: bool) -> Result<FitSummary> {
    run.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = &run.train;
    let config_text = run.render();
    let mut net = GldNet::<S>::new(run.model.clone(), cfg.seed)?;
    let mut opt = AdamState::new(&net.store, cfg.lr);
    let log_path = out_dir.join(LOG_FILE);
    let last_path = out_dir.join(LAST_CKPT);
    let best_path = out_dir.join(BEST_CKPT);

    let mut best: Option<(u64, f64)> = None;
    let start_step = if resume {
        let ck = Checkpoint::load(&last_path)?;
        ck.restore(&mut net, Some(&mut opt), &last_path)?;
        for r in read_log(&log_path)? {
            if best.is_none_or(|(_, b)| r.val_loss < b) {
                best = Some((r.step, r.val_loss));
            }
        }
        ck.step
    } else {
        for p in [&log_path, &last_path, &best_path] {
            if p.exists() {
                std::fs::remove_file(p).map_err(|e| Error::io(p.as_path(), e))?;
            }
        }
        0
    };

    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut summary = FitSummary {
        log: Vec::new(),
        start_step,
        final_step: start_step,
        best_step: best.map(|b| b.0),
        best_val_loss: best.map(|b| b.1),
        train_losses: Vec::new(),
    };
    let mut window = (0.0, 0usize);
    for step in start_step..cfg.max_steps {
        let pairs = source.batch(cfg.batch, cfg.crop_len, step_seed(cfg.seed, step))?;
        let batch = Batch::<S>::from_pairs(&pairs)?;
        let rep = train_step(&mut net, &batch, &mut opt, cfg).map_err(|source| Error::TrainingAborted { step, source })?;
        summary.train_losses.push(rep.loss);
        summary.final_step = rep.step;
        window.0 += rep.loss;
        window.1 += 1;
        let done = rep.step;
        if done % cfg.eval_every == 0 {
            let val = validation_loss(&mut net, source)?;
            let rec = LogRecord { step: done, train_loss: window.0 / window.1 as f64, val_loss: val, grad_norm: rep.grad_norm };
            window = (0.0, 0);
            let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
            let ck = Checkpoint::capture(&net, Some(&opt), done, &config_text);
            if summary.best_val_loss.is_none_or(|b| val < b) {
                summary.best_val_loss = Some(val);
                summary.best_step = Some(done);
                ck.save(&best_path)?;
            }
            ck.save(&last_path)?;
            summary.log.push(rec);
        }
    }
    if summary.final_step % cfg.eval_every != 0 || summary.final_step == start_step {
        Checkpoint::capture(&net, Some(&opt), summary.final_step, &config_text).save(&last_path)?;
    }
    Ok(summary)
}

/// Paths of the checkpoints `fit` writes under `out_dir`.
pub fn checkpoint_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join(BEST_CKPT), out_dir.join(LAST_CKPT))
}
