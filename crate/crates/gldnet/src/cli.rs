//! Command-line front end: `train`, `enhance`, `evaluate` and `gradcheck`.
//!
//! Settings are layered: preset, then `--config` file, then dedicated
//! flags, then trailing `key=value` overrides. Unknown keys are errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gldnet_core::data::Split;
use gldnet_core::signal::SAMPLE_RATE;

use crate::config::{parse_precision, Preset, RunConfig};
use crate::dataset::{load_manifest, PairSource};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, manifest_items, LoadedNet};
use crate::fit::{checkpoint_paths, fit, LOG_FILE};
use crate::gradsuite::{run_suite, SuiteOptions, DEFAULT_TOL};
use crate::wav::{read_wav, write_wav, WavFormat};

#[derive(Debug, Parser)]
#[command(name = "gldnet", version, about = "GLD-Net speech enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its log and checkpoints.
    Train(TrainArgs),
    /// Enhance one WAV file.
    Enhance(EnhanceArgs),
    /// Score a checkpoint on a test manifest.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Tiny,
    Full,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tiny => Preset::Tiny,
            PresetArg::Full => Preset::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Pcm16,
    Float32,
}

/// Model and run settings shared by `train` and `gradcheck`.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key = value` file applied on top of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tiny")]
    pub preset: PresetArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Float width, 32 or 64.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Drop the speech branch.
    #[arg(long)]
    pub disable_sb: bool,
    /// Drop the interference branch.
    #[arg(long)]
    pub disable_ib: bool,
    /// Aggregate each position with its own value (`Σ_i x_ji·V_j`).
    #[arg(long = "literal-aggregation", visible_alias = "literal-eq2")]
    pub literal_aggregation: bool,
    /// Gate `E` instead of `R` in the speech branch.
    #[arg(long = "symmetric-mask", visible_alias = "literal-eq5")]
    pub symmetric_mask: bool,
    /// Divide attention logits by `√(T·F)`.
    #[arg(long, value_enum)]
    pub attention_scale: Option<Switch>,
    /// Trailing `key=value` overrides, applied last.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut run = RunConfig::preset(self.preset.into());
        if let Some(p) = &self.config {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            run.apply_text(&text).map_err(|e| Error::Config(format!("{}: {}", p.display(), strip(e))))?;
        }
        if let Some(s) = self.seed {
            run.train.seed = s;
        }
        if let Some(p) = &self.precision {
            run.train.precision = parse_precision(p)?;
        }
        if let Some(n) = self.max_steps {
            run.train.max_steps = n;
        }
        if self.disable_sb {
            run.model.enable_sb = false;
        }
        if self.disable_ib {
            run.model.enable_ib = false;
        }
        if self.literal_aggregation {
            run.model.gld.literal_aggregation = true;
        }
        if self.symmetric_mask {
            run.model.gld.symmetric_mask = true;
        }
        if let Some(s) = self.attention_scale {
            run.model.gld.attention_scale = s == Switch::On;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
            run.set(k.trim(), v.trim())?;
        }
        run.validate()?;
        Ok(run)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "runs/gldnet")]
    pub out_dir: PathBuf,
    /// Train on the synthetic tones-in-noise corpus.
    #[arg(long, conflicts_with_all = ["train_manifest", "val_manifest"])]
    pub toy_data: bool,
    #[arg(long)]
    pub train_manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    /// Continue from `<out-dir>/last.ckpt`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "pcm16")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where the table and per-utterance scores are written.
    #[arg(long, default_value = "evaluation.txt")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let run = a.run.resolve()?;
    let mut source = if a.toy_data {
        PairSource::toy(&run.toy, run.train.seed)?
    } else {
        let (Some(tp), Some(vp)) = (&a.train_manifest, &a.val_manifest) else {
            return Err(Error::Config("train needs --toy-data or both --train-manifest and --val-manifest".into()));
        };
        PairSource::files(load_manifest(tp, Split::Train)?, &load_manifest(vp, Split::Val)?)?
    };
    let s = fit(&run, &mut source, &a.out_dir, a.resume)?;
    for r in &s.log {
        println!(
            "step {:>6}  train {:.6}  val {:.6}  |g| {:.4}",
            r.step, r.train_loss, r.val_loss, r.grad_norm
        );
    }
    let (best, last) = checkpoint_paths(&a.out_dir);
    println!("steps {}..{}", s.start_step, s.final_step);
    if let (Some(step), Some(loss)) = (s.best_step, s.best_val_loss) {
        println!("best val {loss:.6} at step {step} -> {}", best.display());
    }
    println!("last -> {}", last.display());
    println!("log -> {}", a.out_dir.join(LOG_FILE).display());
    Ok(())
}

pub fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let (mut net, _) = LoadedNet::load(&a.checkpoint)?;
    let noisy = read_wav(&a.input)?;
    let out = net.enhance(noisy.samples())?;
    let format = match a.format {
        FormatArg::Pcm16 => WavFormat::Pcm16,
        FormatArg::Float32 => WavFormat::Float32,
    };
    write_wav(&a.output, &out, SAMPLE_RATE, format)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest, Split::Test)?;
    let items = manifest_items(&manifest)?;
    let (mut net, _) = LoadedNet::load(&a.checkpoint)?;
    let ev = evaluate(&mut net, &items)?;
    print!("{}", ev.table());
    write_report(&a.report, &ev.report())
}

fn write_report(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let run = a.run.resolve()?;
    if run.train.precision.bits() != 64 {
        return Err(Error::Config("gradcheck runs in 64-bit mode".into()));
    }
    if !(a.tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {}", a.tol)));
    }
    let opts = SuiteOptions { seed: run.train.seed, tol: a.tol, model: run.model, ..SuiteOptions::default() };
    let report = run_suite(&opts)?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Verification(format!(
            "max relative error {:.3e} exceeds tolerance {:.1e}",
            report.max_rel_error(),
            a.tol
        )))
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gldnet: {e}");
            e.exit_code()
        }
    }
}
