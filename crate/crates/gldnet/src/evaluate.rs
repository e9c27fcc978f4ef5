//! Loading trained models and scoring them on a test manifest.

use std::path::Path;

use gldnet_core::data::Manifest;
use gldnet_core::metrics::{render_table, MetricReport, UtteranceScore, TABLE_CONDITIONS_DB};
use gldnet_core::network::GldNet;
use gldnet_core::signal::SAMPLE_RATE;

use crate::checkpoint::Checkpoint;
use crate::config::{Preset, RunConfig};
use crate::dataset::{mix_manifest, AudioCache};
use crate::error::{Error, Result};

/// A model restored at the width it was saved with.
pub enum LoadedNet {
    F32(GldNet<f32>),
    F64(GldNet<f64>),
}

impl LoadedNet {
    pub fn load(path: &Path) -> Result<(Self, RunConfig)> {
        let ck = Checkpoint::load(path)?;
        let run = RunConfig::parse(&ck.config, Preset::Tiny).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("stored config: {e}"),
        })?;
        let net = if ck.bits == 32 {
            let mut n = GldNet::<f32>::new(run.model.clone(), run.train.seed)?;
            ck.restore(&mut n, None, path)?;
            Self::F32(n)
        } else {
            let mut n = GldNet::<f64>::new(run.model.clone(), run.train.seed)?;
            ck.restore(&mut n, None, path)?;
            Self::F64(n)
        };
        Ok((net, run))
    }

    pub fn enhance(&mut self, noisy: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Self::F32(n) => n.enhance(noisy)?,
            Self::F64(n) => n.enhance(noisy)?,
        })
    }
}

/// One test utterance.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub condition_db: f64,
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
}

/// Mixes every manifest entry; ids are the clean file stems.
pub fn manifest_items(m: &Manifest) -> Result<Vec<EvalItem>> {
    if m.is_empty() {
        return Err(Error::Config("evaluation manifest is empty".into()));
    }
    let mixes = mix_manifest(m, &mut AudioCache::default())?;
    Ok(m.entries
        .iter()
        .zip(mixes)
        .map(|(e, mix)| EvalItem {
            id: Path::new(&e.clean_path).file_stem().map_or_else(|| e.clean_path.clone(), |s| s.to_string_lossy().into_owned()),
            condition_db: e.snr_db,
            noisy: mix.noisy,
            clean: mix.clean,
        })
        .collect())
}

/// Scores of the noisy input and of the enhanced output.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub unprocessed: MetricReport,
    pub enhanced: MetricReport,
}

impl Evaluation {
    pub fn table(&self) -> String {
        render_table(&[("Unprocessed", &self.unprocessed), ("GLD-Net", &self.enhanced)], &TABLE_CONDITIONS_DB)
    }

    /// Table followed by the per-utterance records of both systems.
    pub fn report(&self) -> String {
        let mut s = self.table();
        s.push('\n');
        s.push_str(&self.unprocessed.records_text("unprocessed"));
        s.push_str(&self.enhanced.records_text("enhanced"));
        s
    }
}

pub fn evaluate(net: &mut LoadedNet, items: &[EvalItem]) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    for it in items {
        let enhanced = net.enhance(&it.noisy)?;
        out.unprocessed.push(UtteranceScore::compute(&it.id, it.condition_db, &it.clean, &it.noisy, SAMPLE_RATE)?);
        out.enhanced.push(UtteranceScore::compute(&it.id, it.condition_db, &it.clean, &enhanced, SAMPLE_RATE)?);
    }
    Ok(out)
}
