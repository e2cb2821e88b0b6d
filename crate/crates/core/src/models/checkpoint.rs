use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::train::{TraceRecord, TrainConfig, TrainSummary};
use super::{AnnotatorModel, TrainedModel};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M = AnnotatorModel> {
    pub format_version: u32,
    pub kind: String,
    pub seed: u64,
    /// Ids of annotators whose slot was flagged as untrained.
    pub flagged: Vec<String>,
    pub config: TrainConfig,
    pub summary: TrainSummary,
    pub model: M,
}

impl Checkpoint<AnnotatorModel> {
    pub fn from_trained(trained: &TrainedModel) -> Self {
        let m = &trained.model;
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            kind: m.architecture.name().into(),
            seed: trained.config.seed,
            flagged: m
                .flagged()
                .into_iter()
                .map(|j| m.annotators[j].clone())
                .collect(),
            config: trained.config.clone(),
            summary: trained.summary.clone(),
            model: m.clone(),
        }
    }

    pub fn into_trained(self) -> TrainedModel {
        TrainedModel {
            model: self.model,
            summary: self.summary,
            config: self.config,
        }
    }
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_reader(BufReader::new(file))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!(
                "{}: checkpoint format {} (expected {CHECKPOINT_VERSION})",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

/// Writes a training trace as CSV.
pub fn write_trace(trace: &[TraceRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
