//! Self-contained model checkpoints and run-directory manifests.
//!
//! Checkpoints are JSON documents; floats are written in shortest
//! round-trip form, so loading reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{evaluate_task, task_aware_infer, ImageCaptions, Method, TrainConfig};
use crate::linalg::Rng;
use crate::model::ModelParams;
use crate::ratt::{MaskSelection, MaskSet};
use crate::vocab::Vocabulary;

pub const CHECKPOINT_VERSION: u32 = 1;

/// What RATT needs at inference time: one mask set per finished task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RattInference {
    pub masks: Vec<MaskSet>,
    pub selection: MaskSelection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// Last task trained into these parameters.
    pub task: usize,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub vocabulary: Vocabulary,
    pub ratt: Option<RattInference>,
    pub rng: Rng,
}

impl Checkpoint {
    pub fn new(
        task: usize,
        config: TrainConfig,
        params: ModelParams,
        vocabulary: Vocabulary,
        ratt: Option<RattInference>,
        rng: Rng,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            task,
            config,
            params,
            vocabulary,
            ratt,
            rng,
        }
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::format("<checkpoint>", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::format("<checkpoint>", e))?;
        ck.check()?;
        Ok(ck)
    }

    fn check(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::format("<checkpoint>", format!("unsupported version {}", self.version)));
        }
        if self.params.dims.vocab_size != self.vocabulary.len() {
            return Err(Error::shape("checkpoint vocabulary", self.params.dims.vocab_size, self.vocabulary.len()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        ck.check().map_err(|e| Error::format(path, e))?;
        Ok(ck)
    }

    pub fn infer(&self, t: usize, features: &[f64]) -> Result<Vec<usize>> {
        task_aware_infer(&self.params, features, t, &self.vocabulary, self.ratt.as_ref(), self.config.max_decode_len)
    }

    pub fn evaluate(&self, t: usize, images: &[ImageCaptions]) -> Result<f64> {
        evaluate_task(&self.params, &self.vocabulary, self.ratt.as_ref(), t, images, self.config.max_decode_len)
    }
}

/// Index of a run directory. Paths are relative to the directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub method: Method,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub config: String,
    pub dataset: String,
    pub split: String,
    pub checkpoints: Vec<String>,
    pub report_csv: String,
    pub report_json: String,
    pub mask_usage_csv: Option<String>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format(&path, e))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}
