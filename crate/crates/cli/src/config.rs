//! Run configuration file (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lmdet::eval::PixelSpacing;
use lmdet::train::TrainConfig;
use lmdet::{AdamConfig, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::Invalid;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub eval: EvalSection,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_folds() -> usize {
    5
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `annotations.csv` and `images/`.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub sigma: f64,
    pub accuracy_tau: f64,
    pub seed: u64,
    pub record_wall_clock: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: t.adam,
            sigma: t.sigma,
            accuracy_tau: t.accuracy_tau,
            seed: t.seed,
            record_wall_clock: t.record_wall_clock,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub spacing: PixelSpacing,
    /// Annotator whose points are the training targets and the reference
    /// for model errors; the first annotator of each image when absent.
    #[serde(default)]
    pub reference_annotator: Option<String>,
}

impl RunConfig {
    /// Parses the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.data_dir, &mut cfg.paths.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Full-scale published protocol: 80 epochs, learning rate 0.001, 5 folds,
    /// 432×512 input and 27 landmarks.
    pub fn apply_paper_protocol(&mut self) {
        self.train.epochs = 80;
        self.train.adam.alpha = 1e-3;
        self.folds = 5;
        self.model.input_hw = (432, 512);
        self.model.out_channels = 27;
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            model: self.model.clone(),
            adam: t.adam,
            sigma: t.sigma,
            accuracy_tau: t.accuracy_tau,
            seed: t.seed,
            checkpoint_dir: Some(self.paths.output_dir.clone()),
            record_wall_clock: t.record_wall_clock,
        }
    }

    /// Checks everything that can be checked before touching the dataset.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !self.paths.data_dir.is_dir() {
            v.push(format!("paths.data_dir: {} is not a directory", self.paths.data_dir.display()));
        }
        if self.folds < 2 {
            v.push(format!("folds: must be >= 2, got {}", self.folds));
        }
        if self.jobs < 1 {
            v.push("jobs: must be >= 1".to_string());
        }
        if let Err(e) = self.eval.spacing.validate() {
            v.push(format!("eval.spacing: {e}"));
        }
        if let Err(e) = self.train_config().validate() {
            v.push(format!("train: {e}"));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Invalid(v.join("; ")).into())
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
