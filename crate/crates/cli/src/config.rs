//! Flat JSON run configuration. Keys mirror the command-line flags plus the
//! training hyperparameters; flags win over file values.

use std::path::Path;

use anyhow::Context;
use aupat::experiments::ExperimentConfig;
use aupat::nn::Preset;
use serde::Deserialize;

use crate::{Classify, Failure, RunArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub min_count: Option<u64>,
    pub threshold: Option<f64>,
    pub scale: Option<f64>,
    pub preset: Option<Preset>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub split_hidden: Option<usize>,
}

pub fn load(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display())).usage()?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display())).usage()
}

/// Defaults, then the config file, then flags.
pub fn resolve(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let file = match &args.config {
        Some(p) => load(p)?,
        None => FileConfig::default(),
    };
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = args.seed.or(file.seed) {
        cfg.seed = v;
    }
    if let Some(v) = args.folds.or(file.folds) {
        cfg.folds = v;
    }
    if let Some(v) = args.min_count.or(file.min_count) {
        cfg.min_count = v;
    }
    if let Some(v) = args.threshold.or(file.threshold) {
        cfg.train.threshold = v;
    }
    if let Some(v) = args.scale.or(file.scale) {
        cfg.scale = v;
    }
    if let Some(v) = args.epochs.or(file.epochs) {
        cfg.train.epochs = v;
    }
    if let Some(v) = file.preset {
        cfg.preset = v;
    }
    if let Some(v) = file.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = file.momentum {
        cfg.train.momentum = v;
    }
    if let Some(v) = file.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = file.split_hidden {
        cfg.split_hidden = v;
    }
    cfg.train.validate().usage()?;
    if cfg.folds < 2 {
        return Err(anyhow::anyhow!("folds must be at least 2, got {}", cfg.folds)).usage();
    }
    if cfg.min_count == 0 {
        return Err(anyhow::anyhow!("min_count must be at least 1")).usage();
    }
    if !(cfg.scale > 0.0 && cfg.scale <= 1.0) {
        return Err(anyhow::anyhow!("scale must lie in (0, 1], got {}", cfg.scale)).usage();
    }
    if cfg.split_hidden == 0 {
        return Err(anyhow::anyhow!("split_hidden must be positive")).usage();
    }
    Ok(cfg)
}
