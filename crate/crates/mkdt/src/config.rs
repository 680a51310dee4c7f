//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "dataset": {"synth": {"n_classes": 4, "n_views": 3, "n_actors": 10,
//!                         "clips_per_actor_per_class": 3, "frames": 16,
//!                         "height": 32, "width": 32, "view_noise": 0.1, "seed": 0}},
//!   "backbone": {...}, "train": {"epochs": 15, "seed": 0},
//!   "preprocess": {"frames": 8, "normalization": {"mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5]}},
//!   "baseline_views": "closest",
//!   "matrix": {"k_folds": 5, "modes": ["multi_view_distilled", "single_view_baseline"]},
//!   "run": {"test_view": 1, "fold": 0, "mode": "multi_view_distilled"},
//!   "out": "runs"
//! }
//! ```
//!
//! `dataset` is either `{"path": "<dataset root>"}` or `{"synth": {...}}`.
//! Every other section is optional and falls back to its defaults. Unknown
//! keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use mkdt_core::backbone::BackboneConfig;
use mkdt_core::data::{generate_synthetic_dataset, Dataset, Preprocess, SynthConfig};
use mkdt_core::matrix::{BaselineViews, RunMode, RunSettings, RunSpec};
use mkdt_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io, json, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Path(PathBuf),
    Synth(SynthConfig),
}

impl DatasetSource {
    /// Reads the dataset from disk or generates it.
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Path(root) => crate::format::read_dataset(root),
            DatasetSource::Synth(cfg) => Ok(generate_synthetic_dataset(cfg)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixConfig {
    pub k_folds: usize,
    pub modes: Vec<RunMode>,
    /// Test views to run; all dataset views when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub views: Option<Vec<u32>>,
    /// Seed of the actor fold partition.
    pub fold_seed: u64,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self { k_folds: 5, modes: RunMode::ALL.to_vec(), views: None, fold_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default)]
    pub baseline_views: BaselineViews,
    #[serde(default)]
    pub matrix: MatrixConfig,
    /// The single run `train` performs; flags may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSpec>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(json(path))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(io(path))?, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            backbone: self.backbone.clone(),
            train: self.train.clone(),
            preprocess: self.preprocess,
            baseline_views: self.baseline_views,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        if let DatasetSource::Synth(s) = &self.dataset {
            s.validate()?;
        }
        if self.matrix.k_folds == 0 {
            return Err(Error::Config("matrix.k_folds must be at least 1".into()));
        }
        if self.matrix.modes.is_empty() {
            return Err(Error::Config("matrix.modes must not be empty".into()));
        }
        Ok(())
    }

    /// Checks that every clip fits the backbone's spatial input.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let [_, h, w] = self.backbone.input;
        if dataset.n_classes() != self.backbone.n_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, backbone.n_classes is {}",
                dataset.n_classes(),
                self.backbone.n_classes
            )));
        }
        for s in dataset.samples() {
            for c in s.clips.values() {
                if (c.frames.height, c.frames.width) != (h, w) {
                    return Err(Error::Config(format!(
                        "clip of actor {} view {} is {}x{}, the backbone expects {h}x{w}",
                        c.actor_id, c.view_id, c.frames.height, c.frames.width
                    )));
                }
            }
        }
        Ok(())
    }
}
