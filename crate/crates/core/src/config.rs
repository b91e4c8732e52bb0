//! Run configuration: one TOML document covering data, model, training,
//! degradation presets, evaluation and output paths. Unknown keys are
//! rejected and the whole document is validated before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degrade::{DegradationPreset, PresetTable};
use crate::error::{Error, Result};
use crate::train::{EvalConfig, ModelConfig, TrainConfig};

/// Where images come from. Without a directory, seeded synthetic images are
/// used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    /// Optional file listing training image names, one per line.
    pub train_list: Option<PathBuf>,
    pub eval_list: Option<PathBuf>,
    pub synthetic_seed: u64,
    pub synthetic_train: usize,
    pub synthetic_eval: usize,
    pub synthetic_shapes: usize,
    /// Center-crop and resize images whose size differs from the model's.
    pub resize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            eval_dir: None,
            train_list: None,
            eval_list: None,
            synthetic_seed: 1000,
            synthetic_train: 200,
            synthetic_eval: 50,
            synthetic_shapes: 6,
            resize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), checkpoint: None }
    }
}

impl IoConfig {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.safetensors"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Extra or overriding degradation presets, keyed by name.
    pub degrade: PresetTable,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Bundled presets overlaid with the ones given in the document.
    pub fn presets(&self) -> PresetTable {
        let mut table = PresetTable::bundled();
        for (k, v) in &self.degrade.presets {
            table.presets.insert(k.clone(), v.clone());
        }
        table
    }

    pub fn train_preset(&self) -> Result<DegradationPreset> {
        Ok(self.presets().get(&self.train.degradation)?.clone())
    }

    pub fn eval_preset(&self) -> Result<DegradationPreset> {
        Ok(self.presets().get(&self.eval.degradation)?.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        for p in self.degrade.presets.values() {
            p.validate()?;
        }
        self.train_preset()?;
        self.eval_preset()?;
        if let Some(m) = &self.eval.mask {
            m.validate()?;
        }
        if self.data.train_dir.is_none() && self.data.synthetic_train < 2 {
            return Err(Error::config("synthetic_train must be at least 2"));
        }
        Ok(())
    }
}
