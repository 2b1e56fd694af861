//! Experiment configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use hifreq_core::raster::RigConfig;
use hifreq_core::sparse::SparseConfig;
use hifreq_core::SynthConfig;
use hifreq_train::dataset::GenConfig;
use hifreq_train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 240 x 240 camera, narrow network.
    #[default]
    Desk,
    /// 1200 x 1200 camera, full-size network.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Side of the normalization window, px.
    pub patch: usize,
    /// Error mapped to the top of the error-map color scale, mm.
    pub error_max_mm: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            patch: 49,
            error_max_mm: 0.5,
        }
    }
}

/// Everything a command needs besides its input paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset seed; `--seed` also replaces the training seeds.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub preset: Preset,
    pub dataset: DatasetSection,
    pub synth: SynthConfig,
    pub rig: RigConfig,
    pub sparse: SparseConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let (gen, train, count) = match p {
            Preset::Desk => (GenConfig::desk(), TrainConfig::desk(), 120),
            Preset::Paper => (GenConfig::paper(), TrainConfig::default(), 600),
        };
        let finetune = TrainConfig {
            width: train.width,
            ..TrainConfig::finetune()
        };
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            preset: p,
            dataset: DatasetSection { count },
            synth: gen.synth,
            rig: gen.rig,
            sparse: gen.sparse,
            train,
            finetune,
            eval: EvalSection::default(),
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            synth: self.synth.clone(),
            rig: self.rig.clone(),
            sparse: self.sparse,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.finetune.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_toml()).map_err(CliError::io(path))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let data = |e: String| Err(CliError::Data(e));
        if let Err(e) = self.synth.validate() {
            return data(e.to_string());
        }
        for t in [&self.train, &self.finetune] {
            if let Err(e) = t.validate() {
                return data(e.to_string());
            }
        }
        if self.eval.patch == 0 || self.eval.patch % 2 == 0 {
            return data(format!("eval patch {} must be odd", self.eval.patch));
        }
        if !(self.eval.error_max_mm > 0.0) {
            return data("eval error_max_mm must be positive".into());
        }
        Ok(())
    }
}
