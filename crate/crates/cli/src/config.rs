use std::path::{Path, PathBuf};

use anomaly_forge_core::dataset::ForgeConfig;
use anomaly_forge_core::learn::plan::{DEFAULT_BASE_LR, DEFAULT_BATCH, DEFAULT_EPOCHS, DEFAULT_WARMUP_FRAC};
use anomaly_forge_core::learn::{ModelConfig, StagePlan};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub warmup_frac: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: DEFAULT_EPOCHS,
            base_lr: DEFAULT_BASE_LR,
            batch_size: DEFAULT_BATCH,
            warmup_frac: DEFAULT_WARMUP_FRAC,
        }
    }
}

impl TrainSettings {
    pub fn plan(&self, stage: u8) -> CliResult<StagePlan> {
        let mut p = StagePlan::standard(stage, self.epochs, self.base_lr)?;
        p.batch_size = self.batch_size;
        p.warmup_frac = self.warmup_frac;
        p.validate()?;
        Ok(p)
    }
}

/// Everything a command needs, merged from the config file and flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Prompt-bank class whose prompts drive scoring.
    pub class: String,
    /// Bundled bank when absent.
    pub prompt_bank: Option<PathBuf>,
    pub model: ModelConfig,
    pub forge: ForgeConfig,
    pub train: TrainSettings,
    /// Dataset root holding `train/` and `test/`; defaults to the output
    /// directory.
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            class: "fabric".into(),
            prompt_bank: None,
            model: ModelConfig::default(),
            forge: ForgeConfig::default(),
            train: TrainSettings::default(),
            dataset: None,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Usage("a seed is required: pass --seed or set \"seed\" in the config file".into()))
    }

    pub fn dataset_root(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out.clone())
    }

    /// Checks internal consistency; commands that draw random numbers also
    /// require a seed.
    pub fn validate(&self, needs_seed: bool) -> CliResult<()> {
        if needs_seed {
            self.seed()?;
        }
        self.model.validate()?;
        if self.forge.image_size != self.model.encoder.image_size {
            return Err(CliError::Usage(format!(
                "forge image size {:?} differs from encoder image size {:?}",
                self.forge.image_size, self.model.encoder.image_size
            )));
        }
        for stage in 1..=3 {
            self.train.plan(stage)?;
        }
        if let Some(bank) = &self.prompt_bank {
            if !bank.is_file() {
                return Err(CliError::Usage(format!("prompt bank {} does not exist", bank.display())));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7, "train": {"epochs": 2}}"#).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.base_lr, DEFAULT_BASE_LR);
        cfg.validate(true).unwrap();
        let round: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn seed_is_required() {
        assert!(RunConfig::default().validate(true).is_err());
        RunConfig::default().validate(false).unwrap();
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
