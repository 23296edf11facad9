//! Run configuration files. Every file carries `"version": 1`; flags given
//! on the command line override the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fusecue_core::augment::AugmentConfig;
use fusecue_core::data::SynthConfig;
use fusecue_core::nn::{AdamConfig, InputAssembly, TrainConfig, DEFAULT_WIDTHS};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Training manifest.
    pub data: Option<PathBuf>,
    /// Directory receiving `epoch_NNN/` checkpoints.
    pub checkpoints: Option<PathBuf>,
    /// Directory for reports.
    pub reports: Option<PathBuf>,
    /// `rgb`, `concat:<cue>` or `fused:<variant>`.
    pub assembly: String,
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// `null` turns augmentation off.
    pub augment: Option<AugmentConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            version: CONFIG_VERSION,
            data: None,
            checkpoints: None,
            reports: None,
            assembly: "fused:lfws".into(),
            widths: DEFAULT_WIDTHS.to_vec(),
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: train.seed,
            adam: train.adam,
            augment: train.augment,
        }
    }
}

impl RunConfig {
    pub fn assembly(&self) -> anyhow::Result<InputAssembly> {
        Ok(self.assembly.parse()?)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: self.adam,
            augment: self.augment.clone(),
        }
    }

    /// Checks values and that referenced inputs exist.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.assembly()?;
        if self.widths.is_empty() || self.widths.contains(&0) {
            bail!("widths {:?} must be non-empty and positive", self.widths);
        }
        self.train_config().validate()?;
        if let Some(data) = &self.data {
            if !data.is_file() {
                bail!("data manifest {} does not exist", data.display());
            }
        }
        Ok(())
    }
}

/// Reads a versioned JSON config. The `version` key is checked and, for
/// types that do not carry it, removed before decoding.
pub fn read_versioned<T: DeserializeOwned>(path: &Path, keep_version: bool) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_versioned(&text, keep_version).with_context(|| format!("config {}", path.display()))
}

pub fn parse_versioned<T: DeserializeOwned>(text: &str, keep_version: bool) -> anyhow::Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| anyhow::anyhow!("config must be a JSON object"))?;
    match obj.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == CONFIG_VERSION as u64 => {}
        Some(v) => bail!("unsupported config version {v}"),
        None => bail!("config has no numeric \"version\" field"),
    }
    if !keep_version {
        obj.remove("version");
    }
    Ok(serde_json::from_value(value)?)
}

pub fn load_run(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => read_versioned(p, true),
        None => Ok(RunConfig::default()),
    }
}

pub fn load_synth(path: Option<&Path>) -> anyhow::Result<SynthConfig> {
    match path {
        Some(p) => read_versioned(p, false),
        None => Ok(SynthConfig::default()),
    }
}

pub fn load_augment(path: Option<&Path>) -> anyhow::Result<AugmentConfig> {
    match path {
        Some(p) => read_versioned(p, false),
        None => Ok(AugmentConfig::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_required() {
        assert!(parse_versioned::<RunConfig>("{}", true).is_err());
        assert!(parse_versioned::<RunConfig>(r#"{"version": 2}"#, true).is_err());
        let cfg: RunConfig = parse_versioned(r#"{"version": 1, "epochs": 3}"#, true).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.seed, 1024);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_versioned::<RunConfig>(r#"{"version": 1, "epoch": 3}"#, true).is_err());
        assert!(parse_versioned::<SynthConfig>(r#"{"version": 1, "sise": 3}"#, false).is_err());
    }

    #[test]
    fn synth_config_partial() {
        let cfg: SynthConfig =
            parse_versioned(r#"{"version": 1, "n_videos": 2, "seed": 5}"#, false).unwrap();
        assert_eq!((cfg.n_videos, cfg.seed), (2, 5));
        assert_eq!(cfg.size, SynthConfig::default().size);
    }

    #[test]
    fn augment_can_be_disabled() {
        let cfg: RunConfig = parse_versioned(r#"{"version": 1, "augment": null}"#, true).unwrap();
        assert!(cfg.train_config().augment.is_none());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            assembly: "stack:wdf".into(),
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let missing = RunConfig {
            data: Some("/nonexistent/manifest.jsonl".into()),
            ..RunConfig::default()
        };
        assert!(missing.validate().is_err());
    }
}
