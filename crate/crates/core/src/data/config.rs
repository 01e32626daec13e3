use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{read_side_info_dir, DatasetBundle, SIDEINFO_DIR};
use super::synth::{generate_synthetic, SynthSpec};
use crate::affinity::SideInfoSource;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// One experiment: where the data comes from and how to train.
///
/// Exactly one of `synth` and `data_dir` is set. A relative `data_dir` is
/// resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: Some(SynthSpec::default()),
            data_dir: None,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(dir), Some(base)) = (&cfg.data_dir, path.parent()) {
            if dir.is_relative() {
                cfg.data_dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synth, &self.data_dir) {
            (Some(s), None) => s.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "config needs exactly one of `synth` and `data_dir`".into(),
                ))
            }
        }
        self.train.validate()
    }

    /// Generates or loads the dataset and its side-information sources.
    pub fn load_data(&self) -> Result<(DatasetBundle, Vec<SideInfoSource>)> {
        self.validate()?;
        match (&self.synth, &self.data_dir) {
            (Some(spec), _) => {
                let d = generate_synthetic(spec)?;
                Ok((d.bundle, d.sources))
            }
            (_, Some(dir)) => {
                let bundle = DatasetBundle::load_dir(dir)?;
                let side = dir.join(SIDEINFO_DIR);
                let sources = if side.is_dir() {
                    read_side_info_dir(&side)?
                } else {
                    Vec::new()
                };
                Ok((bundle, sources))
            }
            (None, None) => unreachable!("validated above"),
        }
    }
}
