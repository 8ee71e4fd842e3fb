use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pmiris::baseline::BaselineConfig;
use pmiris::data_io::SynthConfig;
use pmiris::segnet::{ModelConfig, Preset, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub n_splits: usize,
    pub n_test: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self { n_splits: 10, n_test: 3 }
    }
}

/// Which built-in synthetic preset to start from when the config file has
/// no `[synth]` table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthVariant {
    Default,
    Clean,
    Heavy,
}

impl SynthVariant {
    pub fn config(self) -> SynthConfig {
        match self {
            SynthVariant::Default => SynthConfig::default(),
            SynthVariant::Clean => SynthConfig::clean(),
            SynthVariant::Heavy => SynthConfig::heavy(),
        }
    }
}

/// Contents of a `--config` file. Every table is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub jobs: Option<usize>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub baseline: Option<BaselineConfig>,
    pub synth: Option<SynthConfig>,
    pub split: Option<SplitParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| pmiris::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        toml::from_str(&text)
            .map_err(|e| config_error(format!("{}: {}", path.display(), e.message())))
    }
}

/// Fully resolved settings of one run; this is what lands next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitParams>,
}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    pmiris::Error::Config(msg.into()).into()
}

impl RunConfig {
    pub fn new(command: &str, seed: u64, jobs: Option<usize>, out: &Path) -> Self {
        Self {
            command: command.to_string(),
            seed,
            jobs,
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            model: None,
            train: None,
            baseline: None,
            synth: None,
            split: None,
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.to_path_buf());
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing the resolved config")
    }

    /// `resolved_config.toml` inside an output directory, or
    /// `<file>.resolved.toml` beside an output file.
    pub fn write_beside(&self, out: &Path, is_dir: bool) -> Result<PathBuf> {
        let path = if is_dir {
            out.join("resolved_config.toml")
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".resolved.toml");
            out.with_file_name(name)
        };
        crate::io::write_atomic(&path, self.to_toml()?.as_bytes())?;
        Ok(path)
    }
}

/// Model architecture: an explicit `[model]` table wins, then `--preset`,
/// then the file's `preset`, then mini.
pub fn resolve_model(file: &FileConfig, preset_flag: Option<Preset>) -> Result<ModelConfig> {
    let cfg = match (preset_flag, &file.model) {
        (Some(p), Some(m)) if m.preset != p => {
            return Err(config_error(format!(
                "--preset {p:?} conflicts with the [model] table (preset {:?})",
                m.preset
            )))
        }
        (_, Some(m)) => m.clone(),
        (Some(p), None) => ModelConfig::from_preset(p)?,
        (None, None) => ModelConfig::from_preset(file.preset.unwrap_or(Preset::Mini))?,
    };
    cfg.validate()?;
    Ok(cfg)
}
