//! The declarative run file: data schema, sampler settings, model grid, backtest and synthesis.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tvpvecm::data::{load_panel, AveragedSeries, Interpolation, Panel, PanelSchema};
use tvpvecm::evaluate::{BacktestConfig, ModelSpec};
use tvpvecm::sampler::ModelConfig;
use tvpvecm::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file; relative paths are resolved against the run file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub timestamp: Option<String>,
    pub endogenous: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub averages: Vec<AveragedSeries>,
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Divide each series by the standard deviation of its differences before estimation.
    #[serde(default)]
    pub scale: bool,
}

impl DataConfig {
    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            timestamp: self.timestamp.clone(),
            endogenous: self.endogenous.clone(),
            exogenous: self.exogenous.clone(),
            averages: self.averages.clone(),
        }
    }

    pub fn load(&self) -> Result<Panel> {
        load_panel(&self.path, &self.schema(), self.interpolation)
            .with_context(|| format!("loading {}", self.path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; overridden by `--out`.
    pub output: Option<PathBuf>,
    pub data: Option<DataConfig>,
    /// Sampler settings for `estimate`.
    pub model: ModelConfig,
    /// Model grid for `backtest`; `model` alone (labelled `model`) when empty.
    pub models: Vec<ModelSpec>,
    pub backtest: BacktestConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Read a run file and resolve its relative data path.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(data) = &mut cfg.data {
            if data.path.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                data.path = base.join(&data.path);
            }
        }
        Ok(cfg)
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data.as_ref().ok_or_else(|| {
            tvpvecm::Error::Validation(vec!["data: section is required for this command".into()]).into()
        })
    }

    pub fn grid(&self) -> Vec<ModelSpec> {
        if self.models.is_empty() {
            vec![ModelSpec {
                label: "model".into(),
                config: self.model.clone(),
            }]
        } else {
            self.models.clone()
        }
    }
}
