//! Whole-pipeline configuration, its TOML file form and fingerprint.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::DmdConfig;
use crate::ica::{InfomaxConfig, WhitenMode};
use crate::predict::TrainConfig;
use crate::preprocess::PreprocessConfig;
use crate::select::NuConfig;
use crate::synth::SynthConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub nu: NuConfig,
    /// Horizon used for scoring and prediction.
    pub horizon_ms: f64,
    pub sweep_horizons_ms: Vec<f64>,
    pub top_fraction: f64,
    /// Floor on the selection size when the percentile cut keeps nothing.
    pub min_selected: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            nu: NuConfig::default(),
            horizon_ms: 200.0,
            sweep_horizons_ms: vec![200.0, 300.0, 400.0],
            top_fraction: 0.05,
            min_selected: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub variance_fraction: f64,
    pub k: usize,
    pub k_max: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            variance_fraction: 0.95,
            k: 2,
            k_max: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub train: TrainConfig,
    /// Leading share of trials used for training; the rest are held out.
    pub train_fraction: f64,
    pub include_brake: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            train_fraction: 0.8,
            include_brake: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Arm names, see [`crate::pipeline::Arm::parse`].
    pub arms: Vec<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            arms: [
                "brake-only",
                "eeg-electrodes",
                "ic",
                "eeg-electrodes-no-brake",
                "ic-no-brake",
                "csp",
                "dmd",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub ica: InfomaxConfig,
    pub select: SelectConfig,
    pub cluster: ClusterConfig,
    pub predict: PredictConfig,
    pub dmd: DmdConfig,
    pub ablation: AblationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            // the average reference removes one dimension
            ica: InfomaxConfig {
                whiten: WhitenMode::Reduced,
                ..InfomaxConfig::default()
            },
            select: SelectConfig::default(),
            cluster: ClusterConfig::default(),
            predict: PredictConfig::default(),
            dmd: DmdConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.select;
        if !crate::select::HORIZONS_MS.contains(&s.horizon_ms) {
            return Err(Error::Config(format!(
                "select.horizon_ms = {} is not one of 200, 300, 400",
                s.horizon_ms
            )));
        }
        if let Some(h) = s.sweep_horizons_ms.iter().find(|h| !crate::select::HORIZONS_MS.contains(h)) {
            return Err(Error::Config(format!("select.sweep_horizons_ms contains {h}")));
        }
        if !(s.top_fraction > 0.0 && s.top_fraction <= 1.0) {
            return Err(Error::Config("select.top_fraction must lie in (0, 1]".into()));
        }
        let f = self.predict.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config("predict.train_fraction must lie in (0, 1)".into()));
        }
        if self.cluster.k == 0 || self.cluster.k > self.cluster.k_max {
            return Err(Error::Config("cluster.k must lie in [1, k_max]".into()));
        }
        for arm in &self.ablation.arms {
            crate::pipeline::Arm::parse(arm).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
