//! The run configuration document.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use cogmotor::contrastive::BackboneConfig;
use cogmotor::featurestream::{Modality, Task};
use cogmotor::nnet::{Head, VbaNetConfig};
use cogmotor::pipeline::PipelineConfig;
use cogmotor::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classify,
    Regress,
}

impl HeadKind {
    pub fn head(self) -> Head {
        match self {
            HeadKind::Classify => Head::Classify { classes: 2 },
            HeadKind::Regress => Head::Regress,
        }
    }
}

/// Network settings; the input width, head and seed are filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_filters: usize,
    pub kernel: usize,
    pub se_reduction: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = VbaNetConfig::new(1, Head::Regress);
        Self {
            conv_filters: d.conv_filters,
            kernel: d.kernel,
            se_reduction: d.se_reduction,
            learning_rate: d.learning_rate,
            max_epochs: d.max_epochs,
            patience: d.patience,
            min_delta: d.min_delta,
        }
    }
}

impl ModelConfig {
    pub fn network(&self, in_channels: usize, head: Head, seed: u64) -> VbaNetConfig {
        VbaNetConfig {
            in_channels,
            conv_filters: self.conv_filters,
            kernel: self.kernel,
            se_reduction: self.se_reduction,
            head,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            rng_seed: seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssessConfig {
    pub modality: Modality,
    pub head: HeadKind,
    pub iterations: usize,
    /// Restricts the manifest to one task; `None` keeps every trial.
    pub task: Option<Task>,
}

impl Default for AssessConfig {
    fn default() -> Self {
        Self {
            modality: Modality::Fused,
            head: HeadKind::Classify,
            iterations: 100,
            task: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustConfig {
    /// Headline NTS over correctly classified trials only.
    pub correct_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CamConfig {
    pub curve_len: usize,
}

impl Default for CamConfig {
    fn default() -> Self {
        Self {
            curve_len: cogmotor::explain::DEFAULT_CURVE_LEN,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub manifest: Option<PathBuf>,
}

/// Every stage's settings plus the master seed. Stage seeds inside nested
/// sections are overwritten by `seed` so the persisted copy is the single
/// source of truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub assess: AssessConfig,
    pub trust: TrustConfig,
    pub cam: CamConfig,
    pub contrastive: BackboneConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Propagates the master seed and checks every section.
    pub fn finalize(mut self) -> Result<Self, CliError> {
        self.synth.rng_seed = self.seed;
        self.contrastive.rng_seed = self.seed;
        let usage = |e: cogmotor::Error| CliError::Usage(e.to_string());
        self.synth.validate().map_err(usage)?;
        self.pipeline.mbll.validate().map_err(usage)?;
        self.contrastive.validate().map_err(usage)?;
        self.model.network(1, self.assess.head.head(), self.seed).validate().map_err(usage)?;
        if self.assess.iterations < 2 {
            return Err(CliError::Usage("iterations must be at least 2".into()));
        }
        if self.cam.curve_len < 2 {
            return Err(CliError::Usage("cam curve length must be at least 2".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Usage("jobs must be positive".into()));
        }
        Ok(self)
    }

    pub fn manifest(&self) -> Result<&Path, CliError> {
        self.data
            .manifest
            .as_deref()
            .ok_or_else(|| CliError::Usage("no manifest given (--manifest or data.manifest)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let cfg = RunConfig::default().finalize().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"filters": 8}}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 4, "assess": {"head": "regress"}}"#).unwrap();
        assert_eq!(partial.assess.head, HeadKind::Regress);
        assert_eq!(partial.assess.iterations, 100);
    }

    #[test]
    fn seed_propagates() {
        let cfg = RunConfig {
            seed: 77,
            ..RunConfig::default()
        }
        .finalize()
        .unwrap();
        assert_eq!(cfg.synth.rng_seed, 77);
        assert_eq!(cfg.contrastive.rng_seed, 77);
    }
}
