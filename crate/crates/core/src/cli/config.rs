//! Run configuration.
//!
//! One TOML file holds every knob. [`RunConfig::default`] is the full
//! two-phase recipe, so an untouched file reproduces it; `fer init-config`
//! writes the defaults out in full.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::controller::{validate_phases, CallbackConfig, PhaseConfig};
use crate::dataset::{TrainFraction, Usage};
use crate::loss::LossConfig;
use crate::model::{HeadSpec, InputSpec};
use crate::rng::sha256_hex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Reference,
    ExternalAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backend: Backend,
    pub dropout_rate: f64,
    /// Block-averaging factor applied to the 48x48 input (reference backend).
    pub downsample: usize,
    /// Feature width of the pretrained backbone (external adapter).
    pub feature_dim: usize,
    pub adapter_runtime: String,
    pub adapter_weights: Option<String>,
    /// Train on the reference backend when the adapter runtime is missing
    /// instead of failing.
    pub fallback_to_reference: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Reference,
            dropout_rate: 0.5,
            downsample: 1,
            feature_dim: 1408,
            adapter_runtime: "efficientnet-b2".into(),
            adapter_weights: None,
            fallback_to_reference: false,
        }
    }
}

impl ModelConfig {
    pub fn reference_input(&self) -> InputSpec {
        InputSpec::Flat {
            downsample: self.downsample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub train_fraction: TrainFraction,
    pub test_partition: Usage,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/fer2013.csv"),
            manifest: PathBuf::from("out/prepare/manifest.json"),
            train_fraction: TrainFraction::DEFAULT,
            test_partition: Usage::PrivateTest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Recorded and passed to adapters; the reference backend ignores it.
    pub mixed_precision: bool,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub callbacks: CallbackConfig,
    pub phases: Vec<PhaseConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            batch_size: 32,
            mixed_precision: false,
            output_dir: PathBuf::from("out/train"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            callbacks: CallbackConfig::default(),
            phases: PhaseConfig::default_schedule(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// SHA-256 of the canonical TOML with `output_dir` blanked, so runs that
    /// differ only in where they write share a digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(c.to_toml().as_bytes())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn head_spec(&self) -> Result<HeadSpec> {
        Ok(HeadSpec::new(
            self.model.feature_dim,
            self.model.dropout_rate,
            crate::dataset::NUM_CLASSES,
        )?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.data.test_partition == Usage::Training {
            return Err(Error::Config(
                "data.test_partition must be PublicTest or PrivateTest".into(),
            ));
        }
        self.loss.validate()?;
        self.augment.validate()?;
        self.model.reference_input().validate()?;
        self.head_spec()?;
        validate_phases(&self.phases)?;
        self.callbacks.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    #[test]
    fn defaults_are_the_two_phase_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.seed, 42);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.total_epochs(), 10);
        assert_eq!(c.phases[0].epochs, 3);
        assert_eq!(c.phases[0].optimizer, OptimizerKind::Adam);
        assert_eq!(c.phases[0].optim.learning_rate, 1e-3);
        assert_eq!(c.phases[1].epochs, 7);
        assert_eq!(c.phases[1].optimizer, OptimizerKind::AdamW);
        assert_eq!(c.phases[1].optim.learning_rate, 3e-5);
        assert_eq!(c.phases[1].optim.weight_decay, 1e-4);
        assert_eq!(c.loss.epsilon, 0.06);
        assert_eq!(c.loss.weight_cap, 4.0);
        assert_eq!(c.callbacks.early_stop.patience, 3);
        assert_eq!(c.callbacks.plateau.factor, 0.3);
        assert_eq!(c.callbacks.plateau.patience, 2);
        assert_eq!(c.model.dropout_rate, 0.5);
        assert_eq!(c.data.train_fraction.to_string(), "7/8");
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_inherit_defaults() {
        let c = RunConfig::from_toml("seed = 7\n[loss]\nlabel_smoothing = false\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.loss.effective_epsilon(), 0.0);
        assert_eq!(c.total_epochs(), 10);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let c = RunConfig::from_toml("batch_size = 0").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("seed = \"x\""), Err(Error::Config(_))));
    }
}
