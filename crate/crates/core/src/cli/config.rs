//! Run configuration, read from TOML and written back fully resolved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::overlay::Polarity;
use crate::error::{Error, Result};
use crate::interpret::SaliencyMethod;
use crate::model::{ModelConfig, Preset};
use crate::robustness::{AttackConfig, PerturbationKind};
use crate::synth::Scheme;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, initialisation and training.
    pub seed: u64,
    /// Run directory.
    pub out: PathBuf,
    /// Defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub perturb: PerturbConfig,
    pub attack: AttackSection,
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Defaults to `<out>/data`.
    pub dir: Option<PathBuf>,
    pub samples: usize,
    pub scheme: Scheme,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub method: SaliencyMethod,
    /// Defaults to the predicted class.
    pub class: Option<usize>,
    pub rectify: bool,
    /// Defaults to signed for signed maps, magnitude otherwise.
    pub polarity: Option<Polarity>,
    /// Occlusion patch side; defaults to an eighth of the image.
    pub patch: Option<usize>,
    pub stride: Option<usize>,
    pub baseline: f64,
    /// Explain this PPM instead of a test image.
    pub image: Option<PathBuf>,
    /// Test-set index used when no image is given.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Test images scored per row.
    pub limit: usize,
    pub kinds: Vec<PerturbationKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub steps: usize,
    pub step_size: f64,
    pub radius: f64,
    /// Defaults to the class after the true (or predicted) one.
    pub target_class: Option<usize>,
    /// Test images attacked.
    pub trials: usize,
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub runs: usize,
    pub index: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            checkpoint: None,
            data: DataConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            perturb: PerturbConfig::default(),
            attack: AttackSection::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            samples: 200,
            scheme: Scheme::TwoClass,
            size: 64,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { preset: Preset::Desk }
    }
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            method: SaliencyMethod::GradCam,
            class: None,
            rectify: false,
            polarity: None,
            patch: None,
            stride: None,
            baseline: 0.5,
            image: None,
            index: 0,
        }
    }
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            limit: 100,
            kinds: PerturbationKind::ALL.to_vec(),
        }
    }
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::targeted(0);
        AttackSection {
            steps: a.steps,
            step_size: a.step_size,
            radius: a.radius,
            target_class: None,
            trials: 50,
            image: None,
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { runs: 50, index: 0 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::preset(self.model.preset, self.data.scheme.num_classes());
        m.input_size = self.data.size;
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config().validate()?;
        if self.perturb.limit == 0 || self.attack.trials == 0 {
            return Err(Error::Config("perturb.limit and attack.trials must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let mut d = c.clone();
        d.checkpoint = Some("m.ckpt".into());
        d.explain.polarity = Some(Polarity::Magnitude);
        d.attack.target_class = Some(1);
        assert_eq!(RunConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nlearning_rat = 0.1").is_err());
        let c = RunConfig::from_toml("seed = 3\n[train]\nepochs = 2\n[data]\nscheme = \"three_class\"").unwrap();
        assert_eq!((c.seed, c.train.epochs, c.data.scheme), (3, 2, Scheme::ThreeClass));
    }
}
