//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uend::bias_predictor::PredictorConfig;
use uend::data::{BiasSpec, Palette};
use uend::model::OptimizerSettings;
use uend::pipeline::{ModelShape, SearchConfig, SplitSizes, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub seed: u64,
    /// Run directory; relative paths are taken from the working directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticData),
    Idx(IdxData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub rho: f64,
    #[serde(default = "ten")]
    pub n_classes: usize,
    #[serde(default = "ten")]
    pub dim_target: usize,
    #[serde(default = "ten")]
    pub dim_bias: usize,
    #[serde(default = "noise_target")]
    pub noise_target: f64,
    #[serde(default = "noise_bias")]
    pub noise_bias: f64,
    #[serde(default = "one")]
    pub bias_scale: f64,
    #[serde(default = "yes")]
    pub malignant: bool,
    #[serde(default = "n_train")]
    pub n_train: usize,
    #[serde(default = "val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "n_test")]
    pub n_test: usize,
}

/// Digit images colorized by background. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxData {
    pub rho: f64,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// RGB colors, one per class; ten built-in colors when absent.
    #[serde(default)]
    pub palette: Option<Vec<[u8; 3]>>,
    #[serde(default = "val_fraction")]
    pub val_fraction: f64,
    /// Use only the first `limit` images of each file.
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    /// Epochs whose weights are kept and measured for biasness.
    pub snapshot_epochs: Vec<usize>,
    /// Snapshots used for pseudo-labeling; the earliest and latest when absent.
    #[serde(default)]
    pub debias_epochs: Option<Vec<usize>>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let d = TrainConfig::desk_default(0.5, 0);
        TrainingConfig {
            epochs: d.epochs,
            batch_size: d.batch_size,
            optimizer: d.optimizer,
            snapshot_epochs: d.snapshot_epochs,
            debias_epochs: None,
        }
    }
}

fn ten() -> usize {
    10
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn noise_target() -> f64 {
    BiasSpec::default().noise_target
}
fn noise_bias() -> f64 {
    BiasSpec::default().noise_bias
}
fn n_train() -> usize {
    SplitSizes::default().n_train
}
fn val_fraction() -> f64 {
    SplitSizes::default().val_fraction
}
fn n_test() -> usize {
    SplitSizes::default().n_test
}

fn invalid(path: &str, message: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{path}: {message}"))
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        if let DataConfig::Idx(idx) = &mut config.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [
                &mut idx.train_images,
                &mut idx.train_labels,
                &mut idx.test_images,
                &mut idx.test_labels,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("{path}: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let rho = self.rho();
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(invalid("data.rho", format!("must be in (0, 1], got {rho}")));
        }
        match &self.data {
            DataConfig::Synthetic(s) => {
                self.bias_spec()
                    .expect("synthetic")
                    .validate()
                    .map_err(|e| invalid("data", e))?;
                if s.n_train == 0 || s.n_test == 0 {
                    return Err(invalid("data.n_train", "split sizes must be positive"));
                }
                check_fraction(s.val_fraction)?;
            }
            DataConfig::Idx(i) => {
                check_fraction(i.val_fraction)?;
                if let Some(p) = &i.palette {
                    if p.len() < 2 {
                        return Err(invalid("data.palette", "needs at least 2 colors"));
                    }
                }
                if i.limit == Some(0) {
                    return Err(invalid("data.limit", "must be positive"));
                }
            }
        }
        let train = self.train_config();
        train.validate().map_err(|e| invalid("training", e))?;
        if let Some(d) = &self.training.debias_epochs {
            if let Some(e) = d.iter().find(|e| !self.training.snapshot_epochs.contains(e)) {
                return Err(invalid("training.debias_epochs", format!("epoch {e} is not a snapshot epoch")));
            }
        }
        self.predictor.validate().map_err(|e| invalid("predictor", e))?;
        self.search.validate().map_err(|e| invalid("search", e))?;
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        match &self.data {
            DataConfig::Synthetic(s) => s.rho,
            DataConfig::Idx(i) => i.rho,
        }
    }

    pub fn bias_spec(&self) -> Option<BiasSpec> {
        match &self.data {
            DataConfig::Synthetic(s) => Some(BiasSpec {
                rho: s.rho,
                n_classes: s.n_classes,
                dim_target: s.dim_target,
                dim_bias: s.dim_bias,
                noise_target: s.noise_target,
                noise_bias: s.noise_bias,
                bias_scale: s.bias_scale,
                malignant: s.malignant,
                seed: self.seed,
            }),
            DataConfig::Idx(_) => None,
        }
    }

    pub fn palette(&self) -> Option<Palette> {
        match &self.data {
            DataConfig::Idx(i) => Some(i.palette.clone().map(Palette).unwrap_or_else(Palette::default_ten)),
            DataConfig::Synthetic(_) => None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            optimizer: self.training.optimizer.clone(),
            seed: self.seed,
            snapshot_epochs: self.training.snapshot_epochs.clone(),
            model: self.model.clone(),
            rho: self.rho(),
        }
    }

    pub fn debias_epochs(&self) -> Vec<usize> {
        match &self.training.debias_epochs {
            Some(d) => d.clone(),
            None => {
                let mut v: Vec<usize> = self.train_config().early_late().map(|(a, b)| vec![a, b]).unwrap_or_default();
                v.dedup();
                v
            }
        }
    }
}

fn check_fraction(f: f64) -> Result<(), CliError> {
    if !(f > 0.0 && f < 1.0) {
        return Err(invalid("data.val_fraction", format!("must be in (0, 1), got {f}")));
    }
    Ok(())
}
