//! The three-phase debiasing procedure and its evaluation utilities.
//!
//! 1. Train a plain classifier, keeping snapshots at chosen epochs.
//! 2. Fit a bias predictor on a snapshot's validation embeddings and
//!    pseudo-label the training set.
//! 3. Train a fresh classifier with cross-entropy plus the EnD penalty on the
//!    pseudo-labels, choosing `(alpha, beta)` by unbiased validation accuracy.

mod eval;
mod search;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias_predictor::{pseudo_label_dataset, BiasPredictor, FitSummary, PredictorConfig, PseudoLabeled};
use crate::biasness::BiasnessReport;
use crate::data::{make_validation_split, BiasSpec, Dataset, SyntheticGenerator};
use crate::end_reg::EndWeights;
use crate::error::{Error, Result};
use crate::model::{forward, Activation, Architecture, ModelParams, OptimizerSettings};

pub use eval::{bias_pseudo_accuracy, biasness_curve, evaluate, predict};
pub use search::{sample_candidates, search_hyperparams, SearchOutcome, Trial};
pub use train::{train_debiased, train_vanilla, VanillaRun};

/// Hidden widths and embedding size of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            hidden: vec![64, 64],
            embedding_dim: 32,
        }
    }
}

impl ModelShape {
    pub fn architecture(&self, input_dim: usize, n_classes: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            embedding_dim: self.embedding_dim,
            n_classes,
            embedding_activation: Activation::Identity,
        }
    }
}

/// Random search over `(alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Number of trained candidates, including the fixed `(0, 0)`.
    pub budget: usize,
    /// Range for log-uniform sampling of each weight.
    pub interval: [f64; 2],
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 16,
            interval: [1e-2, 50.0],
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::param("search budget must be at least 1"));
        }
        let [lo, hi] = self.interval;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::param(format!("search interval must satisfy 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSettings,
    pub seed: u64,
    /// Epochs after which the vanilla weights are kept.
    pub snapshot_epochs: Vec<usize>,
    #[serde(default)]
    pub model: ModelShape,
    /// Correlation of the training data, recorded for reports.
    pub rho: f64,
}

impl TrainConfig {
    /// 40 epochs of Adam on batches of 256 with snapshots at 10 and 40.
    pub fn desk_default(rho: f64, seed: u64) -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 256,
            optimizer: OptimizerSettings::default(),
            seed,
            snapshot_epochs: vec![10, 40],
            model: ModelShape::default(),
            rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be positive"));
        }
        if let Some(&e) = self.snapshot_epochs.iter().find(|&&e| e == 0 || e > self.epochs) {
            return Err(Error::param(format!("snapshot epoch {e} outside [1, {}]", self.epochs)));
        }
        if self.model.embedding_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::param("layer widths must be positive"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::param(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        self.optimizer.validate()
    }

    pub fn architecture(&self, data: &Dataset) -> Architecture {
        self.model.architecture(data.feature_dim(), data.n_targets())
    }

    /// Earliest and latest snapshot epochs.
    pub fn early_late(&self) -> Option<(usize, usize)> {
        Some((*self.snapshot_epochs.iter().min()?, *self.snapshot_epochs.iter().max()?))
    }
}

/// Metrics recorded after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean EnD penalty over the epoch's batches (0 for vanilla training).
    pub end_penalty: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Permutation accuracy of target predictions against validation bias
    /// labels; absent when those labels are hidden.
    pub bias_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// `(epoch, phi)` for each snapshot, filled in by the caller.
    pub phi: Vec<(usize, f64)>,
    pub weights: EndWeights,
}

impl RunReport {
    pub fn write_epochs_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train, validation and unbiased test sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Split sizes: `n_train` samples are generated at the training correlation
/// and `val_fraction` of them are moved to an unbiased validation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub n_train: usize,
    pub val_fraction: f64,
    pub n_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            n_train: 5000,
            val_fraction: 0.3,
            n_test: 2000,
        }
    }
}

/// Synthetic splits; validation and test are drawn at `rho = 1 / N`.
pub fn synthetic_splits(spec: &BiasSpec, sizes: SplitSizes) -> Result<Splits> {
    let generator = SyntheticGenerator::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all = generator.generate(sizes.n_train, spec.rho, &mut rng)?;
    let (train, val) = make_validation_split(&all, sizes.val_fraction, None, &generator, &mut rng)?;
    let test = generator.generate(sizes.n_test, 1.0 / spec.n_classes as f64, &mut rng)?;
    Ok(Splits { train, val, test })
}

/// Phase 2: fit the predictor on validation embeddings of `snapshot` and
/// pseudo-label the training set.
pub fn fit_bias_predictor(
    snapshot: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    config: &PredictorConfig,
    seed: u64,
) -> Result<(BiasPredictor, PseudoLabeled, FitSummary)> {
    if snapshot.input_dim() != val.feature_dim() || snapshot.input_dim() != train.feature_dim() {
        return Err(Error::param(format!(
            "snapshot expects {} features, data has {}",
            snapshot.input_dim(),
            val.feature_dim()
        )));
    }
    let val_z = forward(snapshot, val.features().view())?;
    let (predictor, summary) = BiasPredictor::fit(val_z.embeddings().view(), config, seed)?;
    let pseudo = pseudo_label_dataset(&predictor, snapshot, train)?;
    Ok((predictor, pseudo, summary))
}

/// Permutation accuracy of pseudo-labels against the hidden ground truth.
pub fn pseudo_label_accuracy(pseudo: &PseudoLabeled) -> Result<Option<f64>> {
    let Some(truth) = &pseudo.ground_truth else {
        return Ok(None);
    };
    let labels = pseudo
        .dataset
        .biases()
        .ok_or_else(|| Error::param("pseudo-labeled dataset has no labels"))?;
    let n = pseudo.dataset.n_biases().max(pseudo.dataset.n_targets());
    bias_pseudo_accuracy(&labels, truth, n).map(Some)
}

/// Outcome of phases 2 and 3 for one snapshot.
#[derive(Debug, Clone)]
pub struct DebiasRun {
    pub snapshot_epoch: usize,
    pub predictor: BiasPredictor,
    pub fit: FitSummary,
    pub pseudo_accuracy: Option<f64>,
    pub pseudo_labels: Vec<usize>,
    pub search: SearchOutcome,
}

/// Runs phases 2 and 3 from the vanilla snapshot taken at `epoch`.
pub fn debias_from_snapshot(
    config: &TrainConfig,
    predictor_config: &PredictorConfig,
    search: &SearchConfig,
    vanilla: &VanillaRun,
    splits: &Splits,
    epoch: usize,
) -> Result<DebiasRun> {
    let snapshot = vanilla
        .snapshots
        .get(&epoch)
        .ok_or_else(|| Error::param(format!("no snapshot at epoch {epoch}")))?;
    let (predictor, pseudo, fit) = fit_bias_predictor(snapshot, &splits.train, &splits.val, predictor_config, config.seed)?;
    let pseudo_accuracy = pseudo_label_accuracy(&pseudo)?;
    let pseudo_labels = pseudo.dataset.biases().expect("pseudo-labels present");
    let outcome = search_hyperparams(
        config,
        &pseudo.dataset,
        &splits.val.masked(),
        Some(&splits.test.masked()),
        search,
    )?;
    Ok(DebiasRun {
        snapshot_epoch: epoch,
        predictor,
        fit,
        pseudo_accuracy,
        pseudo_labels,
        search: outcome,
    })
}

/// Biasness of each vanilla snapshot on the training set (with its
/// ground-truth bias labels) at the training correlation.
pub fn snapshot_biasness(vanilla: &VanillaRun, train: &Dataset, rho: f64) -> Result<Vec<(usize, BiasnessReport)>> {
    biasness_curve(&vanilla.snapshots, train, rho)
}

/// Copies of `map` restricted to `epochs`.
pub fn select_snapshots(map: &BTreeMap<usize, ModelParams>, epochs: &[usize]) -> BTreeMap<usize, ModelParams> {
    map.iter()
        .filter(|(e, _)| epochs.contains(e))
        .map(|(&e, p)| (e, p.clone()))
        .collect()
}
