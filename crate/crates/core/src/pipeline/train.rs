use std::collections::BTreeMap;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::{bias_pseudo_accuracy, evaluate, predict};
use super::{EpochRecord, RunReport, TrainConfig};
use crate::data::Dataset;
use crate::end_reg::{end_gradient, end_penalty, EndWeights};
use crate::error::{Error, Result};
use crate::model::{backward, cross_entropy, forward, ModelParams, OptimizerState};

/// Result of phase 1.
#[derive(Debug, Clone)]
pub struct VanillaRun {
    pub params: ModelParams,
    pub snapshots: BTreeMap<usize, ModelParams>,
    pub report: RunReport,
}

fn check_compatible(train: &Dataset, other: &Dataset, name: &str) -> Result<()> {
    if other.is_empty() {
        return Err(Error::param(format!("{name} set is empty")));
    }
    if other.feature_dim() != train.feature_dim() || other.n_targets() != train.n_targets() {
        return Err(Error::param(format!(
            "{name} set has {} features / {} classes, training set has {} / {}",
            other.feature_dim(),
            other.n_targets(),
            train.feature_dim(),
            train.n_targets()
        )));
    }
    Ok(())
}

/// Shared minibatch loop. The parameter initialization and batch order are
/// drawn from one stream seeded by `config.seed`, so runs with the same seed
/// and zero EnD weights are identical whatever the bias labels are.
fn run(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    weights: EndWeights,
) -> Result<(ModelParams, BTreeMap<usize, ModelParams>, RunReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    check_compatible(train, val, "validation")?;
    if let Some(t) = test {
        check_compatible(train, t, "test")?;
    }
    let biases = if weights.is_zero() {
        None
    } else {
        Some(
            train
                .biases()
                .ok_or_else(|| Error::param("EnD training needs a bias label on every sample"))?,
        )
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&config.architecture(train), &mut rng)?;
    let mut optimizer = OptimizerState::new(config.optimizer.clone());
    let x = train.features();
    let targets = train.targets();
    let val_bias = val.biases();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut snapshots = BTreeMap::new();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut penalty_sum, mut correct, mut batches) = (0.0, 0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let tb: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let cache = forward(&params, xb.view())?;
            let ce = cross_entropy(&cache.probs, &tb)?;
            let (penalty, grad) = match &biases {
                Some(b) => {
                    let bb: Vec<usize> = batch.iter().map(|&i| b[i]).collect();
                    let z = cache.embeddings().view();
                    (end_penalty(z, &tb, &bb, weights)?, Some(end_gradient(z, &tb, &bb, weights)?))
                }
                None => (0.0, None),
            };
            if !(ce + penalty).is_finite() {
                return Err(Error::Run {
                    epoch,
                    message: format!("objective became {} (cross-entropy {ce}, penalty {penalty})", ce + penalty),
                });
            }
            let grads = backward(&params, &cache, &tb, grad.as_ref())?;
            optimizer.step(&mut params, &grads)?;
            if params.values().any(|v| !v.is_finite()) {
                return Err(Error::Run {
                    epoch,
                    message: "parameters became non-finite".into(),
                });
            }
            loss_sum += ce * batch.len() as f64;
            penalty_sum += penalty;
            batches += 1;
            correct += cache.predictions().iter().zip(&tb).filter(|(p, t)| p == t).count();
        }
        let (val_accuracy, _) = evaluate(&params, val)?;
        let test_accuracy = test.map(|t| evaluate(&params, t).map(|r| r.0)).transpose()?;
        let bias_accuracy = match &val_bias {
            Some(b) => {
                let n = val.n_targets().max(val.n_biases());
                Some(bias_pseudo_accuracy(&predict(&params, val)?, b, n)?)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            end_penalty: penalty_sum / batches.max(1) as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
            test_accuracy,
            bias_accuracy,
        };
        log::debug!("epoch {epoch}: {record:?}");
        records.push(record);
        if config.snapshot_epochs.contains(&epoch) {
            snapshots.insert(epoch, params.clone());
        }
    }

    let (val_accuracy, _) = evaluate(&params, val)?;
    let test_accuracy = test.map(|t| evaluate(&params, t).map(|r| r.0)).transpose()?;
    let report = RunReport {
        epochs: records,
        val_accuracy,
        test_accuracy,
        phi: Vec::new(),
        weights,
    };
    Ok((params, snapshots, report))
}

/// Phase 1: cross-entropy only, keeping the weights after each epoch listed
/// in `config.snapshot_epochs`.
pub fn train_vanilla(config: &TrainConfig, train: &Dataset, val: &Dataset, test: Option<&Dataset>) -> Result<VanillaRun> {
    let (params, snapshots, report) = run(config, train, val, test, EndWeights::ZERO)?;
    Ok(VanillaRun {
        params,
        snapshots,
        report,
    })
}

/// Phase 3: a freshly initialized model trained on cross-entropy plus the EnD
/// penalty computed from the bias labels of `pseudo_train`.
pub fn train_debiased(
    config: &TrainConfig,
    pseudo_train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    weights: EndWeights,
) -> Result<(ModelParams, RunReport)> {
    if !pseudo_train.has_bias_labels() {
        return Err(Error::param("debiased training needs a pseudo-label on every sample"));
    }
    let (params, _, report) = run(config, pseudo_train, val, test, weights)?;
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BiasSpec;
    use crate::pipeline::{synthetic_splits, SplitSizes};

    fn small() -> (TrainConfig, crate::pipeline::Splits) {
        let spec = BiasSpec {
            rho: 0.9,
            ..BiasSpec::default()
        };
        let splits = synthetic_splits(
            &spec,
            SplitSizes {
                n_train: 400,
                val_fraction: 0.25,
                n_test: 200,
            },
        )
        .unwrap();
        let mut config = TrainConfig::desk_default(0.9, 3);
        config.epochs = 4;
        config.batch_size = 64;
        config.snapshot_epochs = vec![1, 4];
        (config, splits)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (mut config, s) = small();
        config.epochs = 0;
        config.snapshot_epochs.clear();
        let run = train_vanilla(&config, &s.train, &s.val, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init = ModelParams::init(&config.architecture(&s.train), &mut rng).unwrap();
        assert_eq!(run.params, init);
        assert!(run.report.epochs.is_empty());
    }

    #[test]
    fn snapshots_and_report_lengths() {
        let (config, s) = small();
        let run = train_vanilla(&config, &s.train, &s.val, Some(&s.test)).unwrap();
        assert_eq!(run.snapshots.keys().copied().collect::<Vec<_>>(), vec![1, 4]);
        assert_eq!(run.snapshots[&4], run.params);
        assert_eq!(run.report.epochs.len(), 4);
        assert!(run.report.epochs.iter().all(|r| r.bias_accuracy.is_some() && r.test_accuracy.is_some()));
    }

    #[test]
    fn zero_weights_reproduce_vanilla_exactly() {
        let (config, s) = small();
        let vanilla = train_vanilla(&config, &s.train, &s.val, None).unwrap();
        let relabeled = s.train.with_bias_labels(&vec![0; s.train.len()], 1).unwrap();
        let (params, report) = train_debiased(&config, &relabeled, &s.val.masked(), None, EndWeights::ZERO).unwrap();
        assert_eq!(params, vanilla.params);
        assert_eq!(report.val_accuracy, vanilla.report.val_accuracy);
        assert!(report.epochs.iter().all(|r| r.bias_accuracy.is_none()));
    }

    #[test]
    fn debiased_requires_labels() {
        let (config, s) = small();
        let err = train_debiased(&config, &s.train.masked(), &s.val, None, EndWeights::new(1.0, 1.0).unwrap());
        assert!(err.is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let (mut config, s) = small();
        config.optimizer.kind = crate::model::OptimizerKind::Sgd;
        config.optimizer.lr = 1e300;
        match train_vanilla(&config, &s.train, &s.val, None) {
            Err(Error::Run { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected a run error, got {other:?}"),
        }
    }

    #[test]
    fn bad_snapshot_epochs_rejected() {
        let (mut config, s) = small();
        config.snapshot_epochs = vec![5];
        assert!(train_vanilla(&config, &s.train, &s.val, None).is_err());
    }
}
