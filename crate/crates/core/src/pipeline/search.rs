use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::train_debiased;
use super::{RunReport, SearchConfig, TrainConfig};
use crate::data::Dataset;
use crate::end_reg::EndWeights;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Salt separating the candidate stream from the training stream.
const SEARCH_STREAM: u64 = 0x5EA2_C4ED;

/// One trained candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: EndWeights,
    pub trials: Vec<Trial>,
    pub params: ModelParams,
    pub report: RunReport,
}

impl SearchOutcome {
    pub fn write_trials_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        for t in &self.trials {
            w.serialize(t)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `(0, 0)` followed by `budget - 1` pairs with each weight log-uniform on
/// the interval.
pub fn sample_candidates<R: Rng>(budget: usize, interval: [f64; 2], rng: &mut R) -> Vec<EndWeights> {
    let [lo, hi] = interval;
    let (a, b) = (lo.ln(), hi.ln());
    let draw = |rng: &mut R| if a == b { lo } else { rng.gen_range(a..=b).exp() };
    let mut out = Vec::with_capacity(budget);
    if budget > 0 {
        out.push(EndWeights::ZERO);
    }
    while out.len() < budget {
        let alpha = draw(rng);
        let beta = draw(rng);
        out.push(EndWeights { alpha, beta });
    }
    out
}

/// Trains every candidate with the same seed and keeps the one with the best
/// validation accuracy; ties go to the smaller `alpha + beta`.
pub fn search_hyperparams(
    config: &TrainConfig,
    pseudo_train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    search: &SearchConfig,
) -> Result<SearchOutcome> {
    search.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SEARCH_STREAM);
    let candidates = sample_candidates(search.budget, search.interval, &mut rng);
    let mut trials = Vec::with_capacity(candidates.len());
    let mut best: Option<(EndWeights, ModelParams, RunReport)> = None;
    for (index, w) in candidates.into_iter().enumerate() {
        let (params, report) = train_debiased(config, pseudo_train, val, test, w)?;
        log::info!(
            "trial {index}: alpha {:.4} beta {:.4} -> val {:.4}",
            w.alpha,
            w.beta,
            report.val_accuracy
        );
        trials.push(Trial {
            index,
            alpha: w.alpha,
            beta: w.beta,
            val_accuracy: report.val_accuracy,
            test_accuracy: report.test_accuracy,
        });
        let better = match &best {
            None => true,
            Some((bw, _, br)) => {
                report.val_accuracy > br.val_accuracy
                    || (report.val_accuracy == br.val_accuracy && w.alpha + w.beta < bw.alpha + bw.beta)
            }
        };
        if better {
            best = Some((w, params, report));
        }
    }
    let (best, params, report) = best.expect("budget >= 1");
    Ok(SearchOutcome {
        best,
        trials,
        params,
        report,
    })
}
