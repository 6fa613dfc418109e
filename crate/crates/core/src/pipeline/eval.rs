use std::collections::BTreeMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::biasness::{empirical_joint, estimate_phi, BiasnessReport};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};

/// Target predictions (argmax of logits) for every sample.
pub fn predict(params: &ModelParams, dataset: &Dataset) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(Error::param("cannot predict on an empty dataset"));
    }
    Ok(forward(params, dataset.features().view())?.predictions())
}

/// Overall target accuracy and the accuracy within each target class
/// (`NaN` for classes absent from the dataset).
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<(f64, Vec<f64>)> {
    let preds = predict(params, dataset)?;
    let n_t = dataset.n_targets();
    let mut hits = vec![0usize; n_t];
    let mut totals = vec![0usize; n_t];
    for (p, t) in preds.iter().zip(dataset.targets()) {
        totals[t] += 1;
        if *p == t {
            hits[t] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &n)| if n == 0 { f64::NAN } else { h as f64 / n as f64 })
        .collect();
    Ok((correct as f64 / preds.len() as f64, per_class))
}

/// Largest fraction of agreements over all bijections of predicted labels
/// onto true labels, via optimal assignment on the confusion matrix.
pub fn bias_pseudo_accuracy(predictions: &[usize], true_bias: &[usize], n_classes: usize) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::param("permutation accuracy of an empty sequence"));
    }
    if predictions.len() != true_bias.len() {
        return Err(Error::param(format!(
            "{} predictions but {} labels",
            predictions.len(),
            true_bias.len()
        )));
    }
    let mut confusion = Matrix::new(n_classes, n_classes, 0i64);
    for (&p, &b) in predictions.iter().zip(true_bias) {
        if p >= n_classes || b >= n_classes {
            return Err(Error::param(format!("label pair ({p}, {b}) exceeds {n_classes} classes")));
        }
        confusion[(p, b)] += 1;
    }
    let (matched, _) = kuhn_munkres(&confusion);
    Ok(matched as f64 / predictions.len() as f64)
}

/// Biasness of each snapshot measured on `eval_set` against its
/// ground-truth bias labels, with `eps = 0`.
pub fn biasness_curve(
    snapshots: &BTreeMap<usize, ModelParams>,
    eval_set: &Dataset,
    rho: f64,
) -> Result<Vec<(usize, BiasnessReport)>> {
    let bias = eval_set
        .biases()
        .ok_or_else(|| Error::param("biasness curve needs ground-truth bias labels"))?;
    let n_t = eval_set.n_targets().max(eval_set.n_biases());
    snapshots
        .iter()
        .map(|(&epoch, params)| {
            let preds = predict(params, eval_set)?;
            let joint = empirical_joint(&bias, &preds, n_t)?;
            Ok((epoch, estimate_phi(&joint, rho, 0.0)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive maximum over all label permutations (Heap's algorithm).
    fn brute_force(predictions: &[usize], labels: &[usize], n: usize) -> f64 {
        let mut counts = vec![vec![0usize; n]; n];
        for (&p, &b) in predictions.iter().zip(labels) {
            counts[p][b] += 1;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let score = |perm: &[usize]| (0..n).map(|p| counts[p][perm[p]]).sum::<usize>();
        let mut best = score(&perm);
        let mut c = vec![0usize; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                best = best.max(score(&perm));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best as f64 / predictions.len() as f64
    }

    #[test]
    fn permuted_labels_score_one() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let perm = [3, 0, 4, 1, 2];
        let preds: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        assert_eq!(bias_pseudo_accuracy(&preds, &labels, 5).unwrap(), 1.0);
    }

    #[test]
    fn identity_is_raw_accuracy_when_optimal() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        let preds = vec![0, 0, 1, 2, 2, 2];
        assert!((bias_pseudo_accuracy(&preds, &labels, 3).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range_predictions() {
        assert!(bias_pseudo_accuracy(&[3], &[0], 3).is_err());
        assert!(bias_pseudo_accuracy(&[], &[], 3).is_err());
    }

    #[test]
    fn random_predictions_are_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..10)).collect();
        let acc = bias_pseudo_accuracy(&preds, &labels, 10).unwrap();
        assert!(acc >= 0.1 - 0.01 && acc < 0.13, "{acc}");
        assert!((acc - brute_force(&preds, &labels, 10)).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]
        #[test]
        fn matches_brute_force(n in 2usize..=7, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = rng.gen_range(1..60);
            let labels: Vec<usize> = (0..len).map(|_| rng.gen_range(0..n)).collect();
            let mut preds = labels.clone();
            preds.shuffle(&mut rng);
            for p in preds.iter_mut() {
                if rng.gen_bool(0.3) {
                    *p = rng.gen_range(0..n);
                }
            }
            let a = bias_pseudo_accuracy(&preds, &labels, n).unwrap();
            prop_assert!((a - brute_force(&preds, &labels, n)).abs() < 1e-15);
        }
    }
}
