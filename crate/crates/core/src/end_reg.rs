//! The EnD regularizer on normalized embeddings.
//!
//! For sample `i` in a minibatch let `B(i)` be the other samples sharing its
//! bias label and `J(i)` the samples sharing its target but carrying a
//! different bias label. Then
//!
//! ```text
//! R⊥_i = mean_{a ∈ B(i)} z_i·z_a          (0 when B(i) is empty)
//! R∥_i = -mean_{j ∈ J(i)} z_i·z_j         (0 when J(i) is empty)
//! R    = mean_i (α R⊥_i + β R∥_i)
//! ```

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl EndWeights {
    pub const ZERO: EndWeights = EndWeights { alpha: 0.0, beta: 0.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::param(format!("EnD weights must be finite and >= 0, got ({alpha}, {beta})")));
        }
        Ok(EndWeights { alpha, beta })
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// Sizes of `B(i)` and `J(i)` for every sample.
struct Groups {
    same_bias: Vec<usize>,
    cross_bias: Vec<usize>,
}

impl Groups {
    fn new(targets: &[usize], biases: &[usize]) -> Self {
        let mut by_bias: HashMap<usize, usize> = HashMap::new();
        let mut by_target: HashMap<usize, usize> = HashMap::new();
        let mut by_pair: HashMap<(usize, usize), usize> = HashMap::new();
        for (&t, &b) in targets.iter().zip(biases) {
            *by_bias.entry(b).or_default() += 1;
            *by_target.entry(t).or_default() += 1;
            *by_pair.entry((t, b)).or_default() += 1;
        }
        let same_bias = biases.iter().map(|b| by_bias[b] - 1).collect();
        let cross_bias = targets
            .iter()
            .zip(biases)
            .map(|(t, b)| by_target[t] - by_pair[&(*t, *b)])
            .collect();
        Groups { same_bias, cross_bias }
    }
}

fn check_labels(z: &ArrayView2<f64>, labels: &[usize], what: &str) -> Result<()> {
    if labels.len() != z.nrows() {
        return Err(Error::param(format!(
            "{} {what} labels for a batch of {}",
            labels.len(),
            z.nrows()
        )));
    }
    Ok(())
}

/// Per-sample disentangling term `R⊥_i`.
pub fn disentangle_term(z: ArrayView2<f64>, biases: &[usize]) -> Result<Vec<f64>> {
    check_labels(&z, biases, "bias")?;
    let gram = z.dot(&z.t());
    let groups = Groups::new(biases, biases);
    Ok((0..z.nrows())
        .map(|i| {
            let n = groups.same_bias[i];
            if n == 0 {
                return 0.0;
            }
            let s: f64 = (0..z.nrows())
                .filter(|&a| a != i && biases[a] == biases[i])
                .map(|a| gram[[i, a]])
                .sum();
            s / n as f64
        })
        .collect())
}

/// Per-sample entangling term `R∥_i` (carries its minus sign).
pub fn entangle_term(z: ArrayView2<f64>, targets: &[usize], biases: &[usize]) -> Result<Vec<f64>> {
    check_labels(&z, targets, "target")?;
    check_labels(&z, biases, "bias")?;
    let gram = z.dot(&z.t());
    let groups = Groups::new(targets, biases);
    Ok((0..z.nrows())
        .map(|i| {
            let n = groups.cross_bias[i];
            if n == 0 {
                return 0.0;
            }
            let s: f64 = (0..z.nrows())
                .filter(|&j| targets[j] == targets[i] && biases[j] != biases[i])
                .map(|j| gram[[i, j]])
                .sum();
            -s / n as f64
        })
        .collect())
}

/// Batch-mean regularizer `R`.
pub fn end_penalty(z: ArrayView2<f64>, targets: &[usize], biases: &[usize], w: EndWeights) -> Result<f64> {
    if z.nrows() == 0 {
        return Ok(0.0);
    }
    let dis = disentangle_term(z, biases)?;
    let ent = entangle_term(z, targets, biases)?;
    let total: f64 = dis.iter().zip(&ent).map(|(d, e)| w.alpha * d + w.beta * e).sum();
    Ok(total / z.nrows() as f64)
}

/// Exact `dR/dz`, one row per sample.
///
/// Sample `k` enters its own sums and, symmetrically, the sums of every
/// sample that has `k` in its `B` or `J` set, so
/// `dR/dz_k = (1/M) Σ_j c_kj z_j` with
/// `c_kj = α[j ∈ B(k)](1/|B(k)| + 1/|B(j)|) - β[j ∈ J(k)](1/|J(k)| + 1/|J(j)|)`.
pub fn end_gradient(z: ArrayView2<f64>, targets: &[usize], biases: &[usize], w: EndWeights) -> Result<Array2<f64>> {
    check_labels(&z, targets, "target")?;
    check_labels(&z, biases, "bias")?;
    let m = z.nrows();
    if m == 0 || w.is_zero() {
        return Ok(Array2::zeros(z.dim()));
    }
    let groups = Groups::new(targets, biases);
    let inv = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let mut coef = Array2::<f64>::zeros((m, m));
    for k in 0..m {
        for j in 0..m {
            if j == k {
                continue;
            }
            if biases[j] == biases[k] {
                coef[[k, j]] = w.alpha * (inv(groups.same_bias[k]) + inv(groups.same_bias[j]));
            } else if targets[j] == targets[k] {
                coef[[k, j]] = -w.beta * (inv(groups.cross_bias[k]) + inv(groups.cross_bias[j]));
            }
        }
    }
    let mut grad = coef.dot(&z);
    grad /= m as f64;
    Ok(grad)
}
