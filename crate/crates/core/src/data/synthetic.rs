//! Block-structured vector data with a tunable target–bias correlation.
//!
//! Each sample is `[target block | bias block]`. The target block is the
//! center of the target class plus isotropic Gaussian noise; the bias block is
//! `bias_scale` times the center of the bias class plus (smaller) noise.
//! Centers are standard basis vectors, so they are orthonormal within a block;
//! the default `bias_scale` of 1 keeps both blocks at unit signal.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{assign_bias_label, BiasRenderer, Dataset, LabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSpec {
    pub rho: f64,
    pub n_classes: usize,
    pub dim_target: usize,
    pub dim_bias: usize,
    pub noise_target: f64,
    pub noise_bias: f64,
    /// Norm of the bias-block class centers.
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
    /// Require the bias to be the easier pattern (`noise_bias < noise_target`).
    #[serde(default = "default_true")]
    pub malignant: bool,
    pub seed: u64,
}

fn default_bias_scale() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            rho: 0.999,
            n_classes: 10,
            dim_target: 10,
            dim_bias: 10,
            noise_target: 0.3,
            noise_bias: 0.05,
            bias_scale: 1.0,
            malignant: true,
            seed: 0,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::param(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        if self.n_classes < 2 {
            return Err(Error::param(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.dim_target < self.n_classes || self.dim_bias < self.n_classes {
            return Err(Error::param(format!(
                "block dimensions ({}, {}) must be >= n_classes {} for orthogonal centers",
                self.dim_target, self.dim_bias, self.n_classes
            )));
        }
        if !(self.noise_target >= 0.0 && self.noise_bias >= 0.0) {
            return Err(Error::param("noise levels must be non-negative"));
        }
        if !(self.bias_scale > 0.0 && self.bias_scale.is_finite()) {
            return Err(Error::param(format!("bias_scale must be positive, got {}", self.bias_scale)));
        }
        if self.malignant && self.noise_bias >= self.noise_target {
            return Err(Error::param(format!(
                "malignant bias requires noise_bias < noise_target ({} >= {})",
                self.noise_bias, self.noise_target
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    spec: BiasSpec,
}

impl SyntheticGenerator {
    pub fn new(spec: BiasSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &BiasSpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.dim_target + self.spec.dim_bias
    }

    /// `n` samples with uniformly drawn targets and bias labels at `rho`.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rho: f64, rng: &mut R) -> Result<Dataset> {
        let k = self.spec.n_classes;
        if n < k {
            return Err(Error::param(format!("need at least {k} samples, got {n}")));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let target = rng.gen_range(0..k);
            let bias = assign_bias_label(target, rho, k, rng)?;
            let mut features = vec![0.0; self.feature_dim()];
            self.fill_target_block(&mut features, target, rng);
            self.fill_bias_block(&mut features, bias, rng);
            samples.push(LabeledSample {
                features,
                target,
                bias: Some(bias),
            });
        }
        Dataset::new(samples, k, k, rho)
    }

    fn fill_target_block<R: Rng + ?Sized>(&self, features: &mut [f64], target: usize, rng: &mut R) {
        let block = &mut features[..self.spec.dim_target];
        for (j, f) in block.iter_mut().enumerate() {
            let center = if j == target { 1.0 } else { 0.0 };
            *f = center + self.spec.noise_target * rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn fill_bias_block<R: Rng + ?Sized>(&self, features: &mut [f64], bias: usize, rng: &mut R) {
        let block = &mut features[self.spec.dim_target..];
        for (j, f) in block.iter_mut().enumerate() {
            let center = if j == bias { self.spec.bias_scale } else { 0.0 };
            *f = center + self.spec.noise_bias * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

impl BiasRenderer for SyntheticGenerator {
    fn render(&self, _index: usize, sample: &LabeledSample, bias: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        if sample.features.len() != self.feature_dim() {
            return Err(Error::param(format!(
                "sample has {} features, generator expects {}",
                sample.features.len(),
                self.feature_dim()
            )));
        }
        let mut features = sample.features.clone();
        self.fill_bias_block(&mut features, bias, rng);
        Ok(features)
    }
}

/// Generates `n` samples at `spec.rho`.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &BiasSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    SyntheticGenerator::new(spec.clone())?.generate(n, spec.rho, rng)
}
