//! Labeled datasets with a target class and a (possibly hidden) bias class.
//!
//! Every generator in this module records the ground-truth bias label of each
//! sample. Unsupervised phases receive a [`Dataset::masked`] copy instead.

mod colorize;
mod idx;
mod synthetic;

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

pub use colorize::{colorize, Colorizer, Palette, BACKGROUND_THRESHOLD};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, GrayImage, IMAGES_MAGIC, LABELS_MAGIC};
pub use synthetic::{generate_synthetic, BiasSpec, SyntheticGenerator};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub target: usize,
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    n_targets: usize,
    n_biases: usize,
    rho: f64,
}

impl Dataset {
    /// Builds a dataset, checking the shared feature dimension and label ranges.
    pub fn new(samples: Vec<LabeledSample>, n_targets: usize, n_biases: usize, rho: f64) -> Result<Self> {
        if n_targets < 2 {
            return Err(Error::param(format!("n_targets must be >= 2, got {n_targets}")));
        }
        if let Some(first) = samples.first() {
            let dim = first.features.len();
            for (i, s) in samples.iter().enumerate() {
                if s.features.len() != dim {
                    return Err(Error::param(format!(
                        "sample {i} has {} features, expected {dim}",
                        s.features.len()
                    )));
                }
                if s.target >= n_targets {
                    return Err(Error::param(format!("sample {i}: target {} >= {n_targets}", s.target)));
                }
                if let Some(b) = s.bias {
                    if b >= n_biases {
                        return Err(Error::param(format!("sample {i}: bias {b} >= {n_biases}")));
                    }
                }
            }
        }
        Ok(Self {
            samples,
            n_targets,
            n_biases,
            rho,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn n_biases(&self) -> usize {
        self.n_biases
    }

    /// Target–bias correlation the data was generated with (metadata only).
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn features(&self) -> Array2<f64> {
        self.features_of(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Feature rows for the given sample indices, in order.
    pub fn features_of(&self, indices: &[usize]) -> Array2<f64> {
        let dim = self.feature_dim();
        let mut out = Array2::zeros((indices.len(), dim));
        for (row, &i) in indices.iter().enumerate() {
            out.row_mut(row)
                .iter_mut()
                .zip(&self.samples[i].features)
                .for_each(|(o, v)| *o = *v);
        }
        out
    }

    pub fn targets(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.target).collect()
    }

    /// Bias labels, or `None` if any sample has its bias hidden.
    pub fn biases(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.bias).collect()
    }

    pub fn has_bias_labels(&self) -> bool {
        self.samples.iter().all(|s| s.bias.is_some())
    }

    /// Copy with every bias label hidden.
    pub fn masked(&self) -> Dataset {
        let samples = self
            .samples
            .iter()
            .map(|s| LabeledSample {
                bias: None,
                ..s.clone()
            })
            .collect();
        Dataset { samples, ..*self }
    }

    /// Copy whose bias fields are replaced by `labels` drawn from `n_biases` classes.
    pub fn with_bias_labels(&self, labels: &[usize], n_biases: usize) -> Result<Dataset> {
        if labels.len() != self.len() {
            return Err(Error::param(format!(
                "{} bias labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &b)| LabeledSample {
                bias: Some(b),
                ..s.clone()
            })
            .collect();
        Dataset::new(samples, self.n_targets, n_biases, self.rho)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..*self
        }
    }

    /// Fraction of samples whose bias label equals the target label.
    pub fn alignment(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let biases = self.biases()?;
        let hits = biases.iter().zip(self.samples.iter()).filter(|(b, s)| **b == s.target).count();
        Some(hits as f64 / self.len() as f64)
    }

    /// Writes one row per sample: `f0,...,f{D-1},target,bias` with an empty
    /// bias cell for hidden labels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let dim = self.feature_dim();
        let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
        header.push("target".into());
        header.push("bias".into());
        writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for s in &self.samples {
            let mut line = String::with_capacity(dim * 12);
            for f in &s.features {
                line.push_str(&format!("{f:?},"));
            }
            line.push_str(&s.target.to_string());
            line.push(',');
            if let Some(b) = s.bias {
                line.push_str(&b.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the format produced by [`Dataset::write_csv`].
    pub fn read_csv(path: &Path, n_targets: usize, n_biases: usize, rho: f64) -> Result<Dataset> {
        let name = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Format {
                path: name.clone(),
                offset: 0,
                message: e.to_string(),
            })?;
        let mut samples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let line = row as u64 + 2;
            let bad = |message: String| Error::Format {
                path: name.clone(),
                offset: line,
                message,
            };
            let record = record.map_err(|e| bad(e.to_string()))?;
            if record.len() < 3 {
                return Err(bad(format!("expected at least 3 columns, got {}", record.len())));
            }
            let n = record.len();
            let features = record
                .iter()
                .take(n - 2)
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("feature {v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let target = record[n - 2]
                .trim()
                .parse::<usize>()
                .map_err(|e| bad(format!("target: {e}")))?;
            let bias_cell = record[n - 1].trim();
            let bias = if bias_cell.is_empty() {
                None
            } else {
                Some(bias_cell.parse::<usize>().map_err(|e| bad(format!("bias: {e}")))?)
            };
            samples.push(LabeledSample { features, target, bias });
        }
        Dataset::new(samples, n_targets, n_biases, rho)
    }
}

/// Draws a bias class for `target`: the aligned class with probability `rho`,
/// otherwise one of the other `n_classes - 1` classes uniformly.
pub fn assign_bias_label<R: Rng + ?Sized>(target: usize, rho: f64, n_classes: usize, rng: &mut R) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::param(format!("rho must be in (0, 1], got {rho}")));
    }
    if n_classes < 2 {
        return Err(Error::param(format!("n_classes must be >= 2, got {n_classes}")));
    }
    if target >= n_classes {
        return Err(Error::param(format!("target {target} out of range for {n_classes} classes")));
    }
    if rng.gen::<f64>() < rho {
        return Ok(target);
    }
    let other = rng.gen_range(0..n_classes - 1);
    Ok(if other >= target { other + 1 } else { other })
}

/// Re-renders a sample's bias-carrying features for a new bias class.
pub trait BiasRenderer {
    fn render(&self, index: usize, sample: &LabeledSample, bias: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

/// Splits off `ceil(fraction * n)` samples as a validation set whose bias
/// labels are redrawn at `rho_val` (default `1 / N_T`, the unbiased regime).
pub fn make_validation_split<R: Rng>(
    train: &Dataset,
    fraction: f64,
    rho_val: Option<f64>,
    renderer: &dyn BiasRenderer,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("validation fraction must be in (0, 1), got {fraction}")));
    }
    let n = train.len();
    let n_val = (fraction * n as f64).ceil() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::param(format!("fraction {fraction} leaves an empty split of {n} samples")));
    }
    let rho_val = rho_val.unwrap_or(1.0 / train.n_targets() as f64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();

    let mut val_samples = Vec::with_capacity(n_val);
    for &i in &val_idx {
        let s = &train.samples[i];
        let bias = assign_bias_label(s.target, rho_val, train.n_biases().max(train.n_targets()), rng)?;
        let features = renderer.render(i, s, bias, rng)?;
        val_samples.push(LabeledSample {
            features,
            target: s.target,
            bias: Some(bias),
        });
    }
    let val = Dataset::new(val_samples, train.n_targets(), train.n_biases(), rho_val)?;
    Ok((train.subset(&train_idx), val))
}
