//! Subgroup discovery in a biased latent space: PCA fitted on validation
//! embeddings, KMeans with silhouette-driven choice of k, and nearest-centroid
//! pseudo-labeling of the training set.

mod kmeans;
mod pca;
mod silhouette;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};

pub use kmeans::{kmeans_fit, lloyd, total_sum_of_squares, ClusterModel, LloydRun, MAX_ITERATIONS, RESTARTS, TOLERANCE};
pub use pca::{fit_pca, PcaModel};
pub use silhouette::{distance_matrix, silhouette, silhouette_from_distances};

pub const PREDICTOR_VERSION: u32 = 1;
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.95;
pub const DEFAULT_MAX_COMPONENTS: usize = 32;
pub const DEFAULT_K_MIN: usize = 2;
pub const DEFAULT_K_MAX: usize = 15;

/// Outcome of the silhouette grid search over k.
#[derive(Debug, Clone)]
pub struct KSelection {
    pub k: usize,
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    /// `(k, silhouette)` for every k tried, ascending in k.
    pub scores: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

/// Fits KMeans for every k in `[k_min, k_max]` and keeps the best silhouette.
/// Ties go to the smaller k. When there are too few points the range shrinks
/// to `[2, n - 1]`.
pub fn select_k(points: ArrayView2<f64>, k_min: usize, k_max: usize, seed: u64) -> Result<KSelection> {
    let n = points.nrows();
    if k_min < 2 || k_max < k_min {
        return Err(Error::param(format!("invalid k range [{k_min}, {k_max}]")));
    }
    let mut warnings = Vec::new();
    let (lo, hi) = if n <= k_max {
        if n < 3 {
            return Err(Error::param(format!("select_k needs at least 3 points, got {n}")));
        }
        let msg = format!("only {n} points; k range shrunk to [2, {}]", n - 1);
        log::warn!("{msg}");
        warnings.push(msg);
        (2, n - 1)
    } else {
        (k_min, k_max)
    };

    let distances = distance_matrix(points);
    let mut best: Option<(f64, ClusterModel, Vec<usize>)> = None;
    let mut scores = Vec::with_capacity(hi - lo + 1);
    for k in lo..=hi {
        let (model, assignments) = kmeans_fit(points, k, seed.wrapping_add(k as u64))?;
        let score = silhouette_from_distances(&distances, &assignments)?;
        log::debug!("k = {k}: silhouette {score:.4}, inertia {:.4}", model.inertia);
        scores.push((k, score));
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, model, assignments));
        }
    }
    let (_, model, assignments) = best.expect("non-empty k range");
    Ok(KSelection {
        k: model.k,
        model,
        assignments,
        scores,
        warnings,
    })
}

/// Settings for [`BiasPredictor::fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub variance_target: f64,
    pub max_components: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Skip the silhouette search and use this many clusters.
    #[serde(default)]
    pub force_k: Option<usize>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            variance_target: DEFAULT_VARIANCE_TARGET,
            max_components: DEFAULT_MAX_COMPONENTS,
            k_min: DEFAULT_K_MIN,
            k_max: DEFAULT_K_MAX,
            force_k: None,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(Error::param(format!(
                "variance_target must be in (0, 1], got {}",
                self.variance_target
            )));
        }
        if self.max_components == 0 {
            return Err(Error::param("max_components must be positive"));
        }
        if self.k_min < 2 || self.k_max < self.k_min {
            return Err(Error::param(format!("invalid k range [{}, {}]", self.k_min, self.k_max)));
        }
        if self.force_k == Some(0) {
            return Err(Error::param("force_k must be positive"));
        }
        Ok(())
    }
}

/// Diagnostics produced while fitting a predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_components: usize,
    pub retained_variance: f64,
    pub k: usize,
    pub silhouette_scores: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

/// PCA projection followed by nearest-centroid assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPredictor {
    pub pca: PcaModel,
    pub clusters: ClusterModel,
}

impl BiasPredictor {
    pub fn new(pca: PcaModel, clusters: ClusterModel) -> Result<Self> {
        if clusters.centroids.ncols() != pca.n_components() || clusters.centroids.nrows() != clusters.k {
            return Err(Error::param(format!(
                "centroids {:?} do not match {} clusters in {} PCA dimensions",
                clusters.centroids.dim(),
                clusters.k,
                pca.n_components()
            )));
        }
        Ok(BiasPredictor { pca, clusters })
    }

    /// Fits on embedding rows (typically the validation set).
    pub fn fit(embeddings: ArrayView2<f64>, config: &PredictorConfig, seed: u64) -> Result<(Self, FitSummary)> {
        config.validate()?;
        let pca = fit_pca(embeddings, config.variance_target, config.max_components)?;
        let mut warnings = Vec::new();
        if pca.degenerate {
            warnings.push("embeddings have zero variance".to_string());
        }
        let projected = pca.project(embeddings)?;
        let (clusters, scores) = match config.force_k {
            Some(k) => (kmeans_fit(projected.view(), k, seed)?.0, Vec::new()),
            None => {
                let sel = select_k(projected.view(), config.k_min, config.k_max, seed)?;
                warnings.extend(sel.warnings);
                (sel.model, sel.scores)
            }
        };
        let summary = FitSummary {
            n_components: pca.n_components(),
            retained_variance: pca.retained_variance,
            k: clusters.k,
            silhouette_scores: scores,
            warnings,
        };
        Ok((BiasPredictor { pca, clusters }, summary))
    }

    pub fn k(&self) -> usize {
        self.clusters.k
    }

    pub fn input_dim(&self) -> usize {
        self.pca.input_dim()
    }

    pub fn predict_batch(&self, embeddings: ArrayView2<f64>) -> Result<Vec<usize>> {
        let projected = self.pca.project(embeddings)?;
        Ok(projected.rows().into_iter().map(|p| self.clusters.nearest(p)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&PredictorFile::from(self))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PredictorFile = serde_json::from_str(&text)?;
        file.try_into()
    }
}

/// Nearest-centroid pseudo-label of one embedding; ties go to the lowest index.
pub fn predict_bias(predictor: &BiasPredictor, z: ArrayView1<f64>) -> Result<usize> {
    let p = predictor.pca.project_one(z)?;
    Ok(predictor.clusters.nearest(p.view()))
}

/// Training set relabeled with pseudo-labels, plus the hidden ground truth
/// kept only for evaluation.
#[derive(Debug, Clone)]
pub struct PseudoLabeled {
    pub dataset: Dataset,
    pub ground_truth: Option<Vec<usize>>,
}

/// Embeds every training sample with `encoder` and overwrites its bias field
/// with the predicted cluster.
pub fn pseudo_label_dataset(predictor: &BiasPredictor, encoder: &ModelParams, train: &Dataset) -> Result<PseudoLabeled> {
    let x = train.features();
    let cache = forward(encoder, x.view())?;
    if cache.embeddings().ncols() != predictor.input_dim() {
        return Err(Error::param(format!(
            "encoder embeds into {} dimensions, predictor expects {}",
            cache.embeddings().ncols(),
            predictor.input_dim()
        )));
    }
    let labels = predictor.predict_batch(cache.embeddings().view())?;
    let ground_truth = train.biases();
    let dataset = train.with_bias_labels(&labels, predictor.k())?;
    Ok(PseudoLabeled { dataset, ground_truth })
}

/// Writes `index,pseudo_label` rows.
pub fn write_pseudo_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    w.write_record(["index", "pseudo_label"])?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictorFile {
    format_version: u32,
    k: usize,
    pca_mean: Vec<f64>,
    pca_components: Vec<Vec<f64>>,
    pca_variances: Vec<f64>,
    retained_variance: f64,
    degenerate: bool,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        if r.len() != cols {
            return Err(Error::Serde(format!("{what}: row of length {} where {cols} expected", r.len())));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::Serde(format!("{what}: {e}")))
}

impl From<&BiasPredictor> for PredictorFile {
    fn from(p: &BiasPredictor) -> Self {
        PredictorFile {
            format_version: PREDICTOR_VERSION,
            k: p.clusters.k,
            pca_mean: p.pca.mean.to_vec(),
            pca_components: rows(&p.pca.components),
            pca_variances: p.pca.variances.clone(),
            retained_variance: p.pca.retained_variance,
            degenerate: p.pca.degenerate,
            centroids: rows(&p.clusters.centroids),
            inertia: p.clusters.inertia,
        }
    }
}

impl TryFrom<PredictorFile> for BiasPredictor {
    type Error = Error;

    fn try_from(f: PredictorFile) -> Result<Self> {
        if f.format_version != PREDICTOR_VERSION {
            return Err(Error::Serde(format!(
                "unsupported predictor version {} (expected {PREDICTOR_VERSION})",
                f.format_version
            )));
        }
        let dim = f.pca_mean.len();
        let components = from_rows(&f.pca_components, dim, "pca_components")?;
        let centroids = from_rows(&f.centroids, components.nrows(), "centroids")?;
        let pca = PcaModel {
            mean: Array1::from(f.pca_mean),
            components,
            variances: f.pca_variances,
            retained_variance: f.retained_variance,
            degenerate: f.degenerate,
        };
        let clusters = ClusterModel {
            centroids,
            k: f.k,
            inertia: f.inertia,
        };
        BiasPredictor::new(pca, clusters).map_err(|e| Error::Serde(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, BiasSpec};
    use crate::model::Architecture;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(k: usize, per: usize, dim: usize, sigma: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((k * per, dim), |(i, j)| {
            let c = i / per;
            let center = if j == c % dim { 10.0 * (1 + c / dim) as f64 } else { 0.0 };
            center + sigma * rng.sample::<f64, _>(StandardNormal)
        })
    }

    #[test]
    fn select_k_finds_ten_blobs() {
        let x = blobs(10, 40, 10, 0.5, 0);
        let sel = select_k(x.view(), 2, 15, 7).unwrap();
        assert_eq!(sel.k, 10);
        assert_eq!(sel.scores.len(), 14);
    }

    #[test]
    fn select_k_finds_two_blobs() {
        let x = blobs(2, 50, 3, 0.5, 1);
        assert_eq!(select_k(x.view(), 2, 15, 0).unwrap().k, 2);
    }

    #[test]
    fn select_k_is_deterministic() {
        let x = blobs(4, 30, 3, 2.0, 2);
        let a = select_k(x.view(), 2, 8, 11).unwrap();
        let b = select_k(x.view(), 2, 8, 11).unwrap();
        assert_eq!(a.k, b.k);
        assert_eq!(a.model, b.model);
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn select_k_shrinks_range_for_few_points() {
        let x = blobs(2, 4, 2, 0.1, 3);
        let sel = select_k(x.view(), 2, 15, 0).unwrap();
        assert_eq!(sel.scores.last().unwrap().0, 7);
        assert_eq!(sel.warnings.len(), 1);
    }

    #[test]
    fn select_k_on_identical_points_fails() {
        let x = Array2::from_elem((30, 3), 1.0);
        assert!(matches!(select_k(x.view(), 2, 15, 0), Err(Error::Evaluation(_))));
    }

    fn hand_predictor() -> BiasPredictor {
        let pca = PcaModel {
            mean: array![0.0, 0.0],
            components: array![[1.0, 0.0], [0.0, 1.0]],
            variances: vec![1.0, 1.0],
            retained_variance: 1.0,
            degenerate: false,
        };
        let clusters = ClusterModel {
            centroids: array![[0.0, 0.0], [2.0, 0.0], [0.0, 5.0]],
            k: 3,
            inertia: 0.0,
        };
        BiasPredictor::new(pca, clusters).unwrap()
    }

    #[test]
    fn predict_at_centroid_and_tie() {
        let p = hand_predictor();
        assert_eq!(predict_bias(&p, array![0.0, 5.0].view()).unwrap(), 2);
        assert_eq!(predict_bias(&p, array![1.0, 0.0].view()).unwrap(), 0);
        assert!(predict_bias(&p, array![1.0].view()).is_err());
    }

    #[test]
    fn batch_prediction_reproduces_fit_assignments() {
        let x = blobs(5, 30, 6, 1.0, 4);
        let (pred, summary) = BiasPredictor::fit(x.view(), &PredictorConfig::default(), 3).unwrap();
        assert_eq!(summary.k, pred.k());
        let projected = pred.pca.project(x.view()).unwrap();
        let sel = select_k(projected.view(), 2, 15, 3).unwrap();
        assert_eq!(pred.predict_batch(x.view()).unwrap(), sel.assignments);
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_eq!(predict_bias(&pred, row).unwrap(), sel.assignments[i]);
        }
    }

    #[test]
    fn predictor_file_roundtrip() {
        let x = blobs(3, 20, 4, 1.0, 5);
        let (pred, _) = BiasPredictor::fit(x.view(), &PredictorConfig::default(), 0).unwrap();
        let dir = std::env::temp_dir().join(format!("uend-pred-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("predictor.json");
        pred.save(&path).unwrap();
        assert_eq!(BiasPredictor::load(&path).unwrap(), pred);
        let csv_path = dir.join("pseudo.csv");
        write_pseudo_labels(&csv_path, &[2, 0]).unwrap();
        assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), "index,pseudo_label\n0,2\n1,0\n");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn forced_single_cluster_labels_everything_zero() {
        let spec = BiasSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = generate_synthetic(&spec, 200, &mut rng).unwrap();
        let arch = Architecture::desk_default(train.feature_dim(), train.n_targets());
        let encoder = ModelParams::init(&arch, &mut rng).unwrap();
        let z = forward(&encoder, train.features().view()).unwrap();
        let config = PredictorConfig {
            force_k: Some(1),
            ..PredictorConfig::default()
        };
        let (pred, _) = BiasPredictor::fit(z.embeddings().view(), &config, 0).unwrap();
        let out = pseudo_label_dataset(&pred, &encoder, &train).unwrap();
        assert!(out.dataset.biases().unwrap().iter().all(|&b| b == 0));
        assert_eq!(out.ground_truth, train.biases());
        assert_eq!(out.dataset.n_biases(), 1);
    }
}
