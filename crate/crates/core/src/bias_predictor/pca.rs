use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Principal axes of a point cloud. `components` rows are orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    pub components: Array2<f64>,
    /// Variance explained by each retained component.
    pub variances: Vec<f64>,
    /// Fraction of total variance captured by the retained components.
    pub retained_variance: f64,
    /// Set when the input had zero total variance.
    pub degenerate: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::param(format!(
                "PCA expects {} columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let centered = &x - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }

    pub fn project_one(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::param(format!("PCA expects {} values, got {}", self.input_dim(), x.len())));
        }
        let centered = &x - &self.mean;
        Ok(self.components.dot(&centered))
    }
}

/// Fits PCA on the rows of `x`, keeping the fewest components whose variance
/// reaches `variance_target` of the total, capped at `min(N, max_components)`.
pub fn fit_pca(x: ArrayView2<f64>, variance_target: f64, max_components: usize) -> Result<PcaModel> {
    let (n, dim) = x.dim();
    if n < 2 {
        return Err(Error::param(format!("PCA needs at least 2 rows, got {n}")));
    }
    if dim == 0 || max_components == 0 {
        return Err(Error::param("PCA needs at least one column and one component"));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::param(format!("variance target must be in (0, 1], got {variance_target}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let sym = DMatrix::from_fn(dim, dim, |i, j| cov[[i, j]]);
    let eigen = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eigen.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();

    let cap = dim.min(max_components);
    let degenerate = total <= 0.0;
    let keep = if degenerate {
        log::warn!("PCA input has zero variance; keeping a single component");
        1
    } else {
        let mut acc = 0.0;
        let mut keep = cap;
        for (i, v) in values.iter().enumerate().take(cap) {
            acc += v;
            if acc / total >= variance_target - 1e-12 {
                keep = i + 1;
                break;
            }
        }
        keep
    };

    let mut components = Array2::zeros((keep, dim));
    for (row, &src) in order.iter().take(keep).enumerate() {
        let v = eigen.eigenvectors.column(src);
        // deterministic sign: largest-magnitude entry positive
        let pivot = (0..dim).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            components[[row, j]] = sign * v[j];
        }
    }
    let kept: f64 = values[..keep].iter().sum();
    Ok(PcaModel {
        mean,
        components,
        variances: values[..keep].to_vec(),
        retained_variance: if degenerate { 1.0 } else { kept / total },
        degenerate,
    })
}
