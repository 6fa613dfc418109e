use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Pairwise Euclidean distances between rows.
pub fn distance_matrix(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let sq: Vec<f64> = points.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gram = points.dot(&points.t());
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (sq[i] + sq[j] - 2.0 * gram[[i, j]]).max(0.0).sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Mean silhouette score given pairwise distances.
pub fn silhouette_from_distances(distances: &Array2<f64>, assignments: &[usize]) -> Result<f64> {
    let n = assignments.len();
    if distances.dim() != (n, n) {
        return Err(Error::param(format!(
            "distance matrix {:?} for {n} assignments",
            distances.dim()
        )));
    }
    let n_clusters = assignments.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; n_clusters];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Evaluation("silhouette needs at least two non-empty clusters".into()));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; n_clusters];
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[assignments[j]] += distances[[i, j]];
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_clusters)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Mean silhouette `(b - a) / max(a, b)`; singleton clusters score 0.
pub fn silhouette(points: ArrayView2<f64>, assignments: &[usize]) -> Result<f64> {
    if points.nrows() != assignments.len() {
        return Err(Error::param(format!(
            "{} points but {} assignments",
            points.nrows(),
            assignments.len()
        )));
    }
    silhouette_from_distances(&distance_matrix(points), assignments)
}
