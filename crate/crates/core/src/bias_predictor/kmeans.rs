use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;
pub const RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Array2<f64>,
    pub k: usize,
    /// Within-cluster sum of squares of the fitted data.
    pub inertia: f64,
}

impl ClusterModel {
    /// Nearest centroid by squared distance; ties go to the lowest index.
    pub fn nearest(&self, p: ArrayView1<f64>) -> usize {
        nearest(&self.centroids, p).0
    }
}

/// One Lloyd run from a single k-means++ seeding.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// WCSS after each assignment step.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
}

impl LloydRun {
    pub fn wcss(&self) -> f64 {
        *self.wcss_trace.last().expect("at least one assignment step")
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Array2<f64>, p: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, p);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed<R: Rng>(points: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    centroids.row_mut(0).assign(&points.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> f64 {
    let mut wcss = 0.0;
    for (i, p) in points.rows().into_iter().enumerate() {
        let (c, d) = nearest(centroids, p);
        labels[i] = c;
        wcss += d;
    }
    wcss
}

/// Lloyd iterations from a k-means++ seeding until the largest centroid
/// shift drops below [`TOLERANCE`] or [`MAX_ITERATIONS`] is reached.
pub fn lloyd<R: Rng>(points: ArrayView2<f64>, k: usize, rng: &mut R) -> Result<LloydRun> {
    let (n, dim) = points.dim();
    if k == 0 || n < k {
        return Err(Error::param(format!("k-means needs 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut centroids = plus_plus_seed(points, k, rng);
    let mut labels = vec![0; n];
    let mut trace = vec![assign(points, &centroids, &mut labels)];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (p, &c) in points.rows().into_iter().zip(&labels) {
            sums.row_mut(c).zip_mut_with(&p, |s, v| *s += v);
            counts[c] += 1;
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        // an empty cluster takes over the point farthest from its centroid
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, next.row(labels[i]))))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
                if far.1 > 0.0 {
                    next.row_mut(c).assign(&points.row(far.0));
                    counts[c] = 1;
                    counts[labels[far.0]] -= 1;
                    labels[far.0] = c;
                }
            }
        }
        let shift = centroids
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        trace.push(assign(points, &centroids, &mut labels));
        if shift < TOLERANCE {
            break;
        }
    }
    Ok(LloydRun {
        centroids,
        assignments: labels,
        wcss_trace: trace,
        iterations,
    })
}

/// Best of [`RESTARTS`] Lloyd runs by WCSS, deterministic in `seed`.
pub fn kmeans_fit(points: ArrayView2<f64>, k: usize, seed: u64) -> Result<(ClusterModel, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, k, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.wcss() < b.wcss()) {
            best = Some(run);
        }
    }
    let best = best.expect("RESTARTS > 0");
    let inertia = best.wcss();
    Ok((
        ClusterModel {
            centroids: best.centroids,
            k,
            inertia,
        },
        best.assignments,
    ))
}

/// Total sum of squared deviations from the mean.
pub fn total_sum_of_squares(points: ArrayView2<f64>) -> f64 {
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    points.rows().into_iter().map(|p| sq_dist(p, mean.view())).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::StandardNormal;

    #[test]
    fn single_cluster_is_the_mean() {
        let x = array![[0.0, 0.0], [2.0, 0.0], [1.0, 3.0], [5.0, 1.0]];
        let (m, labels) = kmeans_fit(x.view(), 1, 0).unwrap();
        assert!((m.centroids[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((m.centroids[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((m.inertia - total_sum_of_squares(x.view())).abs() < 1e-12);
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn two_point_masses() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| if j == 0 { if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 });
        let (m, _) = kmeans_fit(x.view(), 2, 1).unwrap();
        let mut xs: Vec<f64> = m.centroids.column(0).to_vec();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![-1.0, 1.0]);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn recovers_blob_means() {
        let means = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let sigma = 0.5;
        let per = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((3 * per, 2), |(i, j)| {
            means[i / per][j] + sigma * rng.sample::<f64, _>(StandardNormal)
        });
        let (m, _) = kmeans_fit(x.view(), 3, 3).unwrap();
        let tol = 3.0 * sigma / (per as f64).sqrt();
        for mu in means {
            let close = m
                .centroids
                .rows()
                .into_iter()
                .any(|c| (c[0] - mu[0]).abs() < tol && (c[1] - mu[1]).abs() < tol);
            assert!(close, "no centroid near {mu:?}: {:?}", m.centroids);
        }
    }

    #[test]
    fn wcss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_simple_fn((300, 4), || rng.sample::<f64, _>(StandardNormal));
        for k in [2, 5, 9] {
            let run = lloyd(x.view(), k, &mut rng).unwrap();
            for w in run.wcss_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", run.wcss_trace);
            }
        }
    }

    #[test]
    fn too_few_points() {
        let x = array![[0.0], [1.0]];
        assert!(kmeans_fit(x.view(), 3, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_simple_fn((150, 3), || rng.sample::<f64, _>(StandardNormal));
        let a = kmeans_fit(x.view(), 4, 42).unwrap();
        let b = kmeans_fit(x.view(), 4, 42).unwrap();
        assert_eq!(a, b);
    }
}
