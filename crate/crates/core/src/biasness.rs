//! Closed-form model of how strongly a classifier follows the bias.
//!
//! Targets are uniform over `N` classes, the bias agrees with the target with
//! probability `rho`, and the classifier output `Y` follows the bias with
//! tendency `phi`. `eps` is a residual error unrelated to the bias. From the
//! joint `P(T, B, Y)` we derive `P(B, Y)`, its normalized mutual information,
//! and an inverse that recovers `phi` from a measured `P(B, Y)`.
//!
//! All tables are marginal-uniform, so normalized MI is `I(B, Y) / log N`.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-12;
/// Total variation from uniform above which a report carries a warning.
pub const MARGINAL_TV_WARNING: f64 = 0.05;

/// `x * log2(x)` with the `0 log 0 = 0` convention.
fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::param(format!("rho must be in (0, 1], got {rho}")));
    }
    Ok(())
}

/// Normalized MI between bias and output for a classifier that predicts the
/// target perfectly: `log_N { N rho [(1 - rho) / (rho (N - 1))]^(1 - rho) }`.
pub fn nmi_perfect(rho: f64, n_t: usize) -> Result<f64> {
    check_rho(rho)?;
    if n_t < 2 {
        return Err(Error::param(format!("n_t must be >= 2, got {n_t}")));
    }
    let n = n_t as f64;
    // rho log rho + (1 - rho) log((1 - rho) / (N - 1)) + log N, over log N
    let off = if rho < 1.0 { xlog2x(1.0 - rho) - (1.0 - rho) * (n - 1.0).log2() } else { 0.0 };
    let value = (n.log2() + xlog2x(rho) + off) / n.log2();
    Ok(value.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub rho: f64,
    pub phi: f64,
    pub eps: f64,
    pub n_t: usize,
}

impl TheoryParams {
    pub fn new(rho: f64, phi: f64, eps: f64, n_t: usize) -> Result<Self> {
        let p = TheoryParams { rho, phi, eps, n_t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::param(format!("phi must be in [0, 1], got {}", self.phi)));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::param(format!("eps must be in [0, 1], got {}", self.eps)));
        }
        if self.n_t < 3 {
            return Err(Error::param(format!("n_t must be >= 3, got {}", self.n_t)));
        }
        Ok(())
    }

    /// `N P(b, y)` for `b = y`.
    fn diag_mass(&self) -> f64 {
        self.rho * (1.0 - self.eps) + self.phi * (1.0 - self.rho)
    }

    /// `N P(b, y)` for `b != y`.
    fn off_mass(&self) -> f64 {
        let n = self.n_t as f64;
        ((1.0 - self.phi) * (1.0 - self.rho) + self.rho * self.eps) / (n - 1.0)
    }
}

/// `P(T = t, B = b, Y = y)` indexed `[t, b, y]`.
///
/// Nonzero cells: all equal; `t = y != b`; `b = y != t`; `t = b != y`; all
/// distinct. The remaining pattern (`t = y`, `b = y`, `t != b`) cannot occur.
pub fn joint_tby(params: &TheoryParams) -> Result<Array3<f64>> {
    params.validate()?;
    let TheoryParams { rho, phi, eps, n_t } = *params;
    let n = n_t as f64;
    let all_equal = rho * (1.0 - eps) / n;
    let target_kept = (1.0 - phi) * (1.0 - rho) / (n - 1.0) / n;
    let bias_followed = phi * (1.0 - rho) / (n - 1.0) / n;
    let aligned_miss = eps * rho * rho / (n - 2.0 + rho) / n;
    let distinct = eps * rho * (1.0 - rho) / ((n - 1.0) * (n - 2.0 + rho)) / n;
    Ok(Array3::from_shape_fn((n_t, n_t, n_t), |(t, b, y)| {
        match (t == b, t == y, b == y) {
            (true, true, _) => all_equal,
            (false, true, false) => target_kept,
            (false, false, true) => bias_followed,
            (true, false, false) => aligned_miss,
            (false, false, false) => distinct,
            _ => 0.0,
        }
    }))
}

/// Normalized joint distribution of (bias, output), indexed `[b, y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBY {
    table: Array2<f64>,
}

impl JointBY {
    pub fn new(table: Array2<f64>) -> Result<Self> {
        let (r, c) = table.dim();
        if r != c || r == 0 {
            return Err(Error::param(format!("joint table must be square and non-empty, got {r}x{c}")));
        }
        if table.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::param("joint table entries must be finite and non-negative"));
        }
        let total = table.sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::param(format!("joint table sums to {total}, not 1")));
        }
        Ok(JointBY { table })
    }

    pub fn n_t(&self) -> usize {
        self.table.nrows()
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn get(&self, b: usize, y: usize) -> f64 {
        self.table[[b, y]]
    }

    /// Marginals of B (rows) and Y (columns).
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let rows = self.table.rows().into_iter().map(|r| r.sum()).collect();
        let cols = self.table.columns().into_iter().map(|c| c.sum()).collect();
        (rows, cols)
    }
}

/// `P(B, Y)` obtained by summing [`joint_tby`] over the target.
///
/// Diagonal `[rho (1 - eps) + phi (1 - rho)] / N`, off-diagonal
/// `[(1 - phi)(1 - rho) + rho eps] / (N (N - 1))`.
pub fn marginal_by(params: &TheoryParams) -> Result<JointBY> {
    params.validate()?;
    let n = params.n_t as f64;
    let d = params.diag_mass() / n;
    let o = params.off_mass() / n;
    JointBY::new(Array2::from_shape_fn((params.n_t, params.n_t), |(b, y)| if b == y { d } else { o }))
}

fn nmi_closed(rho: f64, phi: f64, eps: f64, n_t: usize) -> f64 {
    let n = n_t as f64;
    let a = rho * (1.0 - eps) + phi * (1.0 - rho);
    let c = ((1.0 - phi) * (1.0 - rho) + rho * eps) / (n - 1.0);
    let value = (xlog2x(a) + (n - 1.0) * xlog2x(c)) / n.log2() + 1.0;
    value.clamp(0.0, 1.0)
}

/// Normalized MI of [`marginal_by`]:
/// `log_N a^a + log_N c^((N - 1) c) + 1` with `a = N P(b = y)` and `c = N P(b != y)`.
pub fn nmi_by(params: &TheoryParams) -> Result<f64> {
    params.validate()?;
    Ok(nmi_closed(params.rho, params.phi, params.eps, params.n_t))
}

/// Normalized count table of `(bias, prediction)` pairs.
pub fn empirical_joint(bias_labels: &[usize], predictions: &[usize], n_t: usize) -> Result<JointBY> {
    if bias_labels.is_empty() {
        return Err(Error::param("empirical joint needs at least one pair"));
    }
    if bias_labels.len() != predictions.len() {
        return Err(Error::param(format!(
            "{} bias labels but {} predictions",
            bias_labels.len(),
            predictions.len()
        )));
    }
    let mut counts = Array2::<f64>::zeros((n_t, n_t));
    for (&b, &y) in bias_labels.iter().zip(predictions) {
        if b >= n_t || y >= n_t {
            return Err(Error::param(format!("pair ({b}, {y}) out of range for {n_t} classes")));
        }
        counts[[b, y]] += 1.0;
    }
    let n = bias_labels.len() as f64;
    counts.mapv_inplace(|c| c / n);
    // renormalize so rounding never trips the sum check
    let total = counts.sum();
    counts.mapv_inplace(|c| c / total);
    JointBY::new(counts)
}

/// Biasness estimate and the quantities derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasnessReport {
    pub rho: f64,
    pub phi_global: f64,
    pub nmi_by: f64,
    pub nmi_perfect: f64,
    pub phi_cells: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn total_variation_from_uniform(p: &[f64]) -> f64 {
    let u = 1.0 / p.len() as f64;
    0.5 * p.iter().map(|x| (x - u).abs()).sum::<f64>()
}

/// Inverts the closed-form `P(B, Y)` cell by cell after clipping each measured
/// probability into the range the model can produce, then averages.
pub fn estimate_phi(joint: &JointBY, rho: f64, eps: f64) -> Result<BiasnessReport> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::param(format!("biasness estimation needs rho in (0, 1), got {rho}")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::param(format!("eps must be in [0, 1], got {eps}")));
    }
    let n_t = joint.n_t();
    if n_t < 2 {
        return Err(Error::param("biasness estimation needs at least 2 classes"));
    }
    let n = n_t as f64;
    // Windows of probabilities reachable for phi in [0, 1]; at eps = 0 they
    // are [rho / N, 1 / N] and [0, (1 - rho) / (N (N - 1))].
    let diag_lo = rho * (1.0 - eps) / n;
    let diag_hi = diag_lo + (1.0 - rho) / n;
    let off_lo = rho * eps / (n * (n - 1.0));
    let off_hi = off_lo + (1.0 - rho) / (n * (n - 1.0));
    let mut cells = vec![vec![0.0; n_t]; n_t];
    let mut sum = 0.0;
    for (b, row) in cells.iter_mut().enumerate() {
        for (y, cell) in row.iter_mut().enumerate() {
            let p = joint.get(b, y);
            let phi = if b == y {
                let p = p.clamp(diag_lo, diag_hi);
                p * n / (1.0 - rho) - rho * (1.0 - eps) / (1.0 - rho)
            } else {
                let p = p.clamp(off_lo, off_hi);
                1.0 - p * n * (n - 1.0) / (1.0 - rho) + eps * rho / (1.0 - rho)
            };
            *cell = phi.clamp(0.0, 1.0);
            sum += *cell;
        }
    }
    let phi_global = sum / (n * n);

    let mut warnings = Vec::new();
    let (pb, py) = joint.marginals();
    for (name, m) in [("bias", &pb), ("prediction", &py)] {
        let tv = total_variation_from_uniform(m);
        if tv > MARGINAL_TV_WARNING {
            let msg = format!("{name} marginal is {tv:.3} from uniform in total variation");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(BiasnessReport {
        rho,
        phi_global,
        nmi_by: nmi_closed(rho, phi_global, eps, n_t),
        nmi_perfect: nmi_perfect(rho, n_t)?,
        phi_cells: cells,
        warnings,
    })
}

/// One point of a theoretical curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rho: f64,
    pub phi: f64,
    pub nmi: f64,
}

/// `nmi_perfect` over a grid of rho values, reported with `phi = 0`.
pub fn perfect_curve(rho_grid: &[f64], n_t: usize) -> Result<Vec<CurvePoint>> {
    rho_grid
        .iter()
        .map(|&rho| {
            Ok(CurvePoint {
                rho,
                phi: 0.0,
                nmi: nmi_perfect(rho, n_t)?,
            })
        })
        .collect()
}

/// `nmi_by` with `eps = 0` over the product of the two grids.
pub fn level_curves(rho_grid: &[f64], phi_grid: &[f64], n_t: usize) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::with_capacity(rho_grid.len() * phi_grid.len());
    for &rho in rho_grid {
        for &phi in phi_grid {
            let nmi = nmi_by(&TheoryParams::new(rho, phi, 0.0, n_t)?)?;
            out.push(CurvePoint { rho, phi, nmi });
        }
    }
    Ok(out)
}

/// Writes `rho,phi,nmi` rows.
pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Conditional-entropy oracle: B | Y is `rho` on the diagonal and spread
    /// evenly elsewhere, Y uniform.
    fn perfect_by_summation(rho: f64, n_t: usize) -> f64 {
        let n = n_t as f64;
        let mut h_cond = 0.0;
        for y in 0..n_t {
            for b in 0..n_t {
                let p = if b == y { rho } else { (1.0 - rho) / (n - 1.0) };
                if p > 0.0 {
                    h_cond -= p.ln() * p / n;
                }
            }
        }
        1.0 - h_cond / n.ln()
    }

    /// Generic `2 I / (H(B) + H(Y))` from any table.
    fn nmi_by_summation(table: &Array2<f64>) -> f64 {
        let n = table.nrows();
        let pb: Vec<f64> = (0..n).map(|b| table.row(b).sum()).collect();
        let py: Vec<f64> = (0..n).map(|y| table.column(y).sum()).collect();
        let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
        let mut mi = 0.0;
        for b in 0..n {
            for y in 0..n {
                let p = table[[b, y]];
                if p > 0.0 {
                    mi += p * (p / (pb[b] * py[y])).ln();
                }
            }
        }
        2.0 * mi / (h(&pb) + h(&py))
    }

    fn sum_over_t(joint: &Array3<f64>) -> Array2<f64> {
        let n = joint.dim().0;
        Array2::from_shape_fn((n, n), |(b, y)| (0..n).map(|t| joint[[t, b, y]]).sum())
    }

    #[test]
    fn nmi_perfect_endpoints() {
        assert!(nmi_perfect(0.1, 10).unwrap().abs() < 1e-12);
        assert!((nmi_perfect(1.0, 10).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmi_perfect(0.0, 10).is_err());
        assert!(nmi_perfect(-0.5, 10).is_err());
    }

    #[test]
    fn nmi_perfect_matches_entropy_summation() {
        for rho in [0.05, 0.2, 0.5, 0.9, 0.99, 0.999] {
            for n_t in [2, 3, 10] {
                let a = nmi_perfect(rho, n_t).unwrap();
                let b = perfect_by_summation(rho, n_t).clamp(0.0, 1.0);
                assert!((a - b).abs() < 1e-12, "rho {rho} n {n_t}: {a} vs {b}");
            }
        }
        let v = nmi_perfect(0.999, 10).unwrap();
        assert!((v - 0.9957).abs() < 1e-3, "{v}");
    }

    #[test]
    fn joint_entries_read_off_the_cases() {
        let p = TheoryParams::new(0.9, 0.0, 0.0, 4).unwrap();
        let j = joint_tby(&p).unwrap();
        assert!((j[[1, 1, 1]] - 0.9 / 4.0).abs() < 1e-15);
        assert!((j[[1, 2, 1]] - 0.1 / 3.0 / 4.0).abs() < 1e-15);
        assert_eq!(j[[1, 1, 2]], 0.0);
        assert_eq!(j[[1, 2, 2]], 0.0);
        assert_eq!(j[[0, 1, 2]], 0.0);
    }

    #[test]
    fn joint_needs_three_classes() {
        assert!(TheoryParams::new(0.9, 0.5, 0.0, 2).is_err());
        let p = TheoryParams {
            rho: 0.9,
            phi: 0.5,
            eps: 0.0,
            n_t: 2,
        };
        assert!(joint_tby(&p).is_err());
        assert!(marginal_by(&p).is_err());
    }

    #[test]
    fn marginal_special_cases() {
        let m = marginal_by(&TheoryParams::new(0.7, 1.0, 0.0, 5).unwrap()).unwrap();
        assert!((m.get(2, 2) - 0.2).abs() < 1e-15);
        assert_eq!(m.get(1, 2), 0.0);
        let m = marginal_by(&TheoryParams::new(0.1, 0.0, 0.0, 10).unwrap()).unwrap();
        for v in m.table() {
            assert!((v - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn nmi_endpoints() {
        for rho in [0.5, 0.9, 0.99, 0.999] {
            let a = nmi_by(&TheoryParams::new(rho, 0.0, 0.0, 10).unwrap()).unwrap();
            assert!((a - nmi_perfect(rho, 10).unwrap()).abs() < 1e-10);
            let b = nmi_by(&TheoryParams::new(rho, 1.0, 0.0, 10).unwrap()).unwrap();
            assert!((b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nmi_nondecreasing_in_phi() {
        for rho in [0.9, 0.99] {
            let mut last = -1.0;
            for i in 0..=20 {
                let v = nmi_by(&TheoryParams::new(rho, i as f64 * 0.05, 0.0, 10).unwrap()).unwrap();
                assert!(v >= last - 1e-15);
                last = v;
            }
        }
    }

    #[test]
    fn empirical_joint_cases() {
        let j = empirical_joint(&[0, 0, 0], &[0, 0, 0], 3).unwrap();
        assert_eq!(j.get(0, 0), 1.0);
        assert_eq!(j.table().sum(), 1.0);
        let b: Vec<usize> = (0..16).map(|i| i / 4).collect();
        let y: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let j = empirical_joint(&b, &y, 4).unwrap();
        assert!(j.table().iter().all(|&v| v == 1.0 / 16.0));
        assert!(empirical_joint(&[], &[], 4).is_err());
        assert!(empirical_joint(&[0], &[4], 4).is_err());
        assert!(empirical_joint(&[0, 1], &[0], 4).is_err());
    }

    fn sample_pairs(table: &Array2<f64>, n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = table.nrows();
        let flat: Vec<f64> = table.iter().copied().collect();
        let mut b = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut r = rng.gen::<f64>();
            let mut idx = flat.len() - 1;
            for (i, &p) in flat.iter().enumerate() {
                if r < p {
                    idx = i;
                    break;
                }
                r -= p;
            }
            b.push(idx / k);
            y.push(idx % k);
        }
        (b, y)
    }

    #[test]
    fn empirical_joint_converges_to_marginal() {
        let m = marginal_by(&TheoryParams::new(0.9, 0.5, 0.0, 5).unwrap()).unwrap();
        let mut errs = Vec::new();
        for n in [1_000, 100_000] {
            let (b, y) = sample_pairs(m.table(), n, 3);
            let e = empirical_joint(&b, &y, 5).unwrap();
            let err = (e.table() - m.table()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(err < 5.0 * (0.25 / n as f64).sqrt(), "n {n}: {err}");
            errs.push(err);
        }
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn estimate_phi_inverts_marginal() {
        let m = marginal_by(&TheoryParams::new(0.99, 0.5, 0.0, 10).unwrap()).unwrap();
        let r = estimate_phi(&m, 0.99, 0.0).unwrap();
        assert!((r.phi_global - 0.5).abs() < 1e-10);
        assert!(r.warnings.is_empty());
        let mean: f64 = r.phi_cells.iter().flatten().sum::<f64>() / 100.0;
        assert!((mean - r.phi_global).abs() < 1e-15);
        assert!(estimate_phi(&m, 1.0, 0.0).is_err());
    }

    #[test]
    fn estimate_phi_on_sampled_joint() {
        // Monte Carlo at a rho where sampling noise is small next to the
        // clipping windows.
        let m = marginal_by(&TheoryParams::new(0.9, 0.5, 0.0, 10).unwrap()).unwrap();
        let (b, y) = sample_pairs(m.table(), 100_000, 4);
        let r = estimate_phi(&empirical_joint(&b, &y, 10).unwrap(), 0.9, 0.0).unwrap();
        assert!((r.phi_global - 0.5).abs() < 0.05, "{}", r.phi_global);
    }

    #[test]
    fn estimate_phi_at_high_rho_from_samples() {
        let m = marginal_by(&TheoryParams::new(0.999, 0.8, 0.0, 10).unwrap()).unwrap();
        let (b, y) = sample_pairs(m.table(), 100_000, 5);
        let r = estimate_phi(&empirical_joint(&b, &y, 10).unwrap(), 0.999, 0.0).unwrap();
        assert!((r.phi_global - 0.8).abs() < 0.05, "{}", r.phi_global);
    }

    #[test]
    fn skewed_marginals_warn() {
        let b = vec![0; 50];
        let y = vec![0; 50];
        let r = estimate_phi(&empirical_joint(&b, &y, 4).unwrap(), 0.9, 0.0).unwrap();
        assert_eq!(r.warnings.len(), 2);
        assert!((0.0..=1.0).contains(&r.phi_global));
    }

    #[test]
    fn report_json_fields() {
        let m = marginal_by(&TheoryParams::new(0.9, 0.25, 0.0, 3).unwrap()).unwrap();
        let r = estimate_phi(&m, 0.9, 0.0).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["nmi_by", "nmi_perfect", "phi_cells", "phi_global", "rho", "warnings"]);
    }

    #[test]
    fn curves() {
        let c = perfect_curve(&[0.1, 0.999], 10).unwrap();
        assert!(c[0].nmi.abs() < 1e-12);
        let l = level_curves(&[0.5, 0.9], &[0.0, 0.5], 10).unwrap();
        assert_eq!(l.len(), 4);
        assert!((l[0].nmi - nmi_perfect(0.5, 10).unwrap()).abs() < 1e-10);
        let dir = std::env::temp_dir().join(format!("uend-curve-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.csv");
        write_curve_csv(&path, &c).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("rho,phi,nmi\n0.1,0.0,"));
        std::fs::remove_dir_all(&dir).ok();
    }

    fn params() -> impl Strategy<Value = TheoryParams> {
        (0.01f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 3usize..12).prop_map(|(rho, phi, eps, n_t)| TheoryParams {
            rho,
            phi,
            eps,
            n_t,
        })
    }

    proptest! {
        #[test]
        fn joint_is_normalized(p in params()) {
            let j = joint_tby(&p).unwrap();
            prop_assert!(j.iter().all(|&v| v >= 0.0));
            prop_assert!((j.sum() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn marginal_is_sum_over_targets(p in params()) {
            let summed = sum_over_t(&joint_tby(&p).unwrap());
            let m = marginal_by(&p).unwrap();
            for (a, b) in summed.iter().zip(m.table()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn nmi_matches_entropy_summation(p in params()) {
            let m = marginal_by(&p).unwrap();
            let oracle = nmi_by_summation(m.table()).clamp(0.0, 1.0);
            prop_assert!((nmi_by(&p).unwrap() - oracle).abs() < 1e-10);
        }

        #[test]
        fn estimated_phi_is_in_range(cells in proptest::collection::vec(0.0f64..1.0, 16), rho in 0.01f64..0.999) {
            let total: f64 = cells.iter().sum::<f64>() + 1e-9;
            let t = Array2::from_shape_fn((4, 4), |(b, y)| (cells[b * 4 + y] + 1e-9 / 16.0) / total);
            let t = &t / t.sum();
            let r = estimate_phi(&JointBY::new(t).unwrap(), rho, 0.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.phi_global));
            prop_assert!(r.phi_cells.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn phi_roundtrip_grid() {
        for rho in [0.9, 0.99, 0.999] {
            for phi in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let m = marginal_by(&TheoryParams::new(rho, phi, 0.0, 10).unwrap()).unwrap();
                let r = estimate_phi(&m, rho, 0.0).unwrap();
                assert!((r.phi_global - phi).abs() < 1e-10, "rho {rho} phi {phi}: {}", r.phi_global);
            }
        }
    }

    #[test]
    fn phi_roundtrip_with_eps() {
        let m = marginal_by(&TheoryParams::new(0.9, 0.4, 0.05, 6).unwrap()).unwrap();
        let r = estimate_phi(&m, 0.9, 0.05).unwrap();
        assert!((r.phi_global - 0.4).abs() < 1e-10, "{}", r.phi_global);
    }
}
