use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::Identity => x.clone(),
        }
    }
}

/// Fully connected layer `y = act(x W + b)`; `weights` is `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DenseRecord", try_from = "DenseRecord")]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseRecord {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    /// Row-major `inputs x outputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Dense> for DenseRecord {
    fn from(d: Dense) -> Self {
        let (inputs, outputs) = d.weights.dim();
        DenseRecord {
            inputs,
            outputs,
            activation: d.activation,
            weights: d.weights.iter().copied().collect(),
            bias: d.bias.to_vec(),
        }
    }
}

impl TryFrom<DenseRecord> for Dense {
    type Error = String;

    fn try_from(r: DenseRecord) -> std::result::Result<Self, String> {
        if r.bias.len() != r.outputs {
            return Err(format!("bias length {} != outputs {}", r.bias.len(), r.outputs));
        }
        let weights = Array2::from_shape_vec((r.inputs, r.outputs), r.weights).map_err(|e| e.to_string())?;
        Ok(Dense {
            weights,
            bias: Array1::from(r.bias),
            activation: r.activation,
        })
    }
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    /// He-normal weights for ReLU layers, LeCun-normal otherwise; zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Identity => 1.0,
        };
        let std = (gain / inputs as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((inputs, outputs), || std * rng.sample::<f64, _>(StandardNormal));
        Dense {
            weights,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub n_classes: usize,
    pub embedding_activation: Activation,
}

impl Architecture {
    /// Two ReLU hidden layers of width 64 and a 32-dimensional embedding.
    pub fn desk_default(input_dim: usize, n_classes: usize) -> Self {
        Architecture {
            input_dim,
            hidden: vec![64, 64],
            embedding_dim: 32,
            n_classes,
            embedding_activation: Activation::Identity,
        }
    }
}

/// Encoder `f` (stack of dense layers ending at the embedding) and linear
/// classifier `g` applied to the normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub encoder: Vec<Dense>,
    pub classifier: Dense,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        if arch.input_dim == 0 || arch.embedding_dim == 0 || arch.n_classes < 2 {
            return Err(Error::param(format!("degenerate architecture {arch:?}")));
        }
        let mut encoder = Vec::with_capacity(arch.hidden.len() + 1);
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            if h == 0 {
                return Err(Error::param("hidden layer of width 0"));
            }
            encoder.push(Dense::init(width, h, Activation::Relu, rng));
            width = h;
        }
        encoder.push(Dense::init(width, arch.embedding_dim, arch.embedding_activation, rng));
        let classifier = Dense::init(arch.embedding_dim, arch.n_classes, Activation::Identity, rng);
        let params = ModelParams { encoder, classifier };
        params.check()?;
        Ok(params)
    }

    /// Checks that consecutive layer shapes compose.
    pub fn check(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::param("encoder has no layers"));
        }
        for (i, pair) in self.encoder.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::param(format!(
                    "encoder layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        if self.embedding_dim() != self.classifier.inputs() {
            return Err(Error::param(format!(
                "embedding dimension {} does not match classifier input {}",
                self.embedding_dim(),
                self.classifier.inputs()
            )));
        }
        for layer in self.layers() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::param("bias length does not match layer outputs"));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].inputs()
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.last().map_or(0, Dense::outputs)
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.outputs()
    }

    /// All layers, encoder first.
    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(std::iter::once(&self.classifier))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder.iter_mut().chain(std::iter::once(&mut self.classifier))
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            encoder: self
                .encoder
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs(), l.activation))
                .collect(),
            classifier: Dense::zeros(self.classifier.inputs(), self.classifier.outputs(), Activation::Identity),
        }
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.encoder.len() == other.encoder.len()
            && self
                .layers()
                .zip(other.layers())
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    /// Every scalar parameter, layer by layer (weights then bias).
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn num_values(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Array2<f64>,
    /// Pre-activation of each encoder layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activation of each encoder layer; the last one is the raw embedding.
    pub post: Vec<Array2<f64>>,
    /// Euclidean norm of each raw embedding row.
    pub norms: Array1<f64>,
    /// Rows whose raw embedding was exactly zero (normalized to zero).
    pub zero_rows: Vec<bool>,
    /// Normalized embeddings, unit rows except where `zero_rows` is set.
    pub z: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    /// Normalized embeddings `z`, the representation the regularizer and
    /// the bias predictor work on.
    pub fn embeddings(&self) -> &Array2<f64> {
        &self.z
    }

    /// Raw encoder output `e` before normalization.
    pub fn raw_embeddings(&self) -> &Array2<f64> {
        self.post.last().expect("encoder has at least one layer")
    }

    pub fn has_zero_embedding(&self) -> bool {
        self.zero_rows.iter().any(|&z| z)
    }

    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.logits)
    }
}

fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Runs `g(γ(f(x)))` on a batch, with `γ(e) = e / ‖e‖` and `γ(0) = 0`.
pub fn forward(params: &ModelParams, batch: ArrayView2<f64>) -> Result<ForwardCache> {
    if batch.ncols() != params.input_dim() {
        return Err(Error::param(format!(
            "batch has {} columns, encoder expects {}",
            batch.ncols(),
            params.input_dim()
        )));
    }
    let inputs = batch.to_owned();
    let mut pre = Vec::with_capacity(params.encoder.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let x = post.last().unwrap_or(&inputs);
        let a = x.dot(&layer.weights) + &layer.bias;
        post.push(layer.activation.apply(&a));
        pre.push(a);
    }
    let e = post.last().expect("non-empty encoder");
    let norms = e.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let zero_rows: Vec<bool> = norms.iter().map(|&n| n == 0.0).collect();
    let mut z = e.clone();
    for (mut row, &n) in z.rows_mut().into_iter().zip(norms.iter()) {
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    let logits = z.dot(&params.classifier.weights) + &params.classifier.bias;
    let probs = softmax_rows(&logits);
    Ok(ForwardCache {
        inputs,
        pre,
        post,
        norms,
        zero_rows,
        z,
        logits,
        probs,
    })
}

/// Mean of `-ln p(target)` over the batch, with probabilities floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Array2<f64>, targets: &[usize]) -> Result<f64> {
    if probs.nrows() == 0 {
        return Err(Error::param("cross-entropy of an empty batch"));
    }
    if probs.nrows() != targets.len() {
        return Err(Error::param(format!(
            "{} probability rows for {} targets",
            probs.nrows(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (i, (row, &t)) in probs.rows().into_iter().zip(targets).enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("probability row {i} sums to {sum}")));
        }
        if t >= row.len() {
            return Err(Error::param(format!("target {t} out of range for {} classes", row.len())));
        }
        total -= row[t].max(PROB_FLOOR).ln();
    }
    Ok(total / probs.nrows() as f64)
}

/// Gradients of `mean CE + R` where `dR/dz` is supplied as `end_gradient`.
///
/// The normalization Jacobian `(I - z zᵀ) / ‖e‖` maps the z-gradient back to
/// the raw embedding; zero embeddings pass no gradient.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    targets: &[usize],
    end_gradient: Option<&Array2<f64>>,
) -> Result<ModelParams> {
    let m = cache.z.nrows();
    if targets.len() != m {
        return Err(Error::param(format!("{} targets for a batch of {m}", targets.len())));
    }
    if let Some(g) = end_gradient {
        if g.dim() != cache.z.dim() {
            return Err(Error::param(format!(
                "end gradient has shape {:?}, embeddings have {:?}",
                g.dim(),
                cache.z.dim()
            )));
        }
    }
    let mut grads = params.zeros_like();

    let mut dlogits = cache.probs.clone();
    for (i, &t) in targets.iter().enumerate() {
        if t >= dlogits.ncols() {
            return Err(Error::param(format!("target {t} out of range")));
        }
        dlogits[[i, t]] -= 1.0;
    }
    dlogits /= m as f64;
    grads.classifier.weights = cache.z.t().dot(&dlogits);
    grads.classifier.bias = dlogits.sum_axis(Axis(0));

    let mut dz = dlogits.dot(&params.classifier.weights.t());
    if let Some(g) = end_gradient {
        dz += g;
    }

    // through γ
    let mut delta = dz;
    for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
        if cache.zero_rows[i] {
            row.fill(0.0);
            continue;
        }
        let z = cache.z.row(i);
        let proj = z.dot(&row);
        let n = cache.norms[i];
        row.zip_mut_with(&z, |d, &zj| *d = (*d - proj * zj) / n);
    }

    for l in (0..params.encoder.len()).rev() {
        let layer = &params.encoder[l];
        if layer.activation == Activation::Relu {
            delta.zip_mut_with(&cache.pre[l], |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
        }
        let input = if l == 0 { &cache.inputs } else { &cache.post[l - 1] };
        grads.encoder[l].weights = input.t().dot(&delta);
        grads.encoder[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            delta = delta.dot(&layer.weights.t());
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(weights: Array2<f64>, bias: Array1<f64>, classifier: Dense) -> ModelParams {
        ModelParams {
            encoder: vec![Dense {
                weights,
                bias,
                activation: Activation::Identity,
            }],
            classifier,
        }
    }

    #[test]
    fn normalizes_three_four_embedding() {
        let p = single_layer(
            Array2::eye(2),
            Array1::zeros(2),
            Dense::zeros(2, 2, Activation::Identity),
        );
        let c = forward(&p, array![[3.0, 4.0]].view()).unwrap();
        assert!((c.z[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((c.z[[0, 1]] - 0.8).abs() < 1e-15);
        assert!(!c.has_zero_embedding());
    }

    #[test]
    fn zero_embedding_maps_to_zero_and_is_flagged() {
        let p = single_layer(
            Array2::eye(2),
            Array1::zeros(2),
            Dense::zeros(2, 3, Activation::Identity),
        );
        let c = forward(&p, array![[0.0, 0.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!(c.z.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(c.zero_rows, vec![true, false]);
        let g = backward(&p, &c, &[0, 1], Some(&Array2::ones((2, 2)))).unwrap();
        assert!(g.values().all(|v| v.is_finite()));
    }

    #[test]
    fn logits_are_affine_in_normalized_embedding() {
        let classifier = Dense {
            weights: array![[1.0, 2.0, 0.0], [0.5, -1.0, 3.0]],
            bias: array![0.1, 0.2, 0.3],
            activation: Activation::Identity,
        };
        let p = single_layer(Array2::eye(2), Array1::zeros(2), classifier);
        let c = forward(&p, array![[0.6, 0.8]].view()).unwrap();
        let expected = [0.6 + 0.4 + 0.1, 1.2 - 0.8 + 0.2, 2.4 + 0.3];
        for (a, b) in c.logits.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(&Architecture::desk_default(5, 3), &mut rng).unwrap();
        assert!(forward(&p, Array2::zeros((2, 4)).view()).is_err());
        let c = forward(&p, Array2::ones((2, 5)).view()).unwrap();
        assert!(backward(&p, &c, &[0, 1], Some(&Array2::zeros((2, 7)))).is_err());
        assert!(backward(&p, &c, &[0], None).is_err());
    }

    #[test]
    fn unit_rows_after_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(&Architecture::desk_default(8, 4), &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((50, 8), || rng.sample::<f64, _>(StandardNormal));
        let c = forward(&p, x.view()).unwrap();
        for (row, zero) in c.z.rows().into_iter().zip(&c.zero_rows) {
            if !zero {
                assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_reference_values() {
        let uniform = Array2::from_elem((3, 10), 0.1);
        let ce = cross_entropy(&uniform, &[0, 4, 9]).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        assert!((ce - 2.302585).abs() < 1e-6);

        let sure = array![[0.0, 1.0, 0.0]];
        assert_eq!(cross_entropy(&sure, &[1]).unwrap(), 0.0);

        let two = array![[0.5, 0.5], [0.2, 0.8]];
        let a = -(0.5f64).ln();
        let b = -(0.8f64).ln();
        assert!((cross_entropy(&two, &[0, 1]).unwrap() - (a + b) / 2.0).abs() < 1e-15);

        // floored, still finite
        assert!(cross_entropy(&sure, &[0]).unwrap().is_finite());
        assert!(cross_entropy(&Array2::zeros((0, 3)), &[]).is_err());
        assert!(cross_entropy(&array![[0.5, 0.6]], &[0]).is_err());
    }

    #[test]
    fn zero_end_gradient_equals_absent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(&Architecture::desk_default(6, 3), &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((7, 6), || rng.sample::<f64, _>(StandardNormal));
        let t = [0, 1, 2, 0, 1, 2, 0];
        let c = forward(&p, x.view()).unwrap();
        let a = backward(&p, &c, &t, None).unwrap();
        let b = backward(&p, &c, &t, Some(&Array2::zeros((7, 32)))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn layer_record_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(&Architecture::desk_default(4, 3), &mut rng).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
