//! Point-based mask refinement: uncertainty-driven point sampling, an MLP
//! point classifier, coarse-to-fine subdivision inference and desk-scale
//! training of the point head.
//!
//! Normalized point coordinates are corner-aligned and shared with the mask
//! resizing convention: `u = 0` maps to column 0, `u = 1` to the last
//! column, and likewise `v` for rows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::loss::{focal_binary, focal_binary_grad, FocalLossParams};
use crate::mask::{normalized_coord, split_coord, BinaryMask, ProbabilityMask};
use crate::{Error, Result};

/// Logits beyond this magnitude saturate the logistic; clamping keeps the
/// output strictly inside (0, 1). exp(-36) is still above the spacing of
/// f64 around 1.
const LOGIT_LIMIT: f64 = 36.0;

/// Multi-channel feature map over a spatial grid.
///
/// Values are stored per channel, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(channels: usize, width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature grid dimensions must be positive, got {channels}x{width}x{height}"
            )));
        }
        if values.len() != channels * width * height {
            return Err(Error::ShapeMismatch(format!(
                "feature grid holds {} values, expected {channels}x{width}x{height} = {}",
                values.len(),
                channels * width * height
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "feature grid values must be finite".into(),
            ));
        }
        Ok(Self {
            channels,
            width,
            height,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[channel * self.width * self.height + row * self.width + col]
    }

    /// Corner-aligned bilinear lookup of all channels at one normalized
    /// point. Sampling exactly at a cell's normalized coordinate returns
    /// that cell's values.
    pub fn sample_point(&self, u: f64, v: f64) -> Vec<f64> {
        let x = normalized_coord(u, self.width);
        let y = normalized_coord(v, self.height);
        let (x0, x1, fx) = split_coord(x, self.width);
        let (y0, y1, fy) = split_coord(y, self.height);
        (0..self.channels)
            .map(|c| {
                let top = self.value(c, y0, x0) * (1.0 - fx) + self.value(c, y0, x1) * fx;
                let bottom = self.value(c, y1, x0) * (1.0 - fx) + self.value(c, y1, x1) * fx;
                top * (1.0 - fy) + bottom * fy
            })
            .collect()
    }

    /// Bilinear interpolation of every point in the set.
    pub fn sample(&self, points: &PointSet) -> Vec<Vec<f64>> {
        points
            .points()
            .iter()
            .map(|&(u, v)| self.sample_point(u, v))
            .collect()
    }
}

/// A list of normalized (u, v) coordinates in the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<(f64, f64)>,
}

impl PointSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points
            .iter()
            .any(|&(u, v)| !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v))
        {
            return Err(Error::InvalidParameter(
                "point coordinates must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Grid cells ranked by uncertainty, most uncertain first.
///
/// Returns `(row, col)` of the `min(n, cells)` cells whose probability is
/// closest to 0.5; ties break on ascending row-major index.
pub(crate) fn uncertain_cells(prob: &ProbabilityMask, n: usize) -> Vec<(usize, usize)> {
    let mut ranked: Vec<(f64, usize)> = prob
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &p)| ((p - 0.5).abs(), idx))
        .collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    ranked
        .into_iter()
        .take(n)
        .map(|(_, idx)| (idx / prob.width(), idx % prob.width()))
        .collect()
}

fn cell_coords(row: usize, col: usize, width: usize, height: usize) -> (f64, f64) {
    let u = if width == 1 {
        0.0
    } else {
        col as f64 / (width - 1) as f64
    };
    let v = if height == 1 {
        0.0
    } else {
        row as f64 / (height - 1) as f64
    };
    (u, v)
}

/// Normalized coordinates of the `min(n, cells)` most uncertain cells,
/// ordered by increasing |p - 0.5|.
pub fn uncertain_points(prob: &ProbabilityMask, n: usize) -> PointSet {
    let points = uncertain_cells(prob, n)
        .into_iter()
        .map(|(row, col)| cell_coords(row, col, prob.width(), prob.height()))
        .collect();
    PointSet { points }
}

/// Anything that can re-classify a single point from its fine-grained
/// feature vector and the current coarse probability.
pub trait PointClassifier {
    fn classify(&self, feature: &[f64], coarse_prob: f64) -> Result<f64>;
}

/// One dense layer: `out_dim x in_dim` weights (row-major) plus biases.
#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl DenseLayer {
    fn apply(&self, input: &[f64], output: &mut Vec<f64>) {
        output.clear();
        for row in 0..self.out_dim {
            let base = row * self.in_dim;
            let mut acc = self.biases[row];
            for (j, &x) in input.iter().enumerate() {
                acc += self.weights[base + j] * x;
            }
            output.push(acc);
        }
    }
}

/// The MLP point classifier: rectified-linear hidden layers and a single
/// output logit squashed through the logistic.
///
/// The input is the point's feature vector with the coarse probability
/// appended, so `in_dim` is always `feature_channels + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointHeadModel {
    in_dim: usize,
    hidden_widths: Vec<usize>,
    layers: Vec<DenseLayer>,
}

impl PointHeadModel {
    /// Uniform Xavier-style initialization, deterministic in `seed`.
    pub fn random(feature_channels: usize, hidden_widths: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(feature_channels, hidden_widths, |fan_in, fan_out, _| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            rng.random_range(-limit..limit)
        })
    }

    /// All-zero parameters; the forward pass then outputs exactly 0.5.
    pub fn zeros(feature_channels: usize, hidden_widths: &[usize]) -> Result<Self> {
        Self::build(
            feature_channels,
            hidden_widths,
            |_fan_in, _fan_out, _idx| 0.0,
        )
    }

    fn build<F>(feature_channels: usize, hidden_widths: &[usize], mut init: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        if feature_channels == 0 {
            return Err(Error::InvalidParameter(
                "point head needs at least one feature channel".into(),
            ));
        }
        if hidden_widths.contains(&0) {
            return Err(Error::InvalidParameter(
                "hidden layer widths must be positive".into(),
            ));
        }
        let in_dim = feature_channels + 1;
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden_widths);
        dims.push(1);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut param_idx = 0usize;
        for window in dims.windows(2) {
            let (fan_in, fan_out) = (window[0], window[1]);
            let weights = (0..fan_in * fan_out)
                .map(|_| {
                    let v = init(fan_in, fan_out, param_idx);
                    param_idx += 1;
                    v
                })
                .collect();
            layers.push(DenseLayer {
                in_dim: fan_in,
                out_dim: fan_out,
                weights,
                biases: vec![0.0; fan_out],
            });
        }
        Ok(Self {
            in_dim,
            hidden_widths: hidden_widths.to_vec(),
            layers,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.hidden_widths
    }

    /// Foreground probability for one point.
    pub fn forward(&self, feature: &[f64], coarse_prob: f64) -> Result<f64> {
        let trace = self.forward_trace(feature, coarse_prob)?;
        Ok(trace.probability)
    }

    fn forward_trace(&self, feature: &[f64], coarse_prob: f64) -> Result<ForwardTrace> {
        if feature.len() + 1 != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "point head expects {} feature channels, got {}",
                self.in_dim - 1,
                feature.len()
            )));
        }
        let mut input: Vec<f64> = Vec::with_capacity(self.in_dim);
        input.extend_from_slice(feature);
        input.push(coarse_prob);

        let mut activations = vec![input];
        let mut scratch = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(activations.last().unwrap(), &mut scratch);
            if l + 1 < self.layers.len() {
                for v in scratch.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(scratch.clone());
        }

        let logit = activations.last().unwrap()[0];
        let clamped = logit.clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
        let probability = 1.0 / (1.0 + (-clamped).exp());
        Ok(ForwardTrace {
            activations,
            logit,
            probability,
        })
    }

    /// Gradients of a scalar loss with respect to every parameter, given
    /// dLoss/dProbability at one point.
    fn backprop(&self, trace: &ForwardTrace, dloss_dp: f64, grads: &mut ModelGradients) {
        let p = trace.probability;
        let mut dlogit = dloss_dp * p * (1.0 - p);
        if trace.logit.abs() >= LOGIT_LIMIT {
            dlogit = 0.0;
        }

        let mut delta = vec![dlogit];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            let grad = &mut grads.layers[l];
            for (row, &d) in delta.iter().enumerate() {
                let base = row * layer.in_dim;
                for (j, &x) in input.iter().enumerate() {
                    grad.weights[base + j] += d * x;
                }
                grad.biases[row] += d;
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &d) in delta.iter().enumerate() {
                let base = row * layer.in_dim;
                for (j, slot) in prev.iter_mut().enumerate() {
                    *slot += d * layer.weights[base + j];
                }
            }
            // ReLU derivative: the stored hidden activation is already
            // rectified, so positive means the unit was active.
            for (j, slot) in prev.iter_mut().enumerate() {
                if trace.activations[l][j] <= 0.0 {
                    *slot = 0.0;
                }
            }
            delta = prev;
        }
    }

    fn apply_update(&mut self, grads: &ModelGradients, scale: f64) {
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, g) in layer.weights.iter_mut().zip(&grad.weights) {
                *w -= scale * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(&grad.biases) {
                *b -= scale * g;
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Read one parameter by flat index (weights then biases, layer by
    /// layer). Useful for finite-difference checks.
    pub fn parameter(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            if idx < layer.weights.len() {
                return layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.biases.len() {
                return layer.biases[idx];
            }
            idx -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_parameter(&mut self, mut idx: usize, value: f64) {
        for layer in &mut self.layers {
            if idx < layer.weights.len() {
                layer.weights[idx] = value;
                return;
            }
            idx -= layer.weights.len();
            if idx < layer.biases.len() {
                layer.biases[idx] = value;
                return;
            }
            idx -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    fn zero_gradients(&self) -> ModelGradients {
        ModelGradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }
}

/// On-disk layer shape: nested weight rows plus a bias vector.
#[derive(serde::Serialize, serde::Deserialize)]
struct LayerRepr {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelRepr {
    in_dim: usize,
    hidden_widths: Vec<usize>,
    layers: Vec<LayerRepr>,
}

impl serde::Serialize for PointHeadModel {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let repr = ModelRepr {
            in_dim: self.in_dim,
            hidden_widths: self.hidden_widths.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRepr {
                    w: l.weights.chunks(l.in_dim).map(|row| row.to_vec()).collect(),
                    b: l.biases.clone(),
                })
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> serde::Deserialize<'de> for PointHeadModel {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = ModelRepr::deserialize(deserializer)?;

        let mut dims = vec![repr.in_dim];
        dims.extend_from_slice(&repr.hidden_widths);
        dims.push(1);
        if repr.in_dim < 2 {
            return Err(D::Error::custom(
                "in_dim must be at least 2 (features + coarse)",
            ));
        }
        if repr.layers.len() != dims.len() - 1 {
            return Err(D::Error::custom(format!(
                "expected {} layers, got {}",
                dims.len() - 1,
                repr.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(repr.layers.len());
        for (l, layer) in repr.layers.into_iter().enumerate() {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            if layer.w.len() != out_dim || layer.b.len() != out_dim {
                return Err(D::Error::custom(format!(
                    "layer {l}: expected {out_dim} rows and biases"
                )));
            }
            let mut weights = Vec::with_capacity(in_dim * out_dim);
            for row in &layer.w {
                if row.len() != in_dim {
                    return Err(D::Error::custom(format!(
                        "layer {l}: expected rows of {in_dim} weights"
                    )));
                }
                weights.extend_from_slice(row);
            }
            if weights.iter().chain(&layer.b).any(|v| !v.is_finite()) {
                return Err(D::Error::custom(format!("layer {l}: non-finite parameter")));
            }
            layers.push(DenseLayer {
                in_dim,
                out_dim,
                weights,
                biases: layer.b,
            });
        }
        Ok(PointHeadModel {
            in_dim: repr.in_dim,
            hidden_widths: repr.hidden_widths,
            layers,
        })
    }
}

impl PointClassifier for PointHeadModel {
    fn classify(&self, feature: &[f64], coarse_prob: f64) -> Result<f64> {
        self.forward(feature, coarse_prob)
    }
}

struct ForwardTrace {
    /// Layer inputs: activations[0] is the network input, activations[l] the
    /// rectified output of layer l-1.
    activations: Vec<Vec<f64>>,
    logit: f64,
    probability: f64,
}

/// Accumulated parameter gradients, shaped like the model.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
struct LayerGradients {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl ModelGradients {
    pub fn parameter(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            if idx < layer.weights.len() {
                return layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.biases.len() {
                return layer.biases[idx];
            }
            idx -= layer.biases.len();
        }
        panic!("gradient index out of range");
    }

    fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w *= factor;
            }
            for b in &mut layer.biases {
                *b *= factor;
            }
        }
    }
}

/// One training point: feature vector, coarse probability, binary target.
pub type TrainingPoint = (Vec<f64>, f64, bool);

/// Mean focal loss of the model over a batch of points.
pub fn point_batch_loss(
    model: &PointHeadModel,
    batch: &[TrainingPoint],
    params: &FocalLossParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty training batch".into()));
    }
    let mut total = 0.0;
    for (feature, coarse, target) in batch {
        let p = model.forward(feature, *coarse)?;
        total += focal_binary(p, *target, params);
    }
    Ok(total / batch.len() as f64)
}

/// Mean focal loss and its analytic parameter gradients over a batch.
pub fn point_batch_gradients(
    model: &PointHeadModel,
    batch: &[TrainingPoint],
    params: &FocalLossParams,
) -> Result<(f64, ModelGradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty training batch".into()));
    }
    let mut grads = model.zero_gradients();
    let mut total = 0.0;
    for (feature, coarse, target) in batch {
        let trace = model.forward_trace(feature, *coarse)?;
        total += focal_binary(trace.probability, *target, params);
        let dloss_dp = focal_binary_grad(trace.probability, *target, params);
        model.backprop(&trace, dloss_dp, &mut grads);
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok((total / batch.len() as f64, grads))
}

/// Subdivision parameters: coarse grid side, number of x2 upsampling steps,
/// points re-classified per step and the binarization threshold used by
/// consumers of the refined map.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdivisionConfig {
    pub coarse_size: usize,
    pub steps: usize,
    pub points_per_step: usize,
    pub threshold: f64,
}

impl Default for SubdivisionConfig {
    fn default() -> Self {
        Self {
            coarse_size: 7,
            steps: 2,
            points_per_step: 196,
            threshold: 0.5,
        }
    }
}

impl SubdivisionConfig {
    /// Side length of the refined output: `coarse_size * 2^steps`.
    pub fn output_size(&self) -> usize {
        self.coarse_size << self.steps
    }
}

/// Coarse-to-fine refinement: repeatedly upsample x2, pick the most
/// uncertain cells and re-classify them with the point head.
pub fn subdivision_refine<M: PointClassifier>(
    model: &M,
    coarse: &ProbabilityMask,
    fine_features: &FeatureGrid,
    cfg: &SubdivisionConfig,
) -> Result<ProbabilityMask> {
    if cfg.coarse_size == 0 || cfg.points_per_step == 0 {
        return Err(Error::InvalidParameter(
            "subdivision needs a positive coarse size and point budget".into(),
        ));
    }
    if coarse.width() != cfg.coarse_size || coarse.height() != cfg.coarse_size {
        return Err(Error::ShapeMismatch(format!(
            "coarse prediction is {}x{}, expected {}x{}",
            coarse.width(),
            coarse.height(),
            cfg.coarse_size,
            cfg.coarse_size
        )));
    }
    let mut current = coarse.clone();
    for _ in 0..cfg.steps {
        current = current.resize(current.width() * 2, current.height() * 2);
        let cells = uncertain_cells(&current, cfg.points_per_step);
        for (row, col) in cells {
            let (u, v) = cell_coords(row, col, current.width(), current.height());
            let feature = fine_features.sample_point(u, v);
            let p = model.classify(&feature, current.get(row, col))?;
            current.set(row, col, p.clamp(0.0, 1.0));
        }
    }
    Ok(current)
}

/// Repeated x2 bilinear upsampling without re-classification; the baseline
/// the refinement is measured against.
pub fn bilinear_chain(coarse: &ProbabilityMask, steps: usize) -> ProbabilityMask {
    let mut current = coarse.clone();
    for _ in 0..steps {
        current = current.resize(current.width() * 2, current.height() * 2);
    }
    current
}

/// One supervised refinement example.
#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub features: FeatureGrid,
    pub coarse: ProbabilityMask,
    pub target: BinaryMask,
}

/// Training hyper-parameters for the point head.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: FocalLossParams,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Uncertain points taken per instance; the same number of uniform
    /// random points is added on top.
    pub points_per_instance: usize,
    pub hidden_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: FocalLossParams::default(),
            learning_rate: 0.2,
            epochs: 100,
            points_per_instance: 196,
            hidden_widths: vec![64, 64, 64],
            seed: 0,
        }
    }
}

/// A trained point head plus its per-epoch mean loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PointHeadModel,
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent of the point head on binary focal loss.
///
/// Each instance contributes its most uncertain coarse cells plus an equal
/// number of uniform random points, re-drawn every epoch from the seeded
/// stream; one instance forms one mini-batch. Deterministic given the seed.
pub fn train_point_head(dataset: &[TrainingInstance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty training dataset".into()));
    }
    if cfg.learning_rate < 0.0 || !cfg.learning_rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be non-negative, got {}",
            cfg.learning_rate
        )));
    }
    if cfg.points_per_instance == 0 {
        return Err(Error::InvalidParameter(
            "points_per_instance must be positive".into(),
        ));
    }
    let channels = dataset[0].features.channels();
    if dataset
        .iter()
        .any(|inst| inst.features.channels() != channels)
    {
        return Err(Error::ShapeMismatch(
            "all training instances must share a feature channel count".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let limit_init = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut model = {
        let mut r = ChaCha8Rng::seed_from_u64(rng.random());
        PointHeadModel::build(channels, &cfg.hidden_widths, |fan_in, fan_out, _| {
            let l = limit_init(fan_in, fan_out);
            r.random_range(-l..l)
        })?
    };

    // Uncertain cells are deterministic per instance; compute them once.
    let fixed_points: Vec<Vec<(f64, f64)>> = dataset
        .iter()
        .map(|inst| {
            uncertain_cells(&inst.coarse, cfg.points_per_instance)
                .into_iter()
                .map(|(row, col)| cell_coords(row, col, inst.coarse.width(), inst.coarse.height()))
                .collect()
        })
        .collect();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch: Vec<TrainingPoint> = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut point_count = 0usize;
        for (inst, fixed) in dataset.iter().zip(&fixed_points) {
            batch.clear();
            for &(u, v) in fixed {
                batch.push(make_point(inst, u, v));
            }
            for _ in 0..fixed.len() {
                let u: f64 = rng.random_range(0.0..=1.0);
                let v: f64 = rng.random_range(0.0..=1.0);
                batch.push(make_point(inst, u, v));
            }
            let (loss, grads) = point_batch_gradients(&model, &batch, &cfg.loss)?;
            loss_sum += loss * batch.len() as f64;
            point_count += batch.len();
            model.apply_update(&grads, cfg.learning_rate);
        }
        let epoch_loss = loss_sum / point_count as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

fn make_point(inst: &TrainingInstance, u: f64, v: f64) -> TrainingPoint {
    let feature = inst.features.sample_point(u, v);
    let coarse = inst.coarse.sample(u, v);
    let target = nearest_bit(&inst.target, u, v);
    (feature, coarse, target)
}

fn nearest_bit(mask: &BinaryMask, u: f64, v: f64) -> bool {
    let col = (normalized_coord(u, mask.width()).round() as usize).min(mask.width() - 1);
    let row = (normalized_coord(v, mask.height()).round() as usize).min(mask.height() - 1);
    mask.get(row, col)
}
