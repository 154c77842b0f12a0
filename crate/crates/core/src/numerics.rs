//! Small feed-forward networks with exact reverse-mode gradients.
//!
//! Networks are ReLU multilayer perceptrons with an identity output layer.
//! Everything here is batched over rows of an `Array2<f64>`: a forward pass
//! keeps the per-layer inputs so that [`Network::backward`] can propagate a
//! gradient with respect to the output logits back to every parameter.
//!
//! On top of that sit the handful of objectives the learners need: softmax
//! cross-entropy, focal loss, the policy score function, and squared error,
//! plus an Adam optimizer.

use crate::feedback::Feedback;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clamped to this floor before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("layer dimensions must list at least two positive sizes, got {0:?}")]
    InvalidLayout(Vec<usize>),
    #[error("input dimension mismatch: network expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class index {index} out of range for {classes} outputs")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("batch length mismatch: {rows} rows but {targets} targets")]
    BatchMismatch { rows: usize, targets: usize },
    #[error("gradient shapes do not match the network")]
    ShapeMismatch,
    #[error("non-finite {tensor} gradient in layer {layer}")]
    NonFiniteGradient { layer: usize, tensor: &'static str },
}

/// Weight matrix (`out x in`) and bias vector of one affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn zeros_like(other: &Self) -> Self {
        Self {
            weights: Array2::zeros(other.weights.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.weights.shape() == other.weights.shape() && self.bias.len() == other.bias.len()
    }
}

/// A ReLU MLP: hidden layers use ReLU, the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerParams>,
}

/// Activations recorded during a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `inputs[i]` is the input fed to layer `i`.
    inputs: Vec<Array2<f64>>,
    /// Raw outputs of the final layer, one row per example.
    pub output: Array2<f64>,
}

fn validate_dims(layer_dims: &[usize]) -> Result<(), NumericsError> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(NumericsError::InvalidLayout(layer_dims.to_vec()));
    }
    Ok(())
}

impl Network {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], rng: &mut R) -> Result<Self, NumericsError> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((fan_out, fan_in), || rng.gen_range(-limit..=limit));
                LayerParams {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self, NumericsError> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| LayerParams::zeros(w[0], w[1]))
            .collect();
        Ok(Self { layers })
    }

    /// Rebuilds a network from explicit layers, checking shape consistency.
    pub fn from_layers(layers: Vec<LayerParams>) -> Result<Self, NumericsError> {
        if layers.is_empty() {
            return Err(NumericsError::InvalidLayout(vec![]));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (out, inp) = layer.weights.dim();
            if out == 0 || inp == 0 || layer.bias.len() != out {
                return Err(NumericsError::ShapeMismatch);
            }
            if i > 0 && layers[i - 1].weights.nrows() != inp {
                return Err(NumericsError::ShapeMismatch);
            }
        }
        Ok(Self { layers })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, got: usize) -> Result<(), NumericsError> {
        let expected = self.input_dim();
        if got != expected {
            return Err(NumericsError::DimensionMismatch { expected, got });
        }
        Ok(())
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardPass, NumericsError> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        Ok(ForwardPass {
            inputs,
            output: current,
        })
    }

    /// Backpropagates `output_grad` (d objective / d output, one row per
    /// example) through a recorded forward pass, summing over rows.
    pub fn backward(&self, pass: &ForwardPass, output_grad: ArrayView2<'_, f64>) -> GradientSet {
        let mut grads: Vec<LayerParams> = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            let input = &pass.inputs[i];
            let weights = delta.t().dot(input);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut next = delta.dot(&self.layers[i].weights);
                Zip::from(&mut next).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
            grads.push(LayerParams { weights, bias });
        }
        grads.reverse();
        GradientSet { layers: grads }
    }

    /// Raw output vector for a single input.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        self.check_input(x.len())?;
        let mut current = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&current);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            current = z;
        }
        Ok(current.to_vec())
    }

    /// Softmax over the output logits.
    pub fn forward_probs(&self, x: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let mut z = self.logits(x)?;
        softmax_in_place(&mut z);
        Ok(z)
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.as_standard_layout().into_owned();
    for mut row in probs.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
    }
    probs
}

/// One gradient tensor pair per layer of the source network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerParams>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn is_congruent_with(&self, net: &Network) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, p)| g.same_shape(p))
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, factor: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(factor, &b.weights);
            a.bias.scaled_add(factor, &b.bias);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Flattened parameters in layer order, weights (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn check_finite(&self) -> Result<(), NumericsError> {
        for (layer, l) in self.layers.iter().enumerate() {
            if !l.weights.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFiniteGradient { layer, tensor: "weight" });
            }
            if !l.bias.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFiniteGradient { layer, tensor: "bias" });
            }
        }
        Ok(())
    }
}

/// Per-class weights for focal loss, indexed by feedback class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub negative: f64,
    pub positive: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            negative: 1.0,
            positive: 1.0,
        }
    }

    /// `alpha(c) = 1 - share(c)`, rescaled so the larger weight is 1.
    pub fn from_label_counts(negatives: usize, positives: usize) -> Self {
        let total = (negatives + positives) as f64;
        if total == 0.0 || negatives == 0 || positives == 0 {
            return Self::uniform();
        }
        let neg = 1.0 - negatives as f64 / total;
        let pos = 1.0 - positives as f64 / total;
        let max = neg.max(pos);
        Self {
            negative: neg / max,
            positive: pos / max,
        }
    }

    pub fn weight(&self, class: Feedback) -> f64 {
        match class {
            Feedback::Negative => self.negative,
            Feedback::Positive => self.positive,
        }
    }
}

/// Objective used to fit the feedback classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal { gamma: f64, alpha: ClassWeights },
}

fn label_prob(probs: &[f64], label: Feedback) -> f64 {
    probs[label.class_index()]
}

/// `-ln P(label)`, with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy_pointwise(probs: &[f64], label: Feedback) -> f64 {
    let p = label_prob(probs, label);
    if p >= 1.0 {
        return 0.0;
    }
    -(p.max(PROB_FLOOR)).ln()
}

/// `-ln P(label) * alpha(label) * (1 - P(label))^gamma`.
pub fn focal_pointwise(probs: &[f64], label: Feedback, gamma: f64, alpha: &ClassWeights) -> f64 {
    let p = label_prob(probs, label);
    let ce = cross_entropy_pointwise(probs, label);
    if ce == 0.0 {
        return 0.0;
    }
    ce * alpha.weight(label) * (1.0 - p).max(0.0).powf(gamma)
}

pub fn pointwise_loss(probs: &[f64], label: Feedback, kind: &LossKind) -> f64 {
    match kind {
        LossKind::CrossEntropy => cross_entropy_pointwise(probs, label),
        LossKind::Focal { gamma, alpha } => focal_pointwise(probs, label, *gamma, alpha),
    }
}

/// d loss / d logits for one example of a 2-class softmax head.
fn loss_logit_grad(probs: &[f64], label: Feedback, kind: &LossKind) -> [f64; 2] {
    let y = label.class_index();
    // d(-ln p_y)/dz_k = p_k - [k == y]
    let ce_grad = [probs[0] - (y == 0) as u8 as f64, probs[1] - (y == 1) as u8 as f64];
    match kind {
        LossKind::CrossEntropy => ce_grad,
        LossKind::Focal { gamma, alpha } => {
            let p = probs[y];
            if p <= PROB_FLOOR {
                // Log is clamped: the loss is locally constant in p.
                return [0.0, 0.0];
            }
            let q = (1.0 - p).max(0.0);
            let ln_p = p.ln();
            // d/dp [-a q^g ln p] = -a (q^g / p - g q^(g-1) ln p); chain with dp/dz = p (e_y - probs)
            let dq = if q > 0.0 { gamma * p * q.powf(gamma - 1.0) * ln_p } else { 0.0 };
            let scale = alpha.weight(label) * (q.powf(*gamma) - dq);
            [scale * ce_grad[0], scale * ce_grad[1]]
        }
    }
}

fn check_labels(net: &Network, rows: usize, targets: usize) -> Result<(), NumericsError> {
    if rows != targets {
        return Err(NumericsError::BatchMismatch { rows, targets });
    }
    if net.output_dim() != 2 {
        return Err(NumericsError::ClassOutOfRange {
            index: 1,
            classes: net.output_dim(),
        });
    }
    Ok(())
}

/// Cross-entropy of every row under a 2-class network.
pub fn batch_cross_entropy(
    net: &Network,
    x: ArrayView2<'_, f64>,
    labels: &[Feedback],
) -> Result<Vec<f64>, NumericsError> {
    check_labels(net, x.nrows(), labels.len())?;
    let probs = softmax_rows(&net.forward_batch(x)?.output);
    Ok(probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &label)| cross_entropy_pointwise(row.as_slice().unwrap(), label))
        .collect())
}

/// Mean classification loss over the batch and its parameter gradient.
pub fn classification_loss_and_grad(
    net: &Network,
    x: ArrayView2<'_, f64>,
    labels: &[Feedback],
    kind: &LossKind,
) -> Result<(f64, GradientSet), NumericsError> {
    check_labels(net, x.nrows(), labels.len())?;
    let n = labels.len().max(1) as f64;
    let pass = net.forward_batch(x)?;
    let probs = softmax_rows(&pass.output);
    let mut dz = Array2::zeros(probs.raw_dim());
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = probs.row(i);
        let p = row.as_slice().unwrap();
        total += pointwise_loss(p, label, kind);
        let g = loss_logit_grad(p, label, kind);
        dz[[i, 0]] = g[0] / n;
        dz[[i, 1]] = g[1] / n;
    }
    Ok((total / n, net.backward(&pass, dz.view())))
}

/// `sum_i weights[i] * grad log pi(actions[i] | x_i)` for a softmax policy.
pub fn weighted_log_prob_grad(
    net: &Network,
    x: ArrayView2<'_, f64>,
    actions: &[usize],
    weights: &[f64],
) -> Result<GradientSet, NumericsError> {
    if x.nrows() != actions.len() || actions.len() != weights.len() {
        return Err(NumericsError::BatchMismatch {
            rows: x.nrows(),
            targets: actions.len(),
        });
    }
    let classes = net.output_dim();
    if let Some(&bad) = actions.iter().find(|&&a| a >= classes) {
        return Err(NumericsError::ClassOutOfRange { index: bad, classes });
    }
    let pass = net.forward_batch(x)?;
    let probs = softmax_rows(&pass.output);
    // d log pi(a) / dz = e_a - pi
    let mut dz = probs.mapv(|p| -p);
    for (i, (&a, &w)) in actions.iter().zip(weights).enumerate() {
        dz[[i, a]] += 1.0;
        dz.row_mut(i).mapv_inplace(|v| v * w);
    }
    Ok(net.backward(&pass, dz.view()))
}

/// `grad_theta log pi_theta(action | x)`.
pub fn grad_log_prob(net: &Network, x: &[f64], action: usize) -> Result<GradientSet, NumericsError> {
    let row = ArrayView2::from_shape((1, x.len()), x).expect("single row view");
    weighted_log_prob_grad(net, row, &[action], &[1.0])
}

/// Mean squared error of a scalar-output network and its gradient.
pub fn squared_error_loss_and_grad(
    net: &Network,
    x: ArrayView2<'_, f64>,
    targets: &[f64],
) -> Result<(f64, GradientSet), NumericsError> {
    if x.nrows() != targets.len() {
        return Err(NumericsError::BatchMismatch {
            rows: x.nrows(),
            targets: targets.len(),
        });
    }
    if net.output_dim() != 1 {
        return Err(NumericsError::ClassOutOfRange {
            index: 0,
            classes: net.output_dim(),
        });
    }
    let n = targets.len().max(1) as f64;
    let pass = net.forward_batch(x)?;
    let mut dz = Array2::zeros((targets.len(), 1));
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let err = pass.output[[i, 0]] - t;
        total += err * err;
        dz[[i, 0]] = 2.0 * err / n;
    }
    Ok((total / n, net.backward(&pass, dz.view())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

/// Adam moment estimates for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    first: Vec<LayerParams>,
    second: Vec<LayerParams>,
}

impl Adam {
    pub fn new(net: &Network, learning_rate: f64) -> Self {
        let zeros: Vec<_> = net.layers.iter().map(LayerParams::zeros_like).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one Adam update. Non-finite gradients are rejected before any
    /// parameter or moment is touched.
    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &GradientSet,
        direction: Direction,
    ) -> Result<(), NumericsError> {
        if !grads.is_congruent_with(net) || self.first.len() != net.layers.len() {
            return Err(NumericsError::ShapeMismatch);
        }
        grads.check_finite()?;
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let step_size = self.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let sign = match direction {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        };
        let eps_hat = eps * (1.0 - b2.powi(t)).sqrt();
        let update = |param: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *param += sign * step_size * *m / (v.sqrt() + eps_hat);
        };
        for (((p, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(&mut p.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}
