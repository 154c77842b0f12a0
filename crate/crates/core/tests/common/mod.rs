#![allow(dead_code)]

use candere::feedback::Feedback;
use candere::feedback_data::FeedbackTuple;
use candere::environments::Observation;
use candere::numerics::{GradientSet, Network};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_net(dims: &[usize], seed: u64) -> Network {
    let mut net = Network::new(dims, &mut rng(seed)).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for layer in net.layers_mut() {
        layer.bias.mapv_inplace(|_| r.gen_range(-0.5..0.5));
    }
    net
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.gen_range(-2.0..2.0))
}

pub fn param_count(net: &Network) -> usize {
    net.num_params()
}

/// Adds `delta` to the `index`-th parameter in flatten order.
pub fn nudge(net: &mut Network, index: usize, delta: f64) {
    let mut i = index;
    for layer in net.layers_mut() {
        let w = layer.weights.len();
        if i < w {
            let cols = layer.weights.ncols();
            layer.weights[[i / cols, i % cols]] += delta;
            return;
        }
        i -= w;
        let b = layer.bias.len();
        if i < b {
            layer.bias[i] += delta;
            return;
        }
        i -= b;
    }
    panic!("parameter index out of range");
}

/// Central finite differences of `objective` in every parameter.
pub fn numeric_gradient(net: &Network, objective: impl Fn(&Network) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..param_count(net))
        .map(|i| {
            let mut plus = net.clone();
            nudge(&mut plus, i, h);
            let mut minus = net.clone();
            nudge(&mut minus, i, -h);
            (objective(&plus) - objective(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a|| + ||b||, 1e-8)`.
pub fn relative_error(analytic: &GradientSet, numeric: &[f64]) -> f64 {
    let a = analytic.flatten();
    assert_eq!(a.len(), numeric.len());
    let diff: f64 = a.iter().zip(numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-8)
}

pub fn tuple(obs: Vec<f64>, action: usize, observed: Feedback, truth: Feedback) -> FeedbackTuple {
    FeedbackTuple::new(Observation(obs), action, observed, truth)
}

/// A batch whose `seq` values are `0..n`, i.e. oldest first.
pub fn sequenced(mut batch: Vec<FeedbackTuple>) -> Vec<FeedbackTuple> {
    for (i, t) in batch.iter_mut().enumerate() {
        t.seq = i as u64;
    }
    batch
}

pub fn feedback(positive: bool) -> Feedback {
    Feedback::from_bool(positive)
}
