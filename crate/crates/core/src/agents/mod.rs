//! Learners driven purely by feedback: a COACH policy-gradient agent with an
//! eligibility window, and a TAMER agent that regresses a feedback model.

pub mod training;

use crate::feedback_data::FeedbackTuple;
use crate::numerics::{
    squared_error_loss_and_grad, weighted_log_prob_grad, Adam, Direction, GradientSet, Network, NumericsError,
};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

pub use training::{train, Algorithm, RunOutput};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("cannot update on an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    /// Exploratory action selection.
    Train,
    /// Frozen, greedy action selection.
    Eval,
}

/// Anything that picks actions from observations and learns from feedback
/// tuples. Learners never see environment reward.
pub trait FeedbackLearner {
    fn num_actions(&self) -> usize;

    fn act(&self, observation: &[f64], mode: ActMode, rng: &mut dyn rand::RngCore) -> usize;

    /// One learning step on a (filtered) batch, using each tuple's observed
    /// label as the feedback value.
    fn update(&mut self, batch: &[FeedbackTuple]) -> Result<(), AgentError>;
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn observation_matrix(batch: &[FeedbackTuple], dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((batch.len(), dim));
    for (mut row, t) in x.rows_mut().into_iter().zip(batch) {
        row.iter_mut().zip(t.observation.iter()).for_each(|(d, &v)| *d = v);
    }
    x
}

fn sample_categorical(probs: &[f64], rng: &mut dyn rand::RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Softmax policy trained with the COACH update `f * grad log pi(a|s)`.
///
/// Batch gradients are blended through a window of the last `W` updates,
/// `sum_j decay^j * g_{t-j}`, before the Adam ascent step.
#[derive(Clone, Debug)]
pub struct PolicyAgent {
    net: Network,
    optimizer: Adam,
    window: VecDeque<GradientSet>,
    window_size: usize,
    decay: f64,
}

impl PolicyAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        hidden: &[usize],
        learning_rate: f64,
        window_size: usize,
        decay: f64,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_actions);
        Ok(Self::from_network(Network::new(&dims, rng)?, learning_rate, window_size, decay))
    }

    pub fn from_network(net: Network, learning_rate: f64, window_size: usize, decay: f64) -> Self {
        let optimizer = Adam::new(&net, learning_rate);
        Self {
            net,
            optimizer,
            window: VecDeque::with_capacity(window_size.max(1)),
            window_size: window_size.max(1),
            decay,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn action_probs(&self, observation: &[f64]) -> Vec<f64> {
        self.net
            .forward_probs(observation)
            .expect("observation matches policy input")
    }

    /// `(1/|B|) sum_i f_i grad log pi(a_i | s_i)`.
    pub fn batch_gradient(&self, batch: &[FeedbackTuple]) -> Result<GradientSet, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let x = observation_matrix(batch, self.net.input_dim());
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let n = batch.len() as f64;
        let weights: Vec<f64> = batch.iter().map(|t| t.f_observed.value() / n).collect();
        Ok(weighted_log_prob_grad(&self.net, x.view(), &actions, &weights)?)
    }

    /// The decayed sum over the window after pushing `latest`.
    fn blended(&mut self, latest: GradientSet) -> GradientSet {
        self.window.push_front(latest);
        self.window.truncate(self.window_size);
        let mut applied = self.window[0].clone();
        let mut weight = 1.0;
        for g in self.window.iter().skip(1) {
            weight *= self.decay;
            if weight == 0.0 {
                break;
            }
            applied.add_scaled(g, weight);
        }
        applied
    }
}

impl FeedbackLearner for PolicyAgent {
    fn num_actions(&self) -> usize {
        self.net.output_dim()
    }

    fn act(&self, observation: &[f64], mode: ActMode, rng: &mut dyn rand::RngCore) -> usize {
        let probs = self.action_probs(observation);
        match mode {
            ActMode::Eval => argmax(&probs),
            ActMode::Train => sample_categorical(&probs, rng),
        }
    }

    fn update(&mut self, batch: &[FeedbackTuple]) -> Result<(), AgentError> {
        let g = self.batch_gradient(batch)?;
        let applied = self.blended(g);
        self.optimizer.step(&mut self.net, &applied, Direction::Ascent)?;
        Ok(())
    }
}

/// Feedback-value model `H(s, a)` fit by squared error to `f` and acted on
/// greedily (epsilon-greedy while training).
#[derive(Clone, Debug)]
pub struct TamerAgent {
    net: Network,
    optimizer: Adam,
    num_actions: usize,
    pub epsilon: f64,
}

impl TamerAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        hidden: &[usize],
        learning_rate: f64,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let mut dims = vec![obs_dim + num_actions];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = Network::new(&dims, rng)?;
        Ok(Self::from_network(net, num_actions, learning_rate, epsilon))
    }

    pub fn from_network(net: Network, num_actions: usize, learning_rate: f64, epsilon: f64) -> Self {
        let optimizer = Adam::new(&net, learning_rate);
        Self {
            net,
            optimizer,
            num_actions,
            epsilon,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    fn features(&self, batch: &[FeedbackTuple]) -> Array2<f64> {
        let obs_dim = self.net.input_dim() - self.num_actions;
        let mut x = observation_matrix(batch, obs_dim + self.num_actions);
        for (i, t) in batch.iter().enumerate() {
            x[[i, obs_dim + t.action]] = 1.0;
        }
        x
    }

    /// `H(s, a)` for every action.
    pub fn action_values(&self, observation: &[f64]) -> Vec<f64> {
        let obs_dim = observation.len();
        let mut x = Array2::zeros((self.num_actions, obs_dim + self.num_actions));
        for a in 0..self.num_actions {
            x.row_mut(a)
                .iter_mut()
                .zip(observation)
                .for_each(|(d, &v)| *d = v);
            x[[a, obs_dim + a]] = 1.0;
        }
        let out = self
            .net
            .forward_batch(x.view())
            .expect("observation matches model input")
            .output;
        out.column(0).to_vec()
    }

    /// Mean squared error of the batch and its gradient.
    pub fn loss_and_gradient(&self, batch: &[FeedbackTuple]) -> Result<(f64, GradientSet), AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let targets: Vec<f64> = batch.iter().map(|t| t.f_observed.value()).collect();
        Ok(squared_error_loss_and_grad(&self.net, self.features(batch).view(), &targets)?)
    }
}

impl FeedbackLearner for TamerAgent {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn act(&self, observation: &[f64], mode: ActMode, rng: &mut dyn rand::RngCore) -> usize {
        if mode == ActMode::Train && self.epsilon > 0.0 && rng.gen_bool(self.epsilon) {
            return rng.gen_range(0..self.num_actions);
        }
        argmax(&self.action_values(observation))
    }

    fn update(&mut self, batch: &[FeedbackTuple]) -> Result<(), AgentError> {
        let (_, grads) = self.loss_and_gradient(batch)?;
        self.optimizer.step(&mut self.net, &grads, Direction::Descent)?;
        Ok(())
    }
}

/// Either learner, for code that picks the algorithm at run time.
#[derive(Clone, Debug)]
pub enum Learner {
    Coach(PolicyAgent),
    Tamer(TamerAgent),
}

impl Learner {
    pub fn network(&self) -> &Network {
        match self {
            Learner::Coach(a) => a.network(),
            Learner::Tamer(a) => a.network(),
        }
    }
}

impl FeedbackLearner for Learner {
    fn num_actions(&self) -> usize {
        match self {
            Learner::Coach(a) => a.num_actions(),
            Learner::Tamer(a) => a.num_actions(),
        }
    }

    fn act(&self, observation: &[f64], mode: ActMode, rng: &mut dyn rand::RngCore) -> usize {
        match self {
            Learner::Coach(a) => a.act(observation, mode, rng),
            Learner::Tamer(a) => a.act(observation, mode, rng),
        }
    }

    fn update(&mut self, batch: &[FeedbackTuple]) -> Result<(), AgentError> {
        match self {
            Learner::Coach(a) => a.update(batch),
            Learner::Tamer(a) => a.update(batch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::Observation;
    use crate::feedback::Feedback;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tuple(obs: &[f64], action: usize, f: Feedback) -> FeedbackTuple {
        FeedbackTuple::new(Observation(obs.to_vec()), action, f, f)
    }

    fn agent(window: usize, decay: f64) -> PolicyAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        PolicyAgent::new(3, 2, &[8], 1e-3, window, decay, &mut rng).unwrap()
    }

    fn log_prob(a: &PolicyAgent, obs: &[f64], action: usize) -> f64 {
        a.action_probs(obs)[action].ln()
    }

    #[test]
    fn positive_feedback_raises_log_prob() {
        let mut a = agent(1, 0.0);
        let obs = [0.2, -0.4, 0.9];
        let before = log_prob(&a, &obs, 1);
        a.update(&[tuple(&obs, 1, Feedback::Positive)]).unwrap();
        assert!(log_prob(&a, &obs, 1) > before);
    }

    #[test]
    fn negative_feedback_lowers_log_prob() {
        let mut a = agent(1, 0.0);
        let obs = [0.2, -0.4, 0.9];
        let before = log_prob(&a, &obs, 1);
        a.update(&[tuple(&obs, 1, Feedback::Negative)]).unwrap();
        assert!(log_prob(&a, &obs, 1) < before);
    }

    #[test]
    fn opposite_feedback_cancels() {
        let mut a = agent(1, 0.0);
        let before = a.network().clone();
        let obs = [0.2, -0.4, 0.9];
        let batch = [tuple(&obs, 0, Feedback::Positive), tuple(&obs, 0, Feedback::Negative)];
        assert!(a.batch_gradient(&batch).unwrap().max_abs() < 1e-15);
        a.update(&batch).unwrap();
        let moved = a
            .network()
            .layers()
            .iter()
            .zip(before.layers())
            .map(|(x, y)| (&x.weights - &y.weights).fold(0.0f64, |m, v| m.max(v.abs())))
            .fold(0.0, f64::max);
        assert!(moved < 1e-9, "{moved}");
    }

    #[test]
    fn empty_batch_rejected() {
        let mut a = agent(1, 0.0);
        assert!(matches!(a.update(&[]), Err(AgentError::EmptyBatch)));
    }

    #[test]
    fn window_blends_past_gradients() {
        let mut a = agent(3, 0.5);
        let g1 = a.blended(GradientSet::zeros_like(a.network()));
        assert_eq!(g1.max_abs(), 0.0);
        let mut one = GradientSet::zeros_like(a.network());
        one.layers[0].bias.fill(1.0);
        a.blended(one.clone());
        a.blended(one.clone());
        let out = a.blended(one.clone());
        // 1 + 0.5 + 0.25 with the oldest zero set evicted.
        assert_eq!(out.layers[0].bias[0], 1.75);
    }

    #[test]
    fn eval_mode_is_greedy() {
        let a = agent(1, 0.0);
        let obs = [0.1, 0.2, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first = a.act(&obs, ActMode::Eval, &mut rng);
        for _ in 0..20 {
            assert_eq!(a.act(&obs, ActMode::Eval, &mut rng), first);
        }
        assert_eq!(first, argmax(&a.action_probs(&obs)));
    }

    #[test]
    fn argmax_ties_prefer_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn tamer_positive_target_raises_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = TamerAgent::new(2, 3, &[8], 1e-3, 0.1, &mut rng).unwrap();
        let obs = [0.3, -0.7];
        let before = t.action_values(&obs)[2];
        t.update(&[tuple(&obs, 2, Feedback::Positive)]).unwrap();
        assert!(t.action_values(&obs)[2] > before);
    }

    #[test]
    fn tamer_fits_separable_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = TamerAgent::new(1, 2, &[16], 1e-2, 0.0, &mut rng).unwrap();
        let batch = vec![
            tuple(&[1.0], 0, Feedback::Positive),
            tuple(&[1.0], 1, Feedback::Negative),
            tuple(&[-1.0], 0, Feedback::Negative),
            tuple(&[-1.0], 1, Feedback::Positive),
        ];
        let (initial, _) = t.loss_and_gradient(&batch).unwrap();
        for _ in 0..500 {
            t.update(&batch).unwrap();
        }
        let (fitted, _) = t.loss_and_gradient(&batch).unwrap();
        assert!(fitted < 1e-3 && fitted < initial);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(t.act(&[1.0], ActMode::Eval, &mut rng), 0);
        assert_eq!(t.act(&[-1.0], ActMode::Eval, &mut rng), 1);
    }
}
