//! Loss-ranking noise filter.
//!
//! A binary classifier `C(s, a) -> P(feedback)` is pretrained on a small clean
//! dataset. Each training step it scores a replayed minibatch; the
//! lowest-loss fraction `R = 1 - p_noise` is kept as clean, a fraction of the
//! remaining high-loss tuples has its label flipped, and the rest is dropped
//! for that step. The classifier is then refit online on what it kept.

use crate::feedback::Feedback;
use crate::feedback_data::FeedbackTuple;
use crate::numerics::{
    batch_cross_entropy, classification_loss_and_grad, Adam, Direction, LossKind, Network, NumericsError,
};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("remember rate {0} keeps no tuple of a batch of {1}")]
    DegenerateSelection(f64, usize),
    #[error("remember rate must lie in (0, 1], got {0}")]
    RememberRate(f64),
    #[error("relabel rate must lie in [0, 1], got {0}")]
    RelabelRate(f64),
    #[error("{losses} losses for a batch of {batch}")]
    LengthMismatch { losses: usize, batch: usize },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// What the relabel fraction is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelBase {
    /// `floor(R' * (1 - R) * |B|)` of the high-loss remainder.
    #[default]
    Remainder,
    /// `floor(R' * |B|)`, capped so that it never overlaps the clean set.
    WholeBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Fraction kept as clean, `1 - p_noise`.
    pub remember_rate: f64,
    /// Fraction of suspected-noisy tuples whose labels get flipped.
    pub relabel_rate: f64,
    pub relabel_base: RelabelBase,
}

impl FilterParams {
    pub fn new(remember_rate: f64, relabel_rate: f64) -> Result<Self, FilterError> {
        if !(remember_rate > 0.0 && remember_rate <= 1.0) {
            return Err(FilterError::RememberRate(remember_rate));
        }
        if !(0.0..=1.0).contains(&relabel_rate) {
            return Err(FilterError::RelabelRate(relabel_rate));
        }
        Ok(Self {
            remember_rate,
            relabel_rate,
            relabel_base: RelabelBase::Remainder,
        })
    }

    pub fn from_noise(p_noise: f64, relabel_rate: f64) -> Result<Self, FilterError> {
        Self::new(1.0 - p_noise, relabel_rate)
    }
}

// Guards against products like 0.7 * 10 = 6.9999999999999991.
fn floor_count(x: f64) -> usize {
    (x + 1e-9).floor().max(0.0) as usize
}

pub fn clean_count(batch_len: usize, remember_rate: f64) -> usize {
    floor_count(remember_rate * batch_len as f64)
}

pub fn relabel_count(batch_len: usize, params: &FilterParams) -> usize {
    let keep = clean_count(batch_len, params.remember_rate);
    let m = match params.relabel_base {
        RelabelBase::Remainder => {
            floor_count(params.relabel_rate * (1.0 - params.remember_rate) * batch_len as f64)
        }
        RelabelBase::WholeBatch => floor_count(params.relabel_rate * batch_len as f64),
    };
    m.min(batch_len - keep)
}

fn check_lengths(batch: &[FeedbackTuple], losses: &[f64]) -> Result<(), FilterError> {
    if batch.len() != losses.len() {
        return Err(FilterError::LengthMismatch {
            losses: losses.len(),
            batch: batch.len(),
        });
    }
    Ok(())
}

/// Indices of the `floor(R |B|)` smallest losses; equal losses resolve
/// toward older tuples.
pub fn select_clean(batch: &[FeedbackTuple], losses: &[f64], remember_rate: f64) -> Result<Vec<usize>, FilterError> {
    check_lengths(batch, losses)?;
    if !(remember_rate > 0.0 && remember_rate <= 1.0) {
        return Err(FilterError::RememberRate(remember_rate));
    }
    let k = clean_count(batch.len(), remember_rate);
    if k == 0 {
        return Err(FilterError::DegenerateSelection(remember_rate, batch.len()));
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&i, &j| {
        losses[i]
            .partial_cmp(&losses[j])
            .unwrap_or(Ordering::Equal)
            .then(batch[i].seq.cmp(&batch[j].seq))
    });
    order.truncate(k);
    Ok(order)
}

/// Indices of the largest-loss tuples to relabel; equal losses resolve
/// toward newer tuples, the mirror of [`select_clean`].
pub fn select_suspect(batch: &[FeedbackTuple], losses: &[f64], params: &FilterParams) -> Result<Vec<usize>, FilterError> {
    check_lengths(batch, losses)?;
    let m = relabel_count(batch.len(), params);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&i, &j| {
        losses[j]
            .partial_cmp(&losses[i])
            .unwrap_or(Ordering::Equal)
            .then(batch[j].seq.cmp(&batch[i].seq))
    });
    order.truncate(m);
    Ok(order)
}

/// Suspected-noisy tuples with their observed labels flipped.
pub fn select_suspect_and_relabel(
    batch: &[FeedbackTuple],
    losses: &[f64],
    params: &FilterParams,
) -> Result<Vec<FeedbackTuple>, FilterError> {
    Ok(select_suspect(batch, losses, params)?
        .into_iter()
        .map(|i| batch[i].relabeled())
        .collect())
}

/// Fraction of filtered tuples whose (post-flip) label is correct.
pub fn pure_ratio(clean: &[FeedbackTuple], relabeled: &[FeedbackTuple]) -> Option<f64> {
    let total = clean.len() + relabeled.len();
    if total == 0 {
        return None;
    }
    let correct = clean.iter().chain(relabeled).filter(|t| t.is_correct()).count();
    Some(correct as f64 / total as f64)
}

/// Partition of one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterResult {
    pub clean: Vec<FeedbackTuple>,
    pub relabeled: Vec<FeedbackTuple>,
    pub discarded: Vec<FeedbackTuple>,
    pub pure_ratio: Option<f64>,
}

impl FilterResult {
    /// Clean tuples followed by relabeled ones: the training set for this step.
    pub fn filtered(&self) -> Vec<FeedbackTuple> {
        self.clean.iter().chain(&self.relabeled).cloned().collect()
    }
}

/// Ranks `batch` by `losses` and splits it into clean, relabeled and
/// discarded tuples.
pub fn partition_batch(
    batch: &[FeedbackTuple],
    losses: &[f64],
    params: &FilterParams,
) -> Result<FilterResult, FilterError> {
    let clean_idx = select_clean(batch, losses, params.remember_rate)?;
    let suspect_idx = select_suspect(batch, losses, params)?;
    let mut role = vec![0u8; batch.len()];
    for &i in &clean_idx {
        role[i] = 1;
    }
    for &i in &suspect_idx {
        debug_assert_eq!(role[i], 0, "clean and relabeled sets overlap");
        role[i] = 2;
    }
    let clean: Vec<_> = clean_idx.iter().map(|&i| batch[i].clone()).collect();
    let relabeled: Vec<_> = suspect_idx.iter().map(|&i| batch[i].relabeled()).collect();
    let discarded = batch
        .iter()
        .zip(&role)
        .filter(|(_, &r)| r == 0)
        .map(|(t, _)| t.clone())
        .collect();
    let pure_ratio = pure_ratio(&clean, &relabeled);
    Ok(FilterResult {
        clean,
        relabeled,
        discarded,
        pure_ratio,
    })
}

/// Feedback classifier over `observation ++ one_hot(action)`.
#[derive(Clone, Debug)]
pub struct Classifier {
    net: Network,
    optimizer: Adam,
    num_actions: usize,
    pub loss: LossKind,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        hidden: &[usize],
        loss: LossKind,
        learning_rate: f64,
        rng: &mut R,
    ) -> Result<Self, FilterError> {
        let mut dims = vec![obs_dim + num_actions];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let net = Network::new(&dims, rng)?;
        let optimizer = Adam::new(&net, learning_rate);
        Ok(Self {
            net,
            optimizer,
            num_actions,
            loss,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn from_network(net: Network, num_actions: usize, loss: LossKind, learning_rate: f64) -> Self {
        let optimizer = Adam::new(&net, learning_rate);
        Self {
            net,
            optimizer,
            num_actions,
            loss,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Restarts the optimizer with a new learning rate.
    pub fn reset_optimizer(&mut self, learning_rate: f64) {
        self.optimizer = Adam::new(&self.net, learning_rate);
    }

    pub fn features(&self, tuples: &[FeedbackTuple]) -> Array2<f64> {
        let obs_dim = self.net.input_dim() - self.num_actions;
        let mut x = Array2::zeros((tuples.len(), obs_dim + self.num_actions));
        for (i, t) in tuples.iter().enumerate() {
            let mut row = x.row_mut(i);
            for (dst, &v) in row.iter_mut().zip(t.observation.iter()) {
                *dst = v;
            }
            row[obs_dim + t.action] = 1.0;
        }
        x
    }

    pub fn predict_probs(&self, observation: &[f64], action: usize) -> Result<Vec<f64>, FilterError> {
        let mut x = observation.to_vec();
        x.extend((0..self.num_actions).map(|a| (a == action) as u8 as f64));
        Ok(self.net.forward_probs(&x)?)
    }

    fn labels(tuples: &[FeedbackTuple]) -> Vec<Feedback> {
        tuples.iter().map(|t| t.f_observed).collect()
    }

    /// Full-batch training on the classifier's configured loss. Returns the
    /// loss before each epoch's step and the final loss.
    pub fn pretrain(&mut self, dataset: &[FeedbackTuple], epochs: usize, learning_rate: f64) -> Result<Vec<f64>, FilterError> {
        if dataset.is_empty() {
            return Err(FilterError::EmptyDataset);
        }
        let x = self.features(dataset);
        let labels = Self::labels(dataset);
        let mut optimizer = Adam::new(&self.net, learning_rate);
        let mut history = Vec::with_capacity(epochs + 1);
        for _ in 0..epochs {
            let (loss, grads) = classification_loss_and_grad(&self.net, x.view(), &labels, &self.loss)?;
            history.push(loss);
            optimizer.step(&mut self.net, &grads, Direction::Descent)?;
        }
        history.push(self.mean_loss(dataset, &self.loss.clone())?);
        Ok(history)
    }

    pub fn mean_loss(&self, tuples: &[FeedbackTuple], kind: &LossKind) -> Result<f64, FilterError> {
        let (loss, _) = classification_loss_and_grad(&self.net, self.features(tuples).view(), &Self::labels(tuples), kind)?;
        Ok(loss)
    }

    /// Per-tuple cross-entropy against the observed label.
    pub fn pointwise_losses(&self, batch: &[FeedbackTuple]) -> Result<Vec<f64>, FilterError> {
        Ok(batch_cross_entropy(&self.net, self.features(batch).view(), &Self::labels(batch))?)
    }

    /// Fraction of tuples whose observed label is the more probable class.
    pub fn accuracy(&self, tuples: &[FeedbackTuple]) -> Result<f64, FilterError> {
        if tuples.is_empty() {
            return Err(FilterError::EmptyDataset);
        }
        let losses = self.pointwise_losses(tuples)?;
        let hits = losses.iter().filter(|&&l| l < std::f64::consts::LN_2).count();
        Ok(hits as f64 / tuples.len() as f64)
    }

    /// One cross-entropy descent step on the filtered batch. An empty batch
    /// leaves the classifier untouched.
    pub fn online_update(&mut self, filtered: &[FeedbackTuple]) -> Result<(), FilterError> {
        if filtered.is_empty() {
            return Ok(());
        }
        let (_, grads) = classification_loss_and_grad(
            &self.net,
            self.features(filtered).view(),
            &Self::labels(filtered),
            &LossKind::CrossEntropy,
        )?;
        self.optimizer.step(&mut self.net, &grads, Direction::Descent)?;
        Ok(())
    }

    /// Scores and partitions a minibatch.
    pub fn filter(&self, batch: &[FeedbackTuple], params: &FilterParams) -> Result<FilterResult, FilterError> {
        let losses = self.pointwise_losses(batch)?;
        partition_batch(batch, &losses, params)
    }
}
