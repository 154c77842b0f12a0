//! Replay buffer for feedback tuples and pretraining-dataset collection.

use crate::environments::{Env, Observation};
use crate::feedback::Feedback;
use crate::teacher::{inject_noise, Expert, NoiseRate};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("replay buffer is empty")]
    NotReady,
    #[error("dataset must contain at least one state")]
    EmptyRequest,
    #[error("only {found} distinct states found after {attempts} rollout steps; {wanted} requested")]
    Exhausted {
        wanted: usize,
        found: usize,
        attempts: usize,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One `(observation, action, feedback)` sample. `f_true` is bookkeeping for
/// the harness and is never used for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackTuple {
    #[serde(rename = "obs")]
    pub observation: Observation,
    pub action: usize,
    pub f_observed: Feedback,
    pub f_true: Feedback,
    /// Insertion order within a buffer; assigned on push.
    #[serde(skip)]
    pub seq: u64,
}

impl FeedbackTuple {
    pub fn new(observation: Observation, action: usize, f_observed: Feedback, f_true: Feedback) -> Self {
        Self {
            observation,
            action,
            f_observed,
            f_true,
            seq: 0,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.f_observed == self.f_true
    }

    pub fn relabeled(&self) -> Self {
        Self {
            f_observed: self.f_observed.flipped(),
            ..self.clone()
        }
    }
}

impl From<crate::teacher::FeedbackEvent> for FeedbackTuple {
    fn from(e: crate::teacher::FeedbackEvent) -> Self {
        FeedbackTuple::new(e.observation, e.action, e.f_observed, e.f_true)
    }
}

/// Bounded FIFO of feedback tuples.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<FeedbackTuple>,
    next_seq: u64,
}

impl ReplayBuffer {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            next_seq: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeedbackTuple> {
        self.items.iter()
    }

    /// Appends, evicting the oldest tuple when full.
    pub fn push(&mut self, mut tuple: FeedbackTuple) {
        tuple.seq = self.next_seq;
        self.next_seq += 1;
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tuple);
    }

    /// Uniform minibatch: without replacement when the buffer holds at least
    /// `batch_size` tuples, with replacement otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<FeedbackTuple>, DataError> {
        if self.items.is_empty() {
            return Err(DataError::NotReady);
        }
        let n = self.items.len();
        let batch = if n >= batch_size {
            rand::seq::index::sample(rng, n, batch_size)
                .into_iter()
                .map(|i| self.items[i].clone())
                .collect()
        } else {
            (0..batch_size)
                .map(|_| self.items[rng.gen_range(0..n)].clone())
                .collect()
        };
        Ok(batch)
    }
}

/// Labeled state-action pairs used to pretrain the classifier (or preload a
/// baseline's buffer).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainDataset {
    pub tuples: Vec<FeedbackTuple>,
    /// Distinct states sampled before augmentation.
    pub state_count: usize,
}

impl PretrainDataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self
            .tuples
            .iter()
            .filter(|t| t.f_observed == Feedback::Positive)
            .count();
        (self.tuples.len() - pos, pos)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), DataError> {
        for t in &self.tuples {
            serde_json::to_writer(&mut out, t).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads tuples back; `state_count` is recovered from the positives,
    /// one per state.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, DataError> {
        let mut tuples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: FeedbackTuple =
                serde_json::from_str(&line).map_err(|source| DataError::Parse { line: i + 1, source })?;
            tuples.push(t);
        }
        let state_count = tuples.iter().filter(|t| t.f_true == Feedback::Positive).count();
        Ok(Self { tuples, state_count })
    }
}

/// For each `(state, expert action)` emit the expert action as positive and
/// every other action as negative.
pub fn augment_negatives(states: Vec<(Observation, usize)>, num_actions: usize) -> PretrainDataset {
    let state_count = states.len();
    let mut tuples = Vec::with_capacity(state_count * num_actions);
    for (obs, best) in states {
        for a in 0..num_actions {
            let f = Feedback::from_bool(a == best);
            tuples.push(FeedbackTuple::new(obs.clone(), a, f, f));
        }
    }
    PretrainDataset { tuples, state_count }
}

/// Per-dimension sampling box for cart-pole pretraining states:
/// position, velocity, angle, angular velocity.
pub const CARTPOLE_SAMPLING_BOUNDS: [f64; 4] = [2.4, 2.4, 0.418, 0.418];

fn open_uniform<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    loop {
        let v = rng.gen_range(-bound..bound);
        if v > -bound {
            return v;
        }
    }
}

/// Uniform states from the clipped cart-pole box, labeled by the expert,
/// augmented with negatives and shuffled.
pub fn collect_pretrain_cartpole<R: Rng + ?Sized>(
    n_states: usize,
    rng: &mut R,
    expert: &Expert,
) -> Result<PretrainDataset, DataError> {
    if n_states == 0 {
        return Err(DataError::EmptyRequest);
    }
    let states = (0..n_states)
        .map(|_| {
            let obs = Observation(CARTPOLE_SAMPLING_BOUNDS.iter().map(|&b| open_uniform(rng, b)).collect());
            let best = expert.expert_action(&obs);
            (obs, best)
        })
        .collect();
    let mut data = augment_negatives(states, expert.num_actions());
    data.tuples.shuffle(rng);
    Ok(data)
}

/// Distinct states visited by a policy that follows the expert half of the
/// time and acts uniformly at random otherwise.
pub fn collect_pretrain_trajectories<R: Rng + ?Sized>(
    n_states: usize,
    expert: &Expert,
    env: &mut Env,
    rng: &mut R,
) -> Result<PretrainDataset, DataError> {
    if n_states == 0 {
        return Err(DataError::EmptyRequest);
    }
    let max_attempts = 1000 * n_states + 10_000;
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut states = Vec::with_capacity(n_states);
    let mut obs = env.reset(rng.gen()).observation;
    let mut attempts = 0;
    while states.len() < n_states {
        if attempts == max_attempts {
            return Err(DataError::Exhausted {
                wanted: n_states,
                found: states.len(),
                attempts,
            });
        }
        attempts += 1;
        let key: Vec<u64> = obs.iter().map(|v| v.to_bits()).collect();
        let best = expert.expert_action(&obs);
        if seen.insert(key) {
            states.push((obs.clone(), best));
        }
        let action = if rng.gen_bool(0.5) {
            best
        } else {
            rng.gen_range(0..env.num_actions())
        };
        let step = env.step(action).expect("environment is live");
        obs = if step.done() {
            env.reset(rng.gen()).observation
        } else {
            step.observation
        };
    }
    let mut data = augment_negatives(states, expert.num_actions());
    data.tuples.shuffle(rng);
    Ok(data)
}

/// Flips each observed label independently with probability `p`.
pub fn add_dataset_noise<R: Rng + ?Sized>(dataset: &PretrainDataset, p: NoiseRate, rng: &mut R) -> PretrainDataset {
    let tuples = dataset
        .tuples
        .iter()
        .map(|t| FeedbackTuple {
            f_observed: inject_noise(t.f_observed, p, rng),
            ..t.clone()
        })
        .collect();
    PretrainDataset {
        tuples,
        state_count: dataset.state_count,
    }
}
