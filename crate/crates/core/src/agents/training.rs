//! The interaction loop shared by every algorithm: act, collect gated
//! feedback, sample a batch, optionally filter it, update.

use super::{ActMode, AgentError, FeedbackLearner, Learner, PolicyAgent, TamerAgent};
use crate::environments::{Domain, Env, Observation};
use crate::feedback::Feedback;
use crate::feedback_data::{
    add_dataset_noise, collect_pretrain_cartpole, collect_pretrain_trajectories, DataError, FeedbackTuple,
    PretrainDataset, ReplayBuffer,
};
use crate::harness::{evaluate_policy, ExperimentConfig, MetricsRecord, PretrainLoss};
use crate::noise_filter::{Classifier, FilterError, FilterParams};
use crate::numerics::{ClassWeights, LossKind};
use crate::teacher::{Budget, Expert, FeedbackEvent, NoiseRate, ScriptedTeacher, TeacherError, TeacherSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DeepCoach,
    DeepCoachPreload,
    CandereCoach,
    DeepTamer,
    DeepTamerPreload,
    CandereTamer,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::DeepCoach,
        Algorithm::DeepCoachPreload,
        Algorithm::CandereCoach,
        Algorithm::DeepTamer,
        Algorithm::DeepTamerPreload,
        Algorithm::CandereTamer,
    ];

    pub fn uses_classifier(self) -> bool {
        matches!(self, Algorithm::CandereCoach | Algorithm::CandereTamer)
    }

    pub fn preloads(self) -> bool {
        matches!(self, Algorithm::DeepCoachPreload | Algorithm::DeepTamerPreload)
    }

    pub fn is_tamer(self) -> bool {
        matches!(
            self,
            Algorithm::DeepTamer | Algorithm::DeepTamerPreload | Algorithm::CandereTamer
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DeepCoach => "deep_coach",
            Algorithm::DeepCoachPreload => "deep_coach_preload",
            Algorithm::CandereCoach => "candere_coach",
            Algorithm::DeepTamer => "deep_tamer",
            Algorithm::DeepTamerPreload => "deep_tamer_preload",
            Algorithm::CandereTamer => "candere_tamer",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Config(#[from] crate::harness::ConfigError),
}

// Independent random streams so that algorithms compared under one seed
// share datasets, initial weights and environment resets.
mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const CLASSIFIER_INIT: u64 = 2;
    pub const ACTIONS: u64 = 3;
    pub const TEACHER: u64 = 4;
    pub const SAMPLING: u64 = 5;
    pub const RESETS: u64 = 6;
    pub const DATASET: u64 = 7;
    pub const STARTER: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const DATASET_NOISE: u64 = 10;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The clean pretraining set of a run, before any dataset noise.
pub fn pretrain_dataset(config: &ExperimentConfig, seed: u64) -> Result<PretrainDataset, DataError> {
    let expert = Expert::for_domain(config.domain);
    let mut rng = stream_rng(seed, stream::DATASET);
    match config.domain {
        Domain::CartPole => collect_pretrain_cartpole(config.pretrain_size, &mut rng, &expert),
        Domain::DoorKey => {
            let mut env = Env::new(config.domain);
            collect_pretrain_trajectories(config.pretrain_size, &expert, &mut env, &mut rng)
        }
    }
}

/// The pretraining set a run actually uses: the clean set with
/// `pretrain_noise` applied.
pub fn run_dataset(config: &ExperimentConfig, seed: u64) -> Result<PretrainDataset, TrainError> {
    let clean = pretrain_dataset(config, seed)?;
    if config.pretrain_noise > 0.0 {
        let p = NoiseRate::new(config.pretrain_noise)?;
        Ok(add_dataset_noise(&clean, p, &mut stream_rng(seed, stream::DATASET_NOISE)))
    } else {
        Ok(clean)
    }
}

fn classifier_loss(config: &ExperimentConfig, dataset: &PretrainDataset) -> LossKind {
    match config.pretrain_loss {
        PretrainLoss::CrossEntropy => LossKind::CrossEntropy,
        PretrainLoss::Focal => {
            let (negative, positive) = dataset.label_counts();
            LossKind::Focal {
                gamma: config.focal_gamma,
                alpha: ClassWeights::from_label_counts(negative, positive),
            }
        }
    }
}

/// A classifier pretrained on `dataset` with the configured loss.
pub fn pretrain_classifier(
    config: &ExperimentConfig,
    dataset: &PretrainDataset,
    seed: u64,
) -> Result<(Classifier, Vec<f64>), FilterError> {
    let env = Env::new(config.domain);
    let mut rng = stream_rng(seed, stream::CLASSIFIER_INIT);
    let mut classifier = Classifier::new(
        env.obs_dim(),
        env.num_actions(),
        &config.classifier_hidden,
        classifier_loss(config, dataset),
        config.classifier_lr,
        &mut rng,
    )?;
    let history = classifier.pretrain(&dataset.tuples, config.pretrain_epochs, config.pretrain_lr)?;
    Ok((classifier, history))
}

fn new_learner(config: &ExperimentConfig, env: &Env, seed: u64) -> Result<Learner, AgentError> {
    let mut rng = stream_rng(seed, stream::POLICY_INIT);
    Ok(if config.algorithm.is_tamer() {
        Learner::Tamer(TamerAgent::new(
            env.obs_dim(),
            env.num_actions(),
            &config.tamer_hidden,
            config.tamer_lr,
            config.tamer_epsilon,
            &mut rng,
        )?)
    } else {
        Learner::Coach(PolicyAgent::new(
            env.obs_dim(),
            env.num_actions(),
            &config.policy_hidden,
            config.policy_lr,
            config.trace_window,
            config.trace_decay,
            &mut rng,
        )?)
    })
}

/// Noise-free feedback on the first `count` state-action pairs the initial
/// learner visits, the starter set of the non-preload baselines.
fn visited_starter(learner: &Learner, domain: Domain, count: usize, seed: u64) -> Vec<FeedbackTuple> {
    let expert = Expert::for_domain(domain);
    let mut rng = stream_rng(seed, stream::STARTER);
    let mut env = Env::new(domain);
    let mut obs = env.reset(rng.gen()).observation;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let action = learner.act(&obs, ActMode::Train, &mut rng);
        let f = expert.true_feedback(&obs, action);
        out.push(FeedbackTuple::new(obs.clone(), action, f, f));
        let step = env.step(action).expect("environment is live");
        obs = if step.done() {
            env.reset(rng.gen()).observation
        } else {
            step.observation
        };
    }
    out
}

/// Filter statistics of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub batch_len: usize,
    pub trained_on: usize,
    /// Correct-label fraction of what the learner trained on.
    pub pure_ratio: Option<f64>,
}

/// A step that has acted but not yet learned.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingStep {
    pub step: u64,
    pub observation: Observation,
    pub action: usize,
    /// Render of the state the action was taken in; live mode only.
    pub render: Option<serde_json::Value>,
    pub feedback_due: bool,
    pub episode_done: bool,
    next_observation: Observation,
}

/// What one call to [`Trainer::advance`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub step: u64,
    /// State the action was taken in.
    pub observation: Observation,
    pub action: usize,
    /// The feedback gate was open for this step.
    pub feedback_due: bool,
    pub episode_done: bool,
    pub update: Option<UpdateStats>,
    pub metrics: Option<MetricsRecord>,
}

/// One training run, advanced a step at a time so that a live session can
/// interleave feedback from outside.
pub struct Trainer {
    config: ExperimentConfig,
    env: Env,
    expert: Expert,
    learner: Learner,
    classifier: Option<Classifier>,
    filter: Option<FilterParams>,
    buffer: ReplayBuffer,
    teacher: ScriptedTeacher,
    live: bool,
    live_budget_used: u64,
    act_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    reset_rng: ChaCha8Rng,
    eval_seed: u64,
    observation: Observation,
    pending: Option<PendingStep>,
    step: u64,
    pure_sum: f64,
    pure_count: usize,
    metrics: Vec<MetricsRecord>,
    started: Option<Instant>,
}

impl Trainer {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut env = Env::new(config.domain);
        let expert = Expert::for_domain(config.domain);
        let learner = new_learner(config, &env, seed)?;
        let dataset = run_dataset(config, seed)?;

        let initial: Vec<FeedbackTuple> = match config.algorithm {
            Algorithm::DeepCoachPreload | Algorithm::DeepTamerPreload => dataset.tuples.clone(),
            Algorithm::DeepCoach | Algorithm::DeepTamer => {
                visited_starter(&learner, config.domain, dataset.len(), seed)
            }
            Algorithm::CandereCoach | Algorithm::CandereTamer if config.candere_preload => dataset.tuples.clone(),
            Algorithm::CandereCoach | Algorithm::CandereTamer => Vec::new(),
        };
        let (classifier, filter) = if config.algorithm.uses_classifier() {
            let (classifier, _) = pretrain_classifier(config, &dataset, seed)?;
            let relabel_rate = if config.active_relabel { config.relabel_rate } else { 0.0 };
            let mut params = FilterParams::from_noise(config.p_noise, relabel_rate)?;
            params.relabel_base = config.relabel_base;
            (Some(classifier), Some(params))
        } else {
            (None, None)
        };

        let feedback_capacity = match config.budget {
            Budget::Limited(n) => n as usize,
            Budget::Unlimited => (config.total_steps / config.frequency) as usize,
        };
        let capacity = config
            .buffer_capacity
            .unwrap_or(feedback_capacity + initial.len())
            .max(1);
        let mut buffer = ReplayBuffer::new(capacity);
        for t in initial {
            buffer.push(t);
        }

        let spec = TeacherSpec::new(config.p_noise, config.budget, config.frequency)?;
        let teacher = ScriptedTeacher::new(expert.clone(), spec, stream_rng(seed, stream::TEACHER));
        let mut reset_rng = stream_rng(seed, stream::RESETS);
        let observation = env.reset(reset_rng.gen()).observation;
        Ok(Self {
            config: config.clone(),
            env,
            expert,
            learner,
            classifier,
            filter,
            buffer,
            teacher,
            live: false,
            live_budget_used: 0,
            act_rng: stream_rng(seed, stream::ACTIONS),
            sample_rng: stream_rng(seed, stream::SAMPLING),
            reset_rng,
            eval_seed: stream_rng(seed, stream::EVAL).gen(),
            observation,
            pending: None,
            step: 0,
            pure_sum: 0.0,
            pure_count: 0,
            metrics: Vec::new(),
            started: config.record_wall_time.then(Instant::now),
        })
    }

    /// Switches feedback intake from the scripted teacher to
    /// [`Trainer::submit_feedback`]. The scripted oracle stays on to
    /// supply the true label of each event.
    pub fn set_live(&mut self, live: bool) {
        self.live = live;
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn classifier(&self) -> Option<&Classifier> {
        self.classifier.as_ref()
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn budget_used(&self) -> u64 {
        if self.live {
            self.live_budget_used
        } else {
            self.teacher.budget_used()
        }
    }

    pub fn is_finished(&self) -> bool {
        if self.step >= self.config.total_steps {
            return true;
        }
        match (self.config.stop_return, self.metrics.last()) {
            (Some(target), Some(m)) => m.eval_return_mean >= target,
            _ => false,
        }
    }

    /// Whether a frame on `step` would be eligible for live feedback.
    fn live_gate(&self, step: u64) -> bool {
        step % self.config.frequency == 0 && self.config.budget.allows(self.live_budget_used)
    }

    /// Stores live feedback on a shown `(observation, action)` pair. The
    /// true label comes from the scripted oracle. Returns false once the
    /// budget is spent.
    pub fn submit_feedback(&mut self, observation: Observation, action: usize, value: Feedback, step: u64) -> bool {
        if !self.config.budget.allows(self.live_budget_used) {
            return false;
        }
        self.live_budget_used += 1;
        let f_true = self.expert.true_feedback(&observation, action);
        self.buffer.push(FeedbackTuple::from(FeedbackEvent {
            observation,
            action,
            f_true,
            f_observed: value,
            step,
        }));
        true
    }

    /// One environment step followed by at most one learning update.
    pub fn advance(&mut self) -> Result<Transition, TrainError> {
        self.act()?;
        self.learn()
    }

    /// First half of a step: act, step the environment and, with the
    /// scripted teacher, collect gated feedback. Live feedback for the
    /// returned pair may be submitted before [`Trainer::learn`].
    pub fn act(&mut self) -> Result<PendingStep, TrainError> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let step = self.step + 1;
        let observation = self.observation.clone();
        let render = self.live.then(|| self.env.render());
        let action = self.learner.act(&observation, ActMode::Train, &mut self.act_rng);
        let result = self.env.step(action).expect("environment is reset before it ends");
        let feedback_due = if self.live {
            self.live_gate(step)
        } else {
            match self.teacher.observe(step, &observation, action) {
                Some(event) => {
                    self.buffer.push(event.into());
                    true
                }
                None => false,
            }
        };
        let pending = PendingStep {
            step,
            observation,
            action,
            render,
            feedback_due,
            episode_done: result.done(),
            next_observation: result.observation,
        };
        self.pending = Some(pending.clone());
        Ok(pending)
    }

    /// Second half of a step: update from the buffer, reset a finished
    /// episode and evaluate on schedule.
    pub fn learn(&mut self) -> Result<Transition, TrainError> {
        let pending = match self.pending.take() {
            Some(p) => p,
            None => {
                self.act()?;
                self.pending.take().expect("act leaves a pending step")
            }
        };
        self.step = pending.step;
        let update = self.update()?;
        if let Some(p) = update.and_then(|u| u.pure_ratio) {
            self.pure_sum += p;
            self.pure_count += 1;
        }
        self.observation = if pending.episode_done {
            self.env.reset(self.reset_rng.gen()).observation
        } else {
            pending.next_observation
        };
        let step = self.step;
        let metrics = if step % self.config.eval_interval == 0 || step == self.config.total_steps {
            Some(self.record_metrics())
        } else {
            None
        };
        Ok(Transition {
            step,
            observation: pending.observation,
            action: pending.action,
            feedback_due: pending.feedback_due,
            episode_done: pending.episode_done,
            update,
            metrics,
        })
    }

    fn update(&mut self) -> Result<Option<UpdateStats>, TrainError> {
        let b = self.config.batch_size;
        if self.buffer.len() < b {
            return Ok(None);
        }
        let batch = self.buffer.sample(b, &mut self.sample_rng)?;
        let (train_on, pure_ratio) = match (&mut self.classifier, &self.filter) {
            (Some(classifier), Some(params)) => {
                let result = classifier.filter(&batch, params)?;
                let filtered = result.filtered();
                self.learner.update(&filtered)?;
                if self.config.online_training {
                    classifier.online_update(&filtered)?;
                }
                (filtered.len(), result.pure_ratio)
            }
            _ => {
                self.learner.update(&batch)?;
                let correct = batch.iter().filter(|t| t.is_correct()).count();
                (batch.len(), Some(correct as f64 / batch.len() as f64))
            }
        };
        Ok(Some(UpdateStats {
            batch_len: batch.len(),
            trained_on: train_on,
            pure_ratio,
        }))
    }

    /// Evaluates the frozen learner now and appends a metrics row.
    pub fn record_metrics(&mut self) -> MetricsRecord {
        let mut eval_env = Env::new(self.config.domain);
        let (mean, std) = evaluate_policy(&self.learner, &mut eval_env, self.config.eval_episodes, self.eval_seed);
        let pure_ratio = (self.pure_count > 0).then(|| self.pure_sum / self.pure_count as f64);
        self.pure_sum = 0.0;
        self.pure_count = 0;
        let wall_ms = self.started.map_or(0, |t| t.elapsed().as_millis() as u64);
        let record = MetricsRecord {
            step: self.step,
            eval_return_mean: mean,
            eval_return_std: std,
            pure_ratio,
            budget_used: self.budget_used(),
            wall_ms,
        };
        if self.metrics.last().map(|m| m.step) != Some(record.step) {
            self.metrics.push(record.clone());
        }
        record
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            budget_used: self.budget_used(),
            metrics: self.metrics,
            learner: self.learner,
            classifier: self.classifier,
        }
    }
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub learner: Learner,
    pub classifier: Option<Classifier>,
    pub budget_used: u64,
}

impl RunOutput {
    /// Mean of the last `n` evaluation points.
    pub fn final_return(&self, n: usize) -> f64 {
        let tail = &self.metrics[self.metrics.len().saturating_sub(n.max(1))..];
        tail.iter().map(|m| m.eval_return_mean).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Runs one seed of `config` with the scripted teacher.
pub fn train(config: &ExperimentConfig, seed: u64) -> Result<RunOutput, TrainError> {
    let mut trainer = Trainer::new(config, seed)?;
    while !trainer.is_finished() {
        trainer.advance()?;
    }
    Ok(trainer.finish())
}
