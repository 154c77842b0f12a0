//! WebAssembly bindings for the static demo page.
//!
//! Two interactive views: a filter explorer that scores one noisy minibatch
//! with a freshly pretrained classifier, and a training run the page steps
//! a few hundred environment steps per animation frame.

use candere::agents::training::{pretrain_classifier, run_dataset, Algorithm, Trainer};
use candere::environments::Domain;
use candere::feedback_data::{add_dataset_noise, collect_pretrain_cartpole, FeedbackTuple};
use candere::harness::ExperimentConfig;
use candere::noise_filter::{select_clean, select_suspect, FilterParams};
use candere::teacher::{Expert, NoiseRate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clean,
    Relabeled,
    Discarded,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoredTuple {
    pub theta: f64,
    pub theta_dot: f64,
    pub action: usize,
    pub observed: i8,
    pub correct: bool,
    pub loss: f64,
    pub role: Role,
}

#[derive(Clone, Debug, Serialize)]
pub struct FilterView {
    pub tuples: Vec<ScoredTuple>,
    /// Correct-label fraction of the raw batch.
    pub batch_accuracy: f64,
    /// Correct-label fraction of clean plus relabeled tuples.
    pub pure_ratio: Option<f64>,
    pub clean: usize,
    pub relabeled: usize,
    pub discarded: usize,
    pub classifier_loss: Vec<f64>,
}

/// Pretrains a Cart Pole classifier on `pretrain_size` clean states, draws a
/// batch of expert-labeled tuples, flips each label with `p_noise` and
/// partitions the batch.
pub fn explore_filter(
    p_noise: f64,
    relabel_rate: f64,
    batch_size: usize,
    pretrain_size: usize,
    seed: u64,
) -> Result<FilterView, String> {
    let config = ExperimentConfig {
        p_noise,
        relabel_rate,
        pretrain_size,
        ..ExperimentConfig::reduced(Domain::CartPole)
    };
    config.validate().map_err(|e| e.to_string())?;
    let dataset = run_dataset(&config, seed).map_err(|e| e.to_string())?;
    let (classifier, history) = pretrain_classifier(&config, &dataset, seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ba7c4);
    let states = batch_size.div_ceil(2).max(1);
    let clean = collect_pretrain_cartpole(states, &mut rng, &Expert::CartPole).map_err(|e| e.to_string())?;
    let noise = NoiseRate::new(p_noise).map_err(|e| e.to_string())?;
    let mut batch: Vec<FeedbackTuple> = add_dataset_noise(&clean, noise, &mut rng).tuples;
    batch.truncate(batch_size.max(1));
    for (i, t) in batch.iter_mut().enumerate() {
        t.seq = i as u64;
    }
    let params = FilterParams::from_noise(p_noise, relabel_rate).map_err(|e| e.to_string())?;
    let losses = classifier.pointwise_losses(&batch).map_err(|e| e.to_string())?;
    let mut roles = vec![Role::Discarded; batch.len()];
    for i in select_clean(&batch, &losses, params.remember_rate).map_err(|e| e.to_string())? {
        roles[i] = Role::Clean;
    }
    for i in select_suspect(&batch, &losses, &params).map_err(|e| e.to_string())? {
        roles[i] = Role::Relabeled;
    }
    let count = |r: Role| roles.iter().filter(|&&x| x == r).count();
    let kept: Vec<bool> = batch
        .iter()
        .zip(&roles)
        .filter(|(_, r)| **r != Role::Discarded)
        .map(|(t, r)| t.is_correct() != (*r == Role::Relabeled))
        .collect();
    let tuples = batch
        .iter()
        .zip(&losses)
        .zip(&roles)
        .map(|((t, &loss), &role)| ScoredTuple {
            theta: t.observation[2],
            theta_dot: t.observation[3],
            action: t.action,
            observed: t.f_observed.value() as i8,
            correct: t.is_correct(),
            loss,
            role,
        })
        .collect();
    Ok(FilterView {
        batch_accuracy: batch.iter().filter(|t| t.is_correct()).count() as f64 / batch.len() as f64,
        pure_ratio: (!kept.is_empty()).then(|| kept.iter().filter(|&&c| c).count() as f64 / kept.len() as f64),
        clean: count(Role::Clean),
        relabeled: count(Role::Relabeled),
        discarded: count(Role::Discarded),
        classifier_loss: history,
        tuples,
    })
}

/// Scores one noisy batch; returns the partition as JSON.
#[wasm_bindgen(js_name = exploreFilter)]
pub fn explore_filter_js(
    p_noise: f64,
    relabel_rate: f64,
    batch_size: usize,
    pretrain_size: usize,
    seed: u32,
) -> Result<String, JsError> {
    let view =
        explore_filter(p_noise, relabel_rate, batch_size, pretrain_size, seed.into()).map_err(|e| JsError::new(&e))?;
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

/// Compact learner settings that keep a run interactive in the browser.
pub fn demo_config(algorithm: Algorithm, p_noise: f64, total_steps: u64) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        p_noise,
        total_steps,
        batch_size: 64,
        policy_hidden: vec![32, 32],
        tamer_hidden: vec![32, 32],
        classifier_hidden: vec![32, 32],
        policy_lr: 2e-4,
        tamer_lr: 2e-4,
        eval_interval: 500,
        eval_episodes: 3,
        seeds: vec![0],
        record_wall_time: false,
        ..ExperimentConfig::for_domain(Domain::CartPole)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Progress {
    pub step: u64,
    pub done: bool,
    pub budget_used: u64,
    /// `(step, mean return, pure ratio)` for evaluations since the last call.
    pub evaluations: Vec<(u64, f64, Option<f64>)>,
    pub frame: serde_json::Value,
}

/// A Cart Pole run with the scripted teacher, advanced on demand.
#[wasm_bindgen]
pub struct TrainingRun {
    trainer: Trainer,
}

impl TrainingRun {
    pub fn start(algorithm: &str, p_noise: f64, total_steps: u64, seed: u64) -> Result<Self, String> {
        let algorithm: Algorithm = algorithm.parse()?;
        let config = demo_config(algorithm, p_noise, total_steps);
        config.validate().map_err(|e| e.to_string())?;
        Ok(Self {
            trainer: Trainer::new(&config, seed).map_err(|e| e.to_string())?,
        })
    }

    pub fn progress(&mut self, steps: u32) -> Result<Progress, String> {
        let mut evaluations = Vec::new();
        for _ in 0..steps {
            if self.trainer.is_finished() {
                break;
            }
            let t = self.trainer.advance().map_err(|e| e.to_string())?;
            if let Some(m) = t.metrics {
                evaluations.push((m.step, m.eval_return_mean, m.pure_ratio));
            }
        }
        Ok(Progress {
            step: self.trainer.step(),
            done: self.trainer.is_finished(),
            budget_used: self.trainer.budget_used(),
            evaluations,
            frame: self.trainer.env().render(),
        })
    }
}

#[wasm_bindgen]
impl TrainingRun {
    #[wasm_bindgen(constructor)]
    pub fn new(algorithm: &str, p_noise: f64, total_steps: u32, seed: u32) -> Result<TrainingRun, JsError> {
        Self::start(algorithm, p_noise, total_steps.into(), seed.into()).map_err(|e| JsError::new(&e))
    }

    /// Runs up to `steps` environment steps; returns a progress JSON.
    pub fn advance(&mut self, steps: u32) -> Result<String, JsError> {
        let p = self.progress(steps).map_err(|e| JsError::new(&e))?;
        Ok(serde_json::to_string(&p).expect("progress serializes"))
    }
}
