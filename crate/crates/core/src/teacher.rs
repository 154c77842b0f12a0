//! Scripted teachers: an optimal-action oracle per domain, symmetric label
//! noise, and the frequency/budget gate that decides when feedback is given.

use crate::environments::{
    CartPoleState, DoorKeyLayout, DoorKeyPlanner, Domain, Env, Observation, CARTPOLE_LEFT,
    CARTPOLE_RIGHT,
};
use crate::feedback::Feedback;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeacherError {
    #[error("noise probability must lie in [0, 0.5), got {0}")]
    NoiseOutOfRange(f64),
    #[error("feedback frequency must be positive")]
    ZeroFrequency,
    #[error("feedback budget must be positive")]
    ZeroBudget,
}

/// A label-flip probability in `[0, 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseRate(f64);

impl NoiseRate {
    pub const ZERO: NoiseRate = NoiseRate(0.0);

    pub fn new(p: f64) -> Result<Self, TeacherError> {
        if (0.0..0.5).contains(&p) {
            Ok(Self(p))
        } else {
            Err(TeacherError::NoiseOutOfRange(p))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for NoiseRate {
    type Error = TeacherError;

    fn try_from(p: f64) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<NoiseRate> for f64 {
    fn from(p: NoiseRate) -> f64 {
        p.0
    }
}

/// Flips `f` with probability `p`.
pub fn inject_noise<R: Rng + ?Sized>(f: Feedback, p: NoiseRate, rng: &mut R) -> Feedback {
    if p.0 > 0.0 && rng.gen_bool(p.0) {
        f.flipped()
    } else {
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Unlimited,
    Limited(u64),
}

impl Budget {
    pub fn allows(self, used: u64) -> bool {
        match self {
            Budget::Unlimited => true,
            Budget::Limited(n) => used < n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSource {
    Scripted,
    Live,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub p_noise: NoiseRate,
    pub budget: Budget,
    pub frequency: u64,
    pub source: TeacherSource,
}

impl TeacherSpec {
    pub fn new(p_noise: f64, budget: Budget, frequency: u64) -> Result<Self, TeacherError> {
        if frequency == 0 {
            return Err(TeacherError::ZeroFrequency);
        }
        if budget == Budget::Limited(0) {
            return Err(TeacherError::ZeroBudget);
        }
        Ok(Self {
            p_noise: NoiseRate::new(p_noise)?,
            budget,
            frequency,
            source: TeacherSource::Scripted,
        })
    }
}

/// True iff feedback is due on `step` and budget remains; consumes one unit
/// of budget exactly when it returns true.
pub fn feedback_gate(spec: &TeacherSpec, step: u64, budget_used: &mut u64) -> bool {
    let due = step % spec.frequency == 0 && spec.budget.allows(*budget_used);
    if due {
        *budget_used += 1;
    }
    due
}

/// One teacher judgement on a visited state-action pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub observation: Observation,
    pub action: usize,
    pub f_true: Feedback,
    pub f_observed: Feedback,
    pub step: u64,
}

/// Optimal-action oracle for a domain.
#[derive(Clone, Debug)]
pub enum Expert {
    /// Linear sign rule on the full cart-pole state.
    CartPole,
    DoorKey(Arc<DoorKeyPlanner>),
}

/// Weights of the cart-pole controller `w . (x, x_dot, theta, theta_dot)`.
/// The cart terms keep the cart from drifting out of bounds over long episodes.
pub const CARTPOLE_EXPERT_WEIGHTS: [f64; 4] = [0.05, 0.2, 1.0, 1.0];

impl Expert {
    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::CartPole => Expert::CartPole,
            Domain::DoorKey => Expert::for_layout(DoorKeyLayout::default()),
        }
    }

    pub fn for_layout(layout: DoorKeyLayout) -> Self {
        Expert::DoorKey(Arc::new(DoorKeyPlanner::new(layout)))
    }

    pub fn for_env(env: &Env) -> Self {
        match env {
            Env::CartPole(_) => Expert::CartPole,
            Env::DoorKey(d) => Expert::for_layout(d.layout().clone()),
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Expert::CartPole => 2,
            Expert::DoorKey(_) => crate::environments::DOORKEY_ACTIONS,
        }
    }

    /// # Panics
    /// If the observation does not decode for this domain.
    pub fn expert_action(&self, obs: &[f64]) -> usize {
        match self {
            Expert::CartPole => {
                let s = CartPoleState::decode(obs).expect("cart-pole observation has 4 components");
                let score = CARTPOLE_EXPERT_WEIGHTS[0] * s.x
                    + CARTPOLE_EXPERT_WEIGHTS[1] * s.x_dot
                    + CARTPOLE_EXPERT_WEIGHTS[2] * s.theta
                    + CARTPOLE_EXPERT_WEIGHTS[3] * s.theta_dot;
                if score >= 0.0 {
                    CARTPOLE_RIGHT
                } else {
                    CARTPOLE_LEFT
                }
            }
            Expert::DoorKey(planner) => {
                let s = planner
                    .layout()
                    .decode(obs)
                    .expect("door-key observation matches layout");
                planner.best_action(&s)
            }
        }
    }

    /// `+1` iff `action` is the expert's choice.
    pub fn true_feedback(&self, obs: &[f64], action: usize) -> Feedback {
        Feedback::from_bool(self.expert_action(obs) == action)
    }
}

/// Expert oracle plus noise and gating: the scripted stand-in for a human.
#[derive(Clone, Debug)]
pub struct ScriptedTeacher {
    expert: Expert,
    spec: TeacherSpec,
    budget_used: u64,
    rng: ChaCha8Rng,
}

impl ScriptedTeacher {
    pub fn new(expert: Expert, spec: TeacherSpec, rng: ChaCha8Rng) -> Self {
        Self {
            expert,
            spec,
            budget_used: 0,
            rng,
        }
    }

    pub fn expert(&self) -> &Expert {
        &self.expert
    }

    pub fn spec(&self) -> &TeacherSpec {
        &self.spec
    }

    pub fn budget_used(&self) -> u64 {
        self.budget_used
    }

    /// Feedback for the action taken on `step`, if the gate opens.
    pub fn observe(&mut self, step: u64, observation: &Observation, action: usize) -> Option<FeedbackEvent> {
        if !feedback_gate(&self.spec, step, &mut self.budget_used) {
            return None;
        }
        let f_true = self.expert.true_feedback(observation, action);
        let f_observed = inject_noise(f_true, self.spec.p_noise, &mut self.rng);
        Some(FeedbackEvent {
            observation: observation.clone(),
            action,
            f_true,
            f_observed,
            step,
        })
    }
}
