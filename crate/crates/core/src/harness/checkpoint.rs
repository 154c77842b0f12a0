//! Versioned JSON snapshots of trained networks.

use crate::agents::{Learner, PolicyAgent, TamerAgent};
use crate::environments::Domain;
use crate::noise_filter::Classifier;
use crate::numerics::{LayerParams, LossKind, Network, NumericsError};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("layer {layer}: expected {expected} parameters, found {found}")]
    ParamCount { layer: usize, expected: usize, found: usize },
    #[error("checkpoint holds a {found:?}, expected a {expected:?}")]
    Kind { expected: ModelKind, found: ModelKind },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Policy,
    Tamer,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub v: u32,
    pub kind: ModelKind,
    pub domain: Domain,
    pub num_actions: usize,
    pub layer_dims: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_network(kind: ModelKind, domain: Domain, num_actions: usize, net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerRecord {
                inputs: l.weights.ncols(),
                outputs: l.weights.nrows(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        Self {
            v: CHECKPOINT_VERSION,
            kind,
            domain,
            num_actions,
            layer_dims: net.layer_dims(),
            layers,
        }
    }

    pub fn of_learner(domain: Domain, learner: &Learner) -> Self {
        use crate::agents::FeedbackLearner;
        let kind = match learner {
            Learner::Coach(_) => ModelKind::Policy,
            Learner::Tamer(_) => ModelKind::Tamer,
        };
        Self::from_network(kind, domain, learner.num_actions(), learner.network())
    }

    pub fn of_classifier(domain: Domain, classifier: &Classifier) -> Self {
        Self::from_network(ModelKind::Classifier, domain, classifier.num_actions(), classifier.network())
    }

    pub fn network(&self) -> Result<Network, CheckpointError> {
        if self.v != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.v));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let expected = l.inputs * l.outputs;
                if l.weights.len() != expected || l.bias.len() != l.outputs {
                    return Err(CheckpointError::ParamCount {
                        layer: i,
                        expected: expected + l.outputs,
                        found: l.weights.len() + l.bias.len(),
                    });
                }
                let weights = Array2::from_shape_vec((l.outputs, l.inputs), l.weights.clone())
                    .expect("length checked above");
                Ok(LayerParams {
                    weights,
                    bias: Array1::from_vec(l.bias.clone()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Network::from_layers(layers)?)
    }

    /// Rebuilds a learner for evaluation; optimizer state starts fresh.
    pub fn learner(&self) -> Result<Learner, CheckpointError> {
        let net = self.network()?;
        match self.kind {
            ModelKind::Policy => Ok(Learner::Coach(PolicyAgent::from_network(net, 0.0, 1, 0.0))),
            ModelKind::Tamer => Ok(Learner::Tamer(TamerAgent::from_network(net, self.num_actions, 0.0, 0.0))),
            ModelKind::Classifier => Err(CheckpointError::Kind {
                expected: ModelKind::Policy,
                found: ModelKind::Classifier,
            }),
        }
    }

    pub fn classifier(&self) -> Result<Classifier, CheckpointError> {
        if self.kind != ModelKind::Classifier {
            return Err(CheckpointError::Kind {
                expected: ModelKind::Classifier,
                found: self.kind,
            });
        }
        Ok(Classifier::from_network(self.network()?, self.num_actions, LossKind::CrossEntropy, 1e-3))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let c: Self = serde_json::from_str(text)?;
        if c.v != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(c.v));
        }
        Ok(c)
    }
}
