use crate::agents::Algorithm;
use crate::environments::Domain;
use crate::noise_filter::RelabelBase;
use crate::teacher::Budget;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainLoss {
    CrossEntropy,
    Focal,
}

/// A problem with one configuration key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
    #[error("could not parse configuration: {0}")]
    Parse(String),
    #[error("override `{0}` must look like key=value")]
    Override(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every knob of one experiment. Defaults come from
/// [`ExperimentConfig::for_domain`]; config files and command-line
/// overrides replace individual keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub algorithm: Algorithm,
    /// Flip the labels of suspected-noisy tuples (CANDERE variants only).
    pub active_relabel: bool,
    /// Keep training the classifier on filtered batches.
    pub online_training: bool,
    /// Place the pretraining set in the replay buffer of CANDERE variants,
    /// as the preload baselines do. Off starts them from an empty buffer.
    pub candere_preload: bool,
    pub p_noise: f64,
    #[serde(with = "budget_serde")]
    pub budget: Budget,
    pub frequency: u64,
    /// Number of distinct states in the pretraining set, before augmentation.
    pub pretrain_size: usize,
    pub pretrain_noise: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_loss: PretrainLoss,
    pub focal_gamma: f64,
    pub batch_size: usize,
    /// Defaults to the budget plus any preloaded tuples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
    pub policy_hidden: Vec<usize>,
    pub policy_lr: f64,
    pub trace_window: usize,
    pub trace_decay: f64,
    pub classifier_hidden: Vec<usize>,
    pub classifier_lr: f64,
    pub relabel_rate: f64,
    pub relabel_base: RelabelBase,
    pub tamer_hidden: Vec<usize>,
    pub tamer_lr: f64,
    pub tamer_epsilon: f64,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// End a run early once an evaluation reaches this mean return.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_return: Option<f64>,
    /// When false, `wall_ms` is written as 0 so outputs are byte-reproducible.
    pub record_wall_time: bool,
}

mod budget_serde {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Count(u64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(b: &Budget, s: S) -> Result<S::Ok, S::Error> {
        match b {
            Budget::Unlimited => Repr::Word("unlimited".into()),
            Budget::Limited(n) => Repr::Count(*n),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Budget, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Count(n) => Ok(Budget::Limited(n)),
            Repr::Word(w) if w == "unlimited" => Ok(Budget::Unlimited),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "budget must be a count or \"unlimited\", got {w:?}"
            ))),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_domain(Domain::CartPole)
    }
}

impl ExperimentConfig {
    /// Per-domain defaults.
    pub fn for_domain(domain: Domain) -> Self {
        let cart_pole = domain == Domain::CartPole;
        Self {
            domain,
            algorithm: Algorithm::CandereCoach,
            active_relabel: true,
            online_training: true,
            candere_preload: true,
            p_noise: 0.0,
            budget: Budget::Limited(if cart_pole { 1000 } else { 500 }),
            frequency: 10,
            pretrain_size: if cart_pole { 25 } else { 12 },
            pretrain_noise: 0.0,
            pretrain_epochs: 100,
            pretrain_lr: 1e-3,
            pretrain_loss: if cart_pole {
                PretrainLoss::CrossEntropy
            } else {
                PretrainLoss::Focal
            },
            focal_gamma: 2.0,
            batch_size: 256,
            buffer_capacity: None,
            policy_hidden: vec![1024, 1024],
            policy_lr: 5e-5,
            trace_window: 10,
            trace_decay: 0.35,
            classifier_hidden: vec![64, 64],
            classifier_lr: if cart_pole { 0.01 } else { 0.001 },
            relabel_rate: if cart_pole { 0.6 } else { 0.8 },
            relabel_base: RelabelBase::Remainder,
            tamer_hidden: vec![1024, 1024],
            tamer_lr: 5e-5,
            tamer_epsilon: 0.1,
            seeds: (0..10).collect(),
            total_steps: if cart_pole { 20_000 } else { 10_000 },
            eval_interval: 1000,
            eval_episodes: 5,
            stop_return: None,
            record_wall_time: true,
        }
    }

    /// Same defaults with the narrower 64-unit learner networks and a
    /// policy learning rate scaled for them.
    pub fn reduced(domain: Domain) -> Self {
        Self {
            policy_hidden: vec![64, 64],
            tamer_hidden: vec![64, 64],
            policy_lr: 1e-4,
            ..Self::for_domain(domain)
        }
    }

    /// Field-level validation; every problem is reported, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, field: &'static str, message: &str| {
            if !ok {
                errors.push(FieldError {
                    field,
                    message: message.to_string(),
                });
            }
        };
        check((0.0..0.5).contains(&self.p_noise), "p_noise", "must lie in [0, 0.5)");
        check(
            (0.0..0.5).contains(&self.pretrain_noise),
            "pretrain_noise",
            "must lie in [0, 0.5)",
        );
        check(self.budget != Budget::Limited(0), "budget", "must be positive or \"unlimited\"");
        check(self.frequency > 0, "frequency", "must be positive");
        check(self.batch_size > 0, "batch_size", "must be positive");
        check(self.buffer_capacity != Some(0), "buffer_capacity", "must be positive");
        check(self.total_steps > 0, "total_steps", "must be positive");
        check(self.eval_interval > 0, "eval_interval", "must be positive");
        check(self.eval_episodes > 0, "eval_episodes", "must be positive");
        check(!self.seeds.is_empty(), "seeds", "must list at least one seed");
        check(self.trace_window > 0, "trace_window", "must be positive");
        check((0.0..=1.0).contains(&self.trace_decay), "trace_decay", "must lie in [0, 1]");
        check((0.0..=1.0).contains(&self.relabel_rate), "relabel_rate", "must lie in [0, 1]");
        check((0.0..=1.0).contains(&self.tamer_epsilon), "tamer_epsilon", "must lie in [0, 1]");
        check(self.focal_gamma >= 0.0, "focal_gamma", "must be non-negative");
        for (field, rate) in [
            ("policy_lr", self.policy_lr),
            ("classifier_lr", self.classifier_lr),
            ("pretrain_lr", self.pretrain_lr),
            ("tamer_lr", self.tamer_lr),
        ] {
            check(rate > 0.0 && rate.is_finite(), field, "must be positive");
        }
        for (field, dims) in [
            ("policy_hidden", &self.policy_hidden),
            ("classifier_hidden", &self.classifier_hidden),
            ("tamer_hidden", &self.tamer_hidden),
        ] {
            check(!dims.contains(&0), field, "layer widths must be positive");
        }
        check(self.pretrain_size > 0, "pretrain_size", "must be positive");
        if self.algorithm.uses_classifier() {
            check(self.pretrain_epochs > 0, "pretrain_epochs", "must be positive");
            let keep = crate::noise_filter::clean_count(self.batch_size, 1.0 - self.p_noise);
            check(keep > 0, "batch_size", "remember rate keeps no tuple of a batch");
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// Layers the keys of a flat TOML document, then `key=value` overrides,
    /// over the defaults of the selected domain.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match file {
            Some(text) => text
                .parse::<toml::Table>()
                .map_err(|e| ConfigError::Parse(e.to_string()))?,
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(item.clone()))?;
            table.insert(key.trim().to_string(), parse_override(raw.trim()));
        }
        let domain = match table.get("domain") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| ConfigError::Parse("domain must be a string".into()))?
                .parse::<Domain>()
                .map_err(ConfigError::Parse)?,
            None => Domain::CartPole,
        };
        let defaults = toml::Table::try_from(Self::for_domain(domain)).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut merged = defaults;
        for (k, v) in table {
            merged.insert(k, v);
        }
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_override(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
