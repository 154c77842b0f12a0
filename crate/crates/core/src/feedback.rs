use serde::{Deserialize, Serialize};
use std::fmt;

/// Binary evaluative feedback on a single state-action pair.
///
/// Class indices are fixed everywhere: `Negative` is class 0 and `Positive`
/// is class 1. Serialized as the integers `-1` / `1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Feedback {
    Negative,
    Positive,
}

impl Feedback {
    pub const ALL: [Feedback; 2] = [Feedback::Negative, Feedback::Positive];

    pub fn class_index(self) -> usize {
        match self {
            Feedback::Negative => 0,
            Feedback::Positive => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Feedback::Negative),
            1 => Some(Feedback::Positive),
            _ => None,
        }
    }

    /// `-1.0` or `+1.0`.
    pub fn value(self) -> f64 {
        match self {
            Feedback::Negative => -1.0,
            Feedback::Positive => 1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Feedback::Negative => Feedback::Positive,
            Feedback::Positive => Feedback::Negative,
        }
    }

    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Feedback::Positive
        } else {
            Feedback::Negative
        }
    }
}

impl From<Feedback> for i8 {
    fn from(f: Feedback) -> i8 {
        match f {
            Feedback::Negative => -1,
            Feedback::Positive => 1,
        }
    }
}

impl TryFrom<i8> for Feedback {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Feedback::Negative),
            1 => Ok(Feedback::Positive),
            other => Err(format!("feedback must be -1 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Feedback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feedback::Negative => write!(f, "-1"),
            Feedback::Positive => write!(f, "+1"),
        }
    }
}
