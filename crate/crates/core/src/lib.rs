//! Learning a task policy from noisy binary teacher feedback.
//!
//! A small classifier scores every replayed `(observation, action, feedback)`
//! tuple, keeps the low-loss ones as clean, flips the labels of the
//! highest-loss ones, and hands the filtered batch to a COACH or TAMER
//! learner. The crate also ships the two benchmark domains, a scripted
//! teacher, and an experiment harness.

pub mod agents;
pub mod environments;
pub mod feedback;
pub mod feedback_data;
pub mod harness;
pub mod noise_filter;
pub mod numerics;
pub mod teacher;

pub use feedback::Feedback;
