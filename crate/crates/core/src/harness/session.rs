//! Live teaching session: a transport-independent state machine that turns
//! v=1 JSON client messages into feedback and emits frames and metrics.
//!
//! Frames are shown on every `frequency`-th step, paused by default. A
//! paused session sits between acting and learning, so feedback on the
//! displayed frame joins the very next update, exactly as with the
//! scripted teacher.

use crate::agents::training::{PendingStep, TrainError, Trainer};
use crate::environments::Observation;
use crate::feedback::Feedback;
use crate::harness::ExperimentConfig;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Client to server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Feedback { v: u32, value: Feedback, step_ref: u64 },
    Pause { v: u32 },
    Resume { v: u32 },
    StepOnce { v: u32 },
}

impl ClientMessage {
    fn version(&self) -> u32 {
        match self {
            ClientMessage::Feedback { v, .. }
            | ClientMessage::Pause { v }
            | ClientMessage::Resume { v }
            | ClientMessage::StepOnce { v } => *v,
        }
    }
}

/// Server to client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame {
        v: u32,
        step: u64,
        render: serde_json::Value,
        action: usize,
        action_name: String,
        paused: bool,
    },
    Metrics {
        v: u32,
        step: u64,
        eval_return_mean: f64,
        pure_ratio: Option<f64>,
        budget_used: u64,
    },
    /// Feedback stored for the frame `step_ref`; `accepted` is false once
    /// the budget is spent.
    Ack { v: u32, step_ref: u64, accepted: bool },
    /// Feedback for a frame other than the newest one, dropped.
    Stale { v: u32, step_ref: u64, dropped: u64 },
    Error { v: u32, message: String },
    Done { v: u32, step: u64 },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Paused,
    Running,
}

/// Shown frame awaiting feedback.
struct Shown {
    pending: PendingStep,
    rated: bool,
}

pub struct LiveSession {
    trainer: Trainer,
    mode: Mode,
    shown: Option<Shown>,
    dropped: u64,
    done: bool,
}

impl LiveSession {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, TrainError> {
        let mut trainer = Trainer::new(config, seed)?;
        trainer.set_live(true);
        Ok(Self {
            trainer,
            mode: Mode::Paused,
            shown: None,
            dropped: 0,
            done: false,
        })
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }

    pub fn is_paused(&self) -> bool {
        self.mode == Mode::Paused
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Observation behind the frame currently on screen.
    pub fn shown_observation(&self) -> Option<&Observation> {
        self.shown.as_ref().map(|s| &s.pending.observation)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Runs until the next frame (or the end of training) and returns what
    /// the client should see.
    pub fn next_frame(&mut self) -> Result<Vec<ServerMessage>, TrainError> {
        let mut out = Vec::new();
        if self.done {
            return Ok(out);
        }
        if self.shown.take().is_some() {
            self.finish_step(&mut out)?;
        }
        let frequency = self.trainer.config().frequency;
        while !self.trainer.is_finished() {
            let pending = self.trainer.act()?;
            if pending.step % frequency == 0 {
                out.push(ServerMessage::Frame {
                    v: PROTOCOL_VERSION,
                    step: pending.step,
                    render: pending.render.clone().unwrap_or(serde_json::Value::Null),
                    action: pending.action,
                    action_name: self.trainer.env().action_name(pending.action).to_string(),
                    paused: self.mode == Mode::Paused,
                });
                self.shown = Some(Shown { pending, rated: false });
                return Ok(out);
            }
            self.finish_step(&mut out)?;
        }
        self.done = true;
        out.push(ServerMessage::Done {
            v: PROTOCOL_VERSION,
            step: self.trainer.step(),
        });
        Ok(out)
    }

    fn finish_step(&mut self, out: &mut Vec<ServerMessage>) -> Result<(), TrainError> {
        let t = self.trainer.learn()?;
        if let Some(m) = t.metrics {
            out.push(ServerMessage::Metrics {
                v: PROTOCOL_VERSION,
                step: m.step,
                eval_return_mean: m.eval_return_mean,
                pure_ratio: m.pure_ratio,
                budget_used: m.budget_used,
            });
        }
        Ok(())
    }

    /// Handles one raw client message. Malformed input yields an error
    /// reply and leaves the session untouched.
    pub fn handle_text(&mut self, text: &str) -> Result<Vec<ServerMessage>, TrainError> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) if msg.version() != PROTOCOL_VERSION => Ok(vec![error(format!(
                "unsupported protocol version {}",
                msg.version()
            ))]),
            Ok(msg) => self.handle(msg),
            Err(e) => Ok(vec![error(format!("malformed message: {e}"))]),
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>, TrainError> {
        match msg {
            ClientMessage::Feedback { value, step_ref, .. } => Ok(vec![self.feedback(value, step_ref)]),
            ClientMessage::Pause { .. } => {
                self.mode = Mode::Paused;
                Ok(Vec::new())
            }
            ClientMessage::Resume { .. } => {
                self.mode = Mode::Running;
                Ok(Vec::new())
            }
            ClientMessage::StepOnce { .. } => {
                if self.mode == Mode::Running {
                    return Ok(vec![error("step_once is only valid while paused".into())]);
                }
                self.next_frame()
            }
        }
    }

    fn feedback(&mut self, value: Feedback, step_ref: u64) -> ServerMessage {
        match &mut self.shown {
            Some(shown) if shown.pending.step == step_ref && !shown.rated => {
                shown.rated = true;
                let p = &shown.pending;
                let accepted = self
                    .trainer
                    .submit_feedback(p.observation.clone(), p.action, value, p.step);
                ServerMessage::Ack {
                    v: PROTOCOL_VERSION,
                    step_ref,
                    accepted,
                }
            }
            _ => {
                self.dropped += 1;
                ServerMessage::Stale {
                    v: PROTOCOL_VERSION,
                    step_ref,
                    dropped: self.dropped,
                }
            }
        }
    }

    /// The client went away: stop stepping until a new instruction.
    pub fn disconnect(&mut self) {
        self.mode = Mode::Paused;
    }

    /// True while the transport should keep producing frames on its own.
    pub fn wants_frames(&self) -> bool {
        self.mode == Mode::Running && !self.done
    }
}

fn error(message: String) -> ServerMessage {
    ServerMessage::Error {
        v: PROTOCOL_VERSION,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Algorithm;
    use crate::environments::Domain;

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            algorithm: Algorithm::DeepCoach,
            policy_hidden: vec![8],
            batch_size: 4,
            pretrain_size: 2,
            total_steps: 60,
            eval_interval: 20,
            eval_episodes: 1,
            record_wall_time: false,
            ..ExperimentConfig::for_domain(Domain::CartPole)
        }
    }

    fn frame_step(msgs: &[ServerMessage]) -> Option<u64> {
        msgs.iter().find_map(|m| match m {
            ServerMessage::Frame { step, .. } => Some(*step),
            _ => None,
        })
    }

    #[test]
    fn first_frame_is_paused_on_a_gated_step() {
        let mut s = LiveSession::new(&config(), 0).unwrap();
        let msgs = s.next_frame().unwrap();
        assert_eq!(frame_step(&msgs), Some(10));
        assert!(matches!(msgs.last(), Some(ServerMessage::Frame { paused: true, .. })));
    }

    #[test]
    fn stale_feedback_is_counted() {
        let mut s = LiveSession::new(&config(), 0).unwrap();
        s.next_frame().unwrap();
        let reply = s.handle_text(r#"{"type":"feedback","v":1,"value":1,"step_ref":3}"#).unwrap();
        assert_eq!(reply, vec![ServerMessage::Stale { v: 1, step_ref: 3, dropped: 1 }]);
        let reply = s.handle_text(r#"{"type":"feedback","v":1,"value":-1,"step_ref":10}"#).unwrap();
        assert_eq!(reply, vec![ServerMessage::Ack { v: 1, step_ref: 10, accepted: true }]);
        let again = s.handle_text(r#"{"type":"feedback","v":1,"value":1,"step_ref":10}"#).unwrap();
        assert!(matches!(again[0], ServerMessage::Stale { dropped: 2, .. }));
        assert_eq!(s.trainer().budget_used(), 1);
    }

    #[test]
    fn malformed_messages_get_error_replies() {
        let mut s = LiveSession::new(&config(), 0).unwrap();
        for bad in ["not json", r#"{"type":"feedback","v":1,"value":3,"step_ref":1}"#, r#"{"type":"dance","v":1}"#, r#"{"type":"pause","v":2}"#] {
            let reply = s.handle_text(bad).unwrap();
            assert!(matches!(reply.as_slice(), [ServerMessage::Error { .. }]), "{bad}");
        }
    }

    #[test]
    fn step_once_emits_exactly_one_frame() {
        let mut s = LiveSession::new(&config(), 0).unwrap();
        s.next_frame().unwrap();
        let msgs = s.handle_text(r#"{"type":"step_once","v":1}"#).unwrap();
        let frames = msgs.iter().filter(|m| matches!(m, ServerMessage::Frame { .. })).count();
        assert_eq!(frames, 1);
        assert_eq!(frame_step(&msgs), Some(20));
        assert!(!msgs.iter().any(|m| matches!(m, ServerMessage::Metrics { .. })));
    }

    #[test]
    fn runs_to_completion() {
        let mut s = LiveSession::new(&config(), 0).unwrap();
        let mut all = Vec::new();
        while !s.is_done() {
            all.extend(s.next_frame().unwrap());
        }
        assert!(matches!(all.last(), Some(ServerMessage::Done { step: 60, .. })));
        let metric_steps: Vec<u64> = all
            .iter()
            .filter_map(|m| match m {
                ServerMessage::Metrics { step, .. } => Some(*step),
                _ => None,
            })
            .collect();
        assert_eq!(metric_steps, vec![20, 40, 60]);
    }
}
