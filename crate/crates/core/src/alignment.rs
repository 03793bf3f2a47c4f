//! Alignment factor (AF) bookkeeping and the evaluators that decide how
//! much a reply or meeting moves it.
//!
//! AF lives in `[0.01, 1.00]`, starts at 0.30 for every (agent, task)
//! assignment and scales worked hours into effective progress.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{extract_json_object, ChatMessage, ModelAdapter};
use crate::comm::{Message, MessageType};
use crate::model::{AgentId, TaskId};
use crate::prompts::evaluation_prompt;
use crate::task_graph::TaskNode;

pub const AF_MIN: f64 = 0.01;
pub const AF_MAX: f64 = 1.00;
pub const AF_INIT: f64 = 0.30;
/// Normalized deltas are clamped to this range. The floor keeps a single
/// decrease from the initial 0.30 above the AF floor.
pub const DELTA_MIN: f64 = -0.29;
pub const DELTA_MAX: f64 = 0.50;

pub const HELP_GAIN: f64 = 0.15;
pub const CLARIFICATION_GAIN: f64 = 0.10;
pub const MEETING_GAIN: f64 = 0.27;
pub const PROGRESS_GAIN: f64 = 0.0;

pub fn clamp_af(x: f64) -> f64 {
    x.clamp(AF_MIN, AF_MAX)
}

pub fn clamp_delta(d: f64) -> f64 {
    d.clamp(DELTA_MIN, DELTA_MAX)
}

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("already initialized: ({0}, {1})")]
    AlreadyInitialized(AgentId, TaskId),
    #[error("unknown assignment: ({0}, {1})")]
    UnknownAssignment(AgentId, TaskId),
    #[error("contract violation: af {0} outside [0.01, 1.00]")]
    AfOutOfRange(f64),
    #[error("contract violation: negative hours {0}")]
    NegativeHours(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfUpdate {
    pub step: u32,
    pub agent_id: AgentId,
    pub task_id: TaskId,
    pub old_af: f64,
    pub delta: f64,
    pub new_af: f64,
    pub cause: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentState {
    pub values: BTreeMap<(AgentId, TaskId), f64>,
    pub history: Vec<AfUpdate>,
}

impl AlignmentState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn init_alignment(&mut self, agent: &AgentId, task: &TaskId) -> Result<f64, AlignmentError> {
        let key = (agent.clone(), task.clone());
        if self.values.contains_key(&key) {
            return Err(AlignmentError::AlreadyInitialized(agent.clone(), task.clone()));
        }
        self.values.insert(key, AF_INIT);
        Ok(AF_INIT)
    }

    pub fn get(&self, agent: &AgentId, task: &TaskId) -> Option<f64> {
        self.values.get(&(agent.clone(), task.clone())).copied()
    }

    /// `new = min(1, max(0.01, old + delta))`, recorded in the history.
    pub fn apply_delta(
        &mut self,
        agent: &AgentId,
        task: &TaskId,
        delta: f64,
        step: u32,
        cause: impl Into<String>,
    ) -> Result<AfUpdate, AlignmentError> {
        let key = (agent.clone(), task.clone());
        let slot =
            self.values.get_mut(&key).ok_or_else(|| AlignmentError::UnknownAssignment(agent.clone(), task.clone()))?;
        let old_af = *slot;
        let new_af = clamp_af(old_af + delta);
        *slot = new_af;
        let rec = AfUpdate {
            step,
            agent_id: agent.clone(),
            task_id: task.clone(),
            old_af,
            delta,
            new_af,
            cause: cause.into(),
        };
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Rebuilds the value map from initial values plus the update history.
    pub fn replay(&self) -> BTreeMap<(AgentId, TaskId), f64> {
        let mut vals: BTreeMap<(AgentId, TaskId), f64> = self.values.keys().map(|k| (k.clone(), AF_INIT)).collect();
        for h in &self.history {
            let v = vals.entry((h.agent_id.clone(), h.task_id.clone())).or_insert(AF_INIT);
            *v = clamp_af(*v + h.delta);
        }
        vals
    }
}

/// Worked hours scaled by alignment.
pub fn effective_progress(hours: f64, af: f64) -> Result<f64, AlignmentError> {
    if !(AF_MIN..=AF_MAX).contains(&af) {
        return Err(AlignmentError::AfOutOfRange(af));
    }
    if hours < 0.0 || hours.is_nan() {
        return Err(AlignmentError::NegativeHours(hours));
    }
    Ok(hours * af)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEvaluation {
    pub delta: f64,
    pub reasoning: String,
}

/// Default gain for an interaction outcome. `root_type` is the kind of the
/// message that opened the thread (or the meeting message for meetings);
/// `resolved` says whether the interaction settled it.
pub fn rule_based_delta(root_type: MessageType, resolved: bool) -> DeltaEvaluation {
    let (delta, why) = match (root_type, resolved) {
        (MessageType::HelpRequest, true) => (HELP_GAIN, "help request resolved"),
        (MessageType::NeedClarification, true) => (CLARIFICATION_GAIN, "clarification resolved"),
        (MessageType::MeetingInvite | MessageType::MeetingStart, true) => (MEETING_GAIN, "meeting held"),
        (MessageType::ProgressUpdate, _) => (PROGRESS_GAIN, "progress update"),
        _ => (0.0, "unresolved exchange"),
    };
    DeltaEvaluation { delta, reasoning: why.to_string() }
}

/// What an evaluator sees when a reply reaches the agent who asked.
pub struct EvalRequest<'a> {
    pub agent: &'a AgentId,
    pub task: &'a TaskNode,
    pub current_af: f64,
    pub root_type: MessageType,
    pub original_request: Option<&'a Message>,
    pub reply: &'a Message,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluated {
    pub evaluation: DeltaEvaluation,
    pub warning: Option<String>,
}

pub trait DeltaEvaluator: Send + Sync {
    fn name(&self) -> &str;

    fn evaluate(&self, req: &EvalRequest<'_>) -> Evaluated;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RuleBasedEvaluator;

impl DeltaEvaluator for RuleBasedEvaluator {
    fn name(&self) -> &str {
        "rule_based"
    }

    fn evaluate(&self, req: &EvalRequest<'_>) -> Evaluated {
        Evaluated { evaluation: rule_based_delta(req.root_type, req.reply.resolves), warning: None }
    }
}

pub struct LlmEvaluator {
    adapter: Arc<dyn ModelAdapter>,
}

impl LlmEvaluator {
    pub fn new(adapter: Arc<dyn ModelAdapter>) -> Self {
        Self { adapter }
    }
}

/// Turns a model response into a delta relative to `old_af`. The returned
/// `new_alignment_factor` is authoritative; `change` is ignored.
pub fn normalize_evaluation(text: &str, old_af: f64) -> Option<DeltaEvaluation> {
    let v = extract_json_object(text)?;
    let new_af = v.get("new_alignment_factor")?.as_f64()?;
    if !new_af.is_finite() {
        return None;
    }
    let reasoning = v.get("reasoning").and_then(|r| r.as_str()).unwrap_or_default().to_string();
    Some(DeltaEvaluation { delta: clamp_delta(clamp_af(new_af) - old_af), reasoning })
}

impl DeltaEvaluator for LlmEvaluator {
    fn name(&self) -> &str {
        "llm"
    }

    fn evaluate(&self, req: &EvalRequest<'_>) -> Evaluated {
        let prompt = evaluation_prompt(req.task, req.current_af, req.reply, req.original_request);
        let fallback = |why: String| Evaluated {
            evaluation: rule_based_delta(req.root_type, req.reply.resolves),
            warning: Some(why),
        };
        match self.adapter.complete(&[ChatMessage::user(prompt)]) {
            Ok(text) => match normalize_evaluation(&text, req.current_af) {
                Some(evaluation) => Evaluated { evaluation, warning: None },
                None => fallback(format!("malformed evaluation response: {}", truncate(&text, 120))),
            },
            Err(e) => fallback(format!("evaluation adapter failure: {e}")),
        }
    }
}

pub(crate) fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids() -> (AgentId, TaskId) {
        (AgentId::from("W1"), TaskId::from("T1.1"))
    }

    #[test]
    fn init_and_duplicate() {
        let (a, t) = ids();
        let mut s = AlignmentState::new();
        assert_eq!(s.init_alignment(&a, &t), Ok(0.30));
        assert!(matches!(s.init_alignment(&a, &t), Err(AlignmentError::AlreadyInitialized(..))));
        for w in ["W1", "W2", "W3", "W4"] {
            let _ = s.init_alignment(&AgentId::from(w), &TaskId::from("T2"));
        }
        assert_eq!(s.values.len(), 5);
        assert!(s.values.values().all(|&v| v == 0.30));
    }

    #[test]
    fn delta_examples() {
        let (a, t) = ids();
        let mut s = AlignmentState::new();
        s.init_alignment(&a, &t).unwrap();
        assert!((s.apply_delta(&a, &t, 0.15, 1, "m1").unwrap().new_af - 0.45).abs() < 1e-15);

        s.values.insert((a.clone(), t.clone()), 0.90);
        assert_eq!(s.apply_delta(&a, &t, 0.50, 2, "m2").unwrap().new_af, 1.00);
        s.values.insert((a.clone(), t.clone()), 0.05);
        assert_eq!(s.apply_delta(&a, &t, -0.20, 3, "m3").unwrap().new_af, 0.01);

        let err = s.apply_delta(&AgentId::from("W9"), &t, 0.1, 4, "m4").unwrap_err();
        assert!(err.to_string().starts_with("unknown assignment"));
    }

    #[test]
    fn zero_delta_is_identity() {
        let (a, t) = ids();
        let mut s = AlignmentState::new();
        s.init_alignment(&a, &t).unwrap();
        assert_eq!(s.apply_delta(&a, &t, 0.0, 0, "x").unwrap().new_af, 0.30);
    }

    #[test]
    fn effective_progress_examples() {
        assert!((effective_progress(0.25, 0.30).unwrap() - 0.075).abs() < 1e-15);
        assert_eq!(effective_progress(3.5, 1.0).unwrap(), 3.5);
        assert_eq!(effective_progress(0.0, 0.4).unwrap(), 0.0);
        assert!(effective_progress(1.0, 1.2).is_err());
        assert!(effective_progress(1.0, 0.0).is_err());
        assert!(effective_progress(-1.0, 0.5).is_err());
    }

    #[test]
    fn rule_based_table() {
        assert_eq!(rule_based_delta(MessageType::HelpRequest, true).delta, 0.15);
        assert_eq!(rule_based_delta(MessageType::NeedClarification, true).delta, 0.10);
        assert_eq!(rule_based_delta(MessageType::MeetingInvite, true).delta, 0.27);
        assert_eq!(rule_based_delta(MessageType::ProgressUpdate, true).delta, 0.0);
        assert_eq!(rule_based_delta(MessageType::HelpRequest, false).delta, 0.0);
    }

    #[test]
    fn normalization_uses_new_af() {
        let d =
            normalize_evaluation(r#"{"new_alignment_factor": 0.45, "change": 0.9, "reasoning": "ok"}"#, 0.30).unwrap();
        assert!((d.delta - 0.15).abs() < 1e-12);
        assert_eq!(d.reasoning, "ok");

        let d = normalize_evaluation(r#"{"new_alignment_factor": 1.7}"#, 0.30).unwrap();
        assert_eq!(d.delta, 0.50);

        let d = normalize_evaluation(r#"{"new_alignment_factor": -3}"#, 0.30).unwrap();
        assert!((d.delta - (-0.29)).abs() < 1e-12);

        assert!(normalize_evaluation("garbage", 0.3).is_none());
        assert!(normalize_evaluation(r#"{"change": 0.1}"#, 0.3).is_none());
    }

    #[test]
    fn replay_matches_state() {
        let (a, t) = ids();
        let mut s = AlignmentState::new();
        s.init_alignment(&a, &t).unwrap();
        for (i, d) in [0.15, 0.5, -0.29, 0.27, 0.5, 0.5].iter().enumerate() {
            s.apply_delta(&a, &t, *d, i as u32, "x").unwrap();
        }
        assert_eq!(s.replay(), s.values);
    }
}
