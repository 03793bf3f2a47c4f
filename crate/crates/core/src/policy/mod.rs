//! Per-agent decision making. Every step an idle agent receives a
//! [`PolicyContext`] and its [`Policy`] answers with one of six intentions;
//! the scheduler turns that into a concrete action.

mod fixed_steps;
mod heuristic;
mod llm;
mod no_comm;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use fixed_steps::{FixedStepsPolicy, FIXED_PERIOD};
pub use heuristic::HeuristicPolicy;
pub use llm::LlmPolicy;
pub use no_comm::NoCommPolicy;

use crate::comm::{Channel, MeetingId, Message, MessageId};
use crate::model::{skill_match_score, AgentId, AgentProfile, Role, Skill, TaskId};
use crate::scheduler::ActionKind;
use crate::task_graph::TaskNode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntentionKind {
    ContinueTask,
    CheckMessages,
    RequestHelp,
    NeedClarification,
    ReportProgress,
    ScheduleMeeting,
}

impl IntentionKind {
    pub const ALL: [IntentionKind; 6] = [
        IntentionKind::ContinueTask,
        IntentionKind::CheckMessages,
        IntentionKind::RequestHelp,
        IntentionKind::NeedClarification,
        IntentionKind::ReportProgress,
        IntentionKind::ScheduleMeeting,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            IntentionKind::ContinueTask => "CONTINUE_TASK",
            IntentionKind::CheckMessages => "CHECK_MESSAGES",
            IntentionKind::RequestHelp => "REQUEST_HELP",
            IntentionKind::NeedClarification => "NEED_CLARIFICATION",
            IntentionKind::ReportProgress => "REPORT_PROGRESS",
            IntentionKind::ScheduleMeeting => "SCHEDULE_MEETING",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL.into_iter().find(|k| k.as_str().eq_ignore_ascii_case(s))
    }

    /// Intentions that produce an outbound message.
    pub fn is_communicating(&self) -> bool {
        matches!(
            self,
            IntentionKind::RequestHelp
                | IntentionKind::NeedClarification
                | IntentionKind::ReportProgress
                | IntentionKind::ScheduleMeeting
        )
    }
}

impl fmt::Display for IntentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intention {
    pub kind: IntentionKind,
    pub reasoning: String,
    /// Task the intention concerns, when there is one.
    pub about_task: Option<TaskId>,
}

impl Intention {
    pub fn new(kind: IntentionKind, about_task: Option<TaskId>, reasoning: impl Into<String>) -> Self {
        Self { kind, reasoning: reasoning.into(), about_task }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub intention: Intention,
    pub warning: Option<String>,
}

impl From<Intention> for Decision {
    fn from(intention: Intention) -> Self {
        Self { intention, warning: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composed {
    pub text: String,
    pub warning: Option<String>,
}

impl From<String> for Composed {
    fn from(text: String) -> Self {
        Self { text, warning: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentView {
    pub task: TaskNode,
    pub root: TaskId,
    pub af: f64,
    pub ready: bool,
    pub hours_worked: f64,
    pub work_steps_since_gain: u32,
    pub clarifications_asked: u32,
    pub help_requests: u32,
    /// How many report milestones have already been announced.
    pub milestones_reported: usize,
    pub meeting_called: bool,
    /// Other agents whose subtasks wait on this one.
    pub blocked_collaborators: Vec<AgentId>,
}

impl AssignmentView {
    /// Wall-clock hours still needed at the current alignment.
    pub fn remaining_wall_hours(&self) -> f64 {
        self.task.remaining_hours() / self.af
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PendingKind {
    /// An open thread in which this agent owes the next reply.
    Reply { thread: MessageId },
    /// A meeting invite not yet answered.
    Rsvp { meeting: MeetingId },
    /// A meeting this agent attends is starting now.
    MeetingStart { meeting: MeetingId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub kind: PendingKind,
    pub message: Message,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamMember {
    pub agent_id: AgentId,
    pub role: Role,
    pub skills: Vec<Skill>,
    pub busy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LastAction {
    pub kind: ActionKind,
    pub target: String,
    pub step: u32,
    pub intention: Option<IntentionKind>,
}

/// Everything an agent knows at the start of its decision. Contains no
/// message that has not been delivered yet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub agent: AgentProfile,
    /// Sorted by task id.
    pub assignments: Vec<AssignmentView>,
    /// Messages delivered since the agent last decided.
    pub inbox: Vec<Message>,
    /// Items that call for CHECK_MESSAGES, oldest first.
    pub pending: Vec<PendingItem>,
    pub team: Vec<TeamMember>,
    pub step: u32,
    pub hours_per_step: f64,
    pub last_action: Option<LastAction>,
    /// Threads this agent opened that still await an answer.
    pub open_requests: Vec<MessageId>,
    pub seed: u64,
}

impl PolicyContext {
    /// Lowest-id assignment that can be worked on now.
    pub fn active(&self) -> Option<&AssignmentView> {
        self.assignments.iter().find(|a| a.ready)
    }

    pub fn assignment(&self, task: &TaskId) -> Option<&AssignmentView> {
        self.assignments.iter().find(|a| &a.task.task_id == task)
    }

    pub fn manager(&self) -> Option<&TeamMember> {
        self.team.iter().find(|m| m.role == Role::Manager)
    }

    pub fn has_pending_meeting(&self) -> bool {
        self.pending.iter().any(|p| matches!(p.kind, PendingKind::MeetingStart { .. } | PendingKind::Rsvp { .. }))
    }

    pub fn has_unanswered_request(&self) -> bool {
        self.pending.iter().any(|p| matches!(p.kind, PendingKind::Reply { .. }))
    }

    pub fn is_manager(&self) -> bool {
        self.agent.role == Role::Manager
    }
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn decide(&self, ctx: &PolicyContext) -> Decision;

    fn compose(&self, ctx: &PolicyContext, intention: &Intention, recipients: &[AgentId]) -> Composed {
        compose_template(ctx, intention, recipients).into()
    }

    fn compose_reply(&self, ctx: &PolicyContext, request: &Message) -> Composed {
        reply_template(ctx, request).into()
    }

    /// Whether this agent's reply settles the request it answers.
    fn resolves(&self, _ctx: &PolicyContext, _request: &Message) -> bool {
        true
    }
}

/// Who a communicating intention is addressed to.
pub fn select_recipients(ctx: &PolicyContext, intention: &Intention) -> Vec<AgentId> {
    let me = &ctx.agent.agent_id;
    let manager = ctx.manager().map(|m| m.agent_id.clone());
    let to_manager = || manager.iter().filter(|m| *m != me).cloned().collect::<Vec<_>>();
    match intention.kind {
        IntentionKind::RequestHelp => {
            let required = intention
                .about_task
                .as_ref()
                .and_then(|t| ctx.assignment(t))
                .map(|a| a.task.required_skills.clone())
                .unwrap_or_default();
            let score = |m: &TeamMember| {
                let p = AgentProfile {
                    agent_id: m.agent_id.clone(),
                    name: String::new(),
                    role: m.role,
                    skills: m.skills.iter().cloned().collect(),
                    busy_until_step: 0,
                };
                skill_match_score(&p, &required)
            };
            // team is sorted by id, so the first strict maximum wins ties
            let mut best: Option<(&TeamMember, f64)> = None;
            for m in ctx.team.iter().filter(|m| &m.agent_id != me && !m.busy && m.role != Role::Manager) {
                let s = score(m);
                if s > 0.0 && best.is_none_or(|(_, b)| s > b) {
                    best = Some((m, s));
                }
            }
            match best {
                Some((m, _)) => vec![m.agent_id.clone()],
                None => to_manager(),
            }
        }
        IntentionKind::NeedClarification | IntentionKind::ReportProgress => to_manager(),
        IntentionKind::ScheduleMeeting => {
            let mut out = to_manager();
            if let Some(a) = intention.about_task.as_ref().and_then(|t| ctx.assignment(t)) {
                for c in &a.blocked_collaborators {
                    if c != me && !out.contains(c) {
                        out.push(c.clone());
                    }
                }
            }
            out.sort();
            out
        }
        IntentionKind::ContinueTask | IntentionKind::CheckMessages => Vec::new(),
    }
}

pub fn select_channel(intention: &Intention, content_words: usize, short_words: usize) -> Channel {
    match intention.kind {
        IntentionKind::NeedClarification => Channel::Chat,
        IntentionKind::RequestHelp if content_words < short_words => Channel::Chat,
        IntentionKind::RequestHelp => Channel::Email,
        IntentionKind::ScheduleMeeting => Channel::Meeting,
        _ => Channel::Email,
    }
}

fn join_ids(ids: &[AgentId]) -> String {
    ids.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
}

/// Deterministic message body for a communicating intention.
pub fn compose_template(ctx: &PolicyContext, intention: &Intention, recipients: &[AgentId]) -> String {
    let me = &ctx.agent;
    let Some(a) = intention.about_task.as_ref().and_then(|t| ctx.assignment(t)) else {
        return format!("{} from {}: no task context.", intention.kind, me.agent_id);
    };
    let t = &a.task;
    let pct = t.progress() * 100.0;
    match intention.kind {
        IntentionKind::RequestHelp => {
            let gap: Vec<&str> =
                t.required_skills.iter().filter(|s| !me.skills.contains(*s)).map(|s| s.as_str()).collect();
            let gap = if gap.is_empty() { "depth on the required skills".to_string() } else { gap.join(", ") };
            format!(
                "Help request on {}: {}. Alignment is {:.2} after {:.2} h of work and progress is {:.0}%. \
                 Skill gap: {}. Difficulty: progress is slow relative to the {:.1} h estimate. \
                 Could you share concrete guidance, known pitfalls and the next steps you would take?",
                t.task_id, t.description, a.af, a.hours_worked, pct, gap, t.estimated_hours
            )
        }
        IntentionKind::NeedClarification => format!(
            "Clarification needed on {}: {}. Alignment is {:.2}. Please confirm the expected scope, \
             acceptance criteria and interfaces.",
            t.task_id, t.description, a.af
        ),
        IntentionKind::ReportProgress => format!(
            "Progress report on {}: {:.0}% complete ({:.2}/{:.2} h). Alignment {:.2}.",
            t.task_id,
            pct,
            t.accumulated_effective_hours.min(t.estimated_hours),
            t.estimated_hours,
            a.af
        ),
        IntentionKind::ScheduleMeeting => format!(
            "Meeting about {}: {}. Attendees {} are waiting on this work; let us agree on interfaces \
             and hand-off order.",
            t.task_id,
            t.description,
            join_ids(recipients)
        ),
        IntentionKind::ContinueTask | IntentionKind::CheckMessages => String::new(),
    }
}

pub fn reply_template(ctx: &PolicyContext, request: &Message) -> String {
    let task = request.about_task.as_ref().map(|t| t.as_str()).unwrap_or("the task");
    let skills: Vec<&str> = ctx.agent.skills.iter().map(|s| s.as_str()).collect();
    format!(
        "Re {} on {}: guidance from {} ({}). Suggested approach, relevant interfaces and a test \
         strategy are outlined; ping me if anything stays unclear.",
        request.message_type,
        task,
        ctx.agent.agent_id,
        skills.join(", ")
    )
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::task_graph::TaskStatus;
    use std::collections::BTreeSet;

    pub fn task(id: &str, hours: f64, skills: &[&str]) -> TaskNode {
        TaskNode {
            task_id: TaskId::from(id),
            parent_id: Some(TaskId::from("T1")),
            description: format!("subtask {id}"),
            estimated_hours: hours,
            required_skills: skills.iter().map(|s| s.to_string()).collect(),
            dependencies: BTreeSet::new(),
            assignee: Some(AgentId::from("W1")),
            accumulated_effective_hours: 0.0,
            status: TaskStatus::Ready,
            children: vec![],
        }
    }

    pub fn assignment(id: &str, hours: f64, skills: &[&str]) -> AssignmentView {
        AssignmentView {
            task: task(id, hours, skills),
            root: TaskId::from("T1"),
            af: 0.30,
            ready: true,
            hours_worked: 0.0,
            work_steps_since_gain: 0,
            clarifications_asked: 0,
            help_requests: 0,
            milestones_reported: 0,
            meeting_called: false,
            blocked_collaborators: vec![],
        }
    }

    pub fn member(id: &str, role: Role, skills: &[&str]) -> TeamMember {
        TeamMember {
            agent_id: AgentId::from(id),
            role,
            skills: skills.iter().map(|s| s.to_string()).collect(),
            busy: false,
        }
    }

    pub fn context(assignments: Vec<AssignmentView>) -> PolicyContext {
        PolicyContext {
            agent: AgentProfile::new("W1", Role::Worker, &["backend", "api"]),
            assignments,
            inbox: vec![],
            pending: vec![],
            team: vec![
                member("M1", Role::Manager, &["backend", "oauth"]),
                member("W1", Role::Worker, &["backend", "api"]),
                member("W2", Role::Worker, &["oauth", "testing"]),
                member("W3", Role::Worker, &["frontend"]),
                member("W5", Role::Worker, &["oauth"]),
            ],
            step: 1,
            hours_per_step: 0.25,
            last_action: None,
            open_requests: vec![],
            seed: 7,
        }
    }
}
