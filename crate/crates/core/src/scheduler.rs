//! The synchronized timestep engine.
//!
//! Each step runs the same phases in the same order:
//!
//! 1. deliver messages due this step and queue reply evaluations;
//! 2. build a context for every idle agent, in ascending agent id;
//! 3. ask the policy for an intention (optionally fanned out over threads);
//! 4. resolve intentions into actions;
//! 5. execute one step of every agent's action, in ascending agent id;
//! 6. apply queued alignment changes in ascending (agent, message) order;
//! 7. start meetings whose attendees are all free;
//! 8. advance the clock.
//!
//! A message produced in phase 5 of step `t` is delivered in phase 1 of
//! step `t + 1`, so no agent can read it in the step it was sent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{effective_progress, AlignmentState, DeltaEvaluator, EvalRequest, AF_INIT, MEETING_GAIN};
use crate::comm::{
    communication_cost, reply, schedule_meeting, word_count, Channel, CommBuffer, MeetingId, MeetingRecord,
    MeetingStatus, Message, MessageId, MessageType, Thread,
};
use crate::model::{hours_to_steps, AgentId, AgentProfile, Role, Scenario, SimClock, TaskId};
use crate::planner::{assign, Assignments, PlanError, Planner};
use crate::policy::{
    select_channel, select_recipients, AssignmentView, Decision, Intention, IntentionKind, LastAction, PendingItem,
    PendingKind, Policy, PolicyContext, TeamMember,
};
use crate::task_graph::TaskGraph;
use crate::trace::{EventPayload, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Work,
    Communicate,
    Reply,
    Meeting,
    Idle,
    /// The manager's decomposition and assignment at step 0.
    Plan,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Work => "work",
            ActionKind::Communicate => "communicate",
            ActionKind::Reply => "reply",
            ActionKind::Meeting => "meeting",
            ActionKind::Idle => "idle",
            ActionKind::Plan => "plan",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A message waiting for its producing action to finish.
#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub message: Message,
    pub cost_hours: f64,
    /// Present for meeting invites.
    pub meeting: Option<MeetingRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ActionPayload {
    Work(TaskId),
    Send(Box<Outgoing>),
    Rsvp(MeetingId),
    Meeting(MeetingId),
    Plan,
    Idle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActiveAction {
    pub kind: ActionKind,
    pub target: String,
    pub intention: Option<IntentionKind>,
    pub started: u32,
    pub duration: u32,
    /// Steps left including the current one.
    pub remaining: u32,
    pub payload: ActionPayload,
    reads: Vec<MessageId>,
}

impl ActiveAction {
    pub fn new(
        kind: ActionKind,
        target: impl Into<String>,
        intention: Option<IntentionKind>,
        started: u32,
        duration: u32,
        payload: ActionPayload,
    ) -> Self {
        let duration = duration.max(1);
        Self {
            kind,
            target: target.into(),
            intention,
            started,
            duration,
            remaining: duration,
            payload,
            reads: Vec::new(),
        }
    }

    fn idle(step: u32, intention: Option<IntentionKind>) -> Self {
        Self::new(ActionKind::Idle, "-", intention, step, 1, ActionPayload::Idle)
    }
}

/// Per-(agent, task) counters the policies reason about.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentStats {
    pub hours_worked: f64,
    pub work_steps_since_gain: u32,
    pub clarifications_asked: u32,
    pub help_requests: u32,
    pub milestones_reported: usize,
    pub meeting_called: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentRuntime {
    pub profile: AgentProfile,
    pub action: Option<ActiveAction>,
    /// Delivered messages the agent has not yet seen in a decision.
    pub inbox: Vec<Message>,
    /// Meetings whose invite arrived and is not yet answered.
    pub rsvp_pending: BTreeSet<MeetingId>,
    pub last_action: Option<LastAction>,
}

#[derive(Clone, Debug, PartialEq)]
enum DeltaSource {
    Reply { root_type: MessageType, original: Option<MessageId> },
    Meeting,
}

#[derive(Clone, Debug, PartialEq)]
struct QueuedDelta {
    agent: AgentId,
    task: TaskId,
    message: MessageId,
    source: DeltaSource,
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub clock: SimClock,
    /// Sorted by agent id.
    pub agents: Vec<AgentRuntime>,
    pub graph: TaskGraph,
    pub alignment: AlignmentState,
    pub buffer: CommBuffer,
    pub threads: BTreeMap<MessageId, Thread>,
    pub meetings: BTreeMap<MeetingId, MeetingRecord>,
    /// Every message sent so far.
    pub messages: BTreeMap<MessageId, Message>,
    pub assignments: Assignments,
    pub stats: BTreeMap<(AgentId, TaskId), AssignmentStats>,
    pub completion_steps: BTreeMap<TaskId, u32>,
    pub comm_cost_hours: f64,
    pub trace: Trace,
    pub seed: u64,
    /// Progress fractions at which a report counts as announced.
    pub report_milestones: Vec<f64>,
    next_message: u64,
    next_meeting: u64,
    queued: Vec<QueuedDelta>,
    planned: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// The interchangeable algorithms a run is assembled from.
#[derive(Clone)]
pub struct Strategies {
    pub policy: Arc<dyn Policy>,
    pub evaluator: Arc<dyn DeltaEvaluator>,
    pub planner: Arc<dyn Planner>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineOptions {
    /// Run phase 3 on the rayon pool.
    pub parallel: bool,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub scenario: Scenario,
    pub trace: Trace,
    pub graph: TaskGraph,
    pub alignment: AlignmentState,
    pub assignments: Assignments,
    /// Step in which each completed root finished.
    pub completion_steps: BTreeMap<TaskId, u32>,
    pub steps_run: u32,
    pub comm_cost_hours: f64,
}

impl SimResult {
    pub fn all_done(&self) -> bool {
        self.graph.all_roots_done()
    }

    /// Wall-clock hours at which `root` was done, counting its final step.
    pub fn completion_hours(&self, root: &TaskId) -> Option<f64> {
        self.completion_steps.get(root).map(|&s| (s + 1) as f64 * self.scenario.hours_per_step)
    }
}

pub struct Simulation {
    pub scenario: Scenario,
    strategies: Strategies,
    options: EngineOptions,
    pub world: WorldState,
    /// Inbox ids drained in phase 2, attached to actions in phase 4.
    pending_reads: Vec<Vec<MessageId>>,
}

fn message_type_for(kind: IntentionKind) -> Option<MessageType> {
    match kind {
        IntentionKind::RequestHelp => Some(MessageType::HelpRequest),
        IntentionKind::NeedClarification => Some(MessageType::NeedClarification),
        IntentionKind::ReportProgress => Some(MessageType::ProgressUpdate),
        IntentionKind::ScheduleMeeting => Some(MessageType::MeetingInvite),
        IntentionKind::ContinueTask | IntentionKind::CheckMessages => None,
    }
}

impl WorldState {
    pub fn new(scenario: &Scenario) -> Self {
        let mut team = scenario.team.clone();
        team.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
        Self {
            clock: scenario.clock(),
            agents: team
                .into_iter()
                .map(|profile| AgentRuntime {
                    profile,
                    action: None,
                    inbox: Vec::new(),
                    rsvp_pending: BTreeSet::new(),
                    last_action: None,
                })
                .collect(),
            graph: TaskGraph::from_specs(&scenario.tasks),
            alignment: AlignmentState::new(),
            buffer: CommBuffer::new(),
            threads: BTreeMap::new(),
            meetings: BTreeMap::new(),
            messages: BTreeMap::new(),
            assignments: Assignments::new(),
            stats: BTreeMap::new(),
            completion_steps: BTreeMap::new(),
            comm_cost_hours: 0.0,
            trace: Trace::new(),
            seed: scenario.seed,
            report_milestones: scenario.heuristic.report_milestones.clone(),
            next_message: 1,
            next_meeting: 1,
            queued: Vec::new(),
            planned: false,
        }
    }

    fn index_of(&self, id: &AgentId) -> Option<usize> {
        self.agents.iter().position(|a| &a.profile.agent_id == id)
    }

    fn alloc_message(&mut self) -> MessageId {
        let id = MessageId(self.next_message);
        self.next_message += 1;
        id
    }

    fn stats_mut(&mut self, agent: &AgentId, task: &TaskId) -> &mut AssignmentStats {
        self.stats.entry((agent.clone(), task.clone())).or_default()
    }

    /// Threads and invites that call for this agent's attention, oldest
    /// first.
    pub fn pending_for(&self, agent: &AgentId) -> Vec<PendingItem> {
        let now = self.clock.step;
        let mut out = Vec::new();
        for t in self.threads.values() {
            if !t.open || t.awaiting.as_ref() != Some(agent) {
                continue;
            }
            let Some(last) = t.messages.last().and_then(|m| self.messages.get(m)) else { continue };
            if last.delivery_step <= now && last.to_agents.contains(agent) {
                out.push(PendingItem { kind: PendingKind::Reply { thread: t.thread_id }, message: last.clone() });
            }
        }
        if let Some(i) = self.index_of(agent) {
            for m in &self.agents[i].rsvp_pending {
                let rec = &self.meetings[m];
                if let Some(invite) = self.messages.get(&rec.invite_message) {
                    out.push(PendingItem { kind: PendingKind::Rsvp { meeting: *m }, message: invite.clone() });
                }
            }
        }
        out.sort_by_key(|p| (p.message.sent_step, p.message.message_id));
        out
    }

    fn assignment_views(&self, agent: &AgentId) -> Vec<AssignmentView> {
        let mut tasks = self.assignments.get(agent).cloned().unwrap_or_default();
        tasks.sort();
        tasks
            .iter()
            .map(|t| {
                let node = self.graph.nodes[t].clone();
                let st = self.stats.get(&(agent.clone(), t.clone())).cloned().unwrap_or_default();
                let mut blocked: Vec<AgentId> = if node.is_done() {
                    Vec::new()
                } else {
                    self.graph
                        .dependents_of(t)
                        .iter()
                        .map(|d| &self.graph.nodes[d])
                        .filter(|d| !d.is_done())
                        .filter_map(|d| d.assignee.clone())
                        .filter(|a| a != agent)
                        .collect()
                };
                blocked.sort();
                blocked.dedup();
                AssignmentView {
                    root: self.graph.root_of(t),
                    af: self.alignment.get(agent, t).unwrap_or(AF_INIT),
                    ready: self.graph.is_ready(t),
                    hours_worked: st.hours_worked,
                    work_steps_since_gain: st.work_steps_since_gain,
                    clarifications_asked: st.clarifications_asked,
                    help_requests: st.help_requests,
                    milestones_reported: st.milestones_reported,
                    meeting_called: st.meeting_called,
                    blocked_collaborators: blocked,
                    task: node,
                }
            })
            .collect()
    }

    /// Snapshot of what `agent` knows right now. Reads only delivered
    /// messages.
    pub fn build_context(&self, idx: usize) -> PolicyContext {
        let rt = &self.agents[idx];
        let me = &rt.profile.agent_id;
        let mut open_requests: Vec<MessageId> =
            self.threads.values().filter(|t| t.open && &t.requester == me).map(|t| t.thread_id).collect();
        open_requests.sort();
        PolicyContext {
            agent: rt.profile.clone(),
            assignments: self.assignment_views(me),
            inbox: rt.inbox.clone(),
            pending: self.pending_for(me),
            team: self
                .agents
                .iter()
                .map(|a| TeamMember {
                    agent_id: a.profile.agent_id.clone(),
                    role: a.profile.role,
                    skills: a.profile.skills.iter().cloned().collect(),
                    busy: a.action.is_some(),
                })
                .collect(),
            step: self.clock.step,
            hours_per_step: self.clock.hours_per_step,
            last_action: rt.last_action.clone(),
            open_requests,
            seed: self.seed,
        }
    }

    fn work_action(
        &self,
        ctx: &PolicyContext,
        preferred: Option<&TaskId>,
        intention: Option<IntentionKind>,
    ) -> Option<ActiveAction> {
        let task = preferred
            .and_then(|t| ctx.assignment(t))
            .filter(|a| a.ready)
            .or_else(|| ctx.active())?
            .task
            .task_id
            .clone();
        Some(ActiveAction::new(
            ActionKind::Work,
            task.as_str().to_string(),
            intention,
            self.clock.step,
            1,
            ActionPayload::Work(task),
        ))
    }

    /// Work if possible, otherwise answer what is pending, otherwise idle.
    fn fallback_action(
        &mut self,
        policy: &dyn Policy,
        ctx: &PolicyContext,
        intention: Option<IntentionKind>,
    ) -> ActiveAction {
        if let Some(a) = self.work_action(ctx, None, intention) {
            return a;
        }
        if !ctx.pending.is_empty() {
            if let Some(a) = self.answer_pending(policy, ctx, intention) {
                return a;
            }
        }
        ActiveAction::idle(self.clock.step, intention)
    }

    fn answer_pending(
        &mut self,
        policy: &dyn Policy,
        ctx: &PolicyContext,
        intention: Option<IntentionKind>,
    ) -> Option<ActiveAction> {
        let now = self.clock.step;
        let me = ctx.agent.agent_id.clone();
        for item in &ctx.pending {
            match item.kind {
                PendingKind::Reply { thread } => {
                    let composed = policy.compose_reply(ctx, &item.message);
                    if let Some(w) = composed.warning {
                        self.trace.warn(now, format!("{me}: {w}"));
                    }
                    let resolves = policy.resolves(ctx, &item.message);
                    let id = self.alloc_message();
                    let t = self.threads.get_mut(&thread).expect("pending thread exists");
                    let msg = match reply(t, id, &me, composed.text, now, resolves) {
                        Ok(m) => m,
                        Err(e) => {
                            self.trace.warn(now, format!("{me}: cannot reply on thread {thread}: {e}"));
                            continue;
                        }
                    };
                    let cost = communication_cost(msg.channel, msg.word_count(), msg.to_agents.len())
                        .expect("reply has recipients");
                    let steps = hours_to_steps(cost, self.clock.hours_per_step).expect("valid cost");
                    let mut a = ActiveAction::new(
                        ActionKind::Reply,
                        thread.to_string(),
                        intention,
                        now,
                        steps,
                        ActionPayload::Send(Box::new(Outgoing { message: msg, cost_hours: cost, meeting: None })),
                    );
                    a.reads.push(item.message.message_id);
                    return Some(a);
                }
                PendingKind::Rsvp { meeting } => {
                    let mut a = ActiveAction::new(
                        ActionKind::Reply,
                        meeting.to_string(),
                        intention,
                        now,
                        1,
                        ActionPayload::Rsvp(meeting),
                    );
                    a.reads.push(item.message.message_id);
                    return Some(a);
                }
                PendingKind::MeetingStart { .. } => {}
            }
        }
        None
    }

    fn communicate(
        &mut self,
        policy: &dyn Policy,
        ctx: &PolicyContext,
        intention: &Intention,
        cfg_short: usize,
    ) -> Option<ActiveAction> {
        let now = self.clock.step;
        let me = ctx.agent.agent_id.clone();
        let task = intention
            .about_task
            .as_ref()
            .and_then(|t| ctx.assignment(t))
            .filter(|a| !a.task.is_done() || intention.kind == IntentionKind::ReportProgress)
            .or_else(|| ctx.active())
            .or_else(|| ctx.assignments.iter().find(|a| !a.task.is_done()))?;
        let task_id = task.task.task_id.clone();
        let intention = Intention { about_task: Some(task_id.clone()), ..intention.clone() };
        let mut recipients = select_recipients(ctx, &intention);
        recipients.retain(|r| r != &me);
        if recipients.is_empty() {
            self.trace.warn(now, format!("{me}: no recipient for {}", intention.kind));
            return None;
        }
        let composed = policy.compose(ctx, &intention, &recipients);
        if let Some(w) = composed.warning {
            self.trace.warn(now, format!("{me}: {w}"));
        }
        let words = word_count(&composed.text);
        let channel = select_channel(&intention, words, cfg_short);
        let id = self.alloc_message();
        let mtype = message_type_for(intention.kind)?;

        let outgoing = if mtype == MessageType::MeetingInvite {
            let mid = MeetingId(self.next_meeting);
            self.next_meeting += 1;
            let (message, record) =
                schedule_meeting(mid, id, &me, &recipients, Some(task_id.clone()), composed.text, now).ok()?;
            Outgoing { message, cost_hours: 0.0, meeting: Some(record) }
        } else {
            let cost = communication_cost(channel, words, recipients.len()).ok()?;
            let message = Message {
                message_id: id,
                thread_id: id,
                from_agent: me.clone(),
                to_agents: recipients,
                channel,
                message_type: mtype,
                about_task: Some(task_id.clone()),
                content: composed.text,
                sent_step: now,
                delivery_step: now + 1,
                meeting_id: None,
                participants: Vec::new(),
                in_reply_to: None,
                resolves: false,
            };
            Outgoing { message, cost_hours: cost, meeting: None }
        };
        let steps = hours_to_steps(outgoing.cost_hours, self.clock.hours_per_step).expect("valid cost");

        let milestones = self.milestones_reached(&task.task);
        let st = self.stats_mut(&me, &task_id);
        match intention.kind {
            IntentionKind::RequestHelp => st.help_requests += 1,
            IntentionKind::NeedClarification => st.clarifications_asked += 1,
            IntentionKind::ReportProgress => st.milestones_reported = st.milestones_reported.max(milestones),
            IntentionKind::ScheduleMeeting => st.meeting_called = true,
            _ => {}
        }
        Some(ActiveAction::new(
            ActionKind::Communicate,
            task_id.as_str(),
            Some(intention.kind),
            now,
            steps,
            ActionPayload::Send(Box::new(outgoing)),
        ))
    }

    fn milestones_reached(&self, task: &crate::task_graph::TaskNode) -> usize {
        self.report_milestones.iter().filter(|&&m| task.progress() >= m).count()
    }
}

impl Simulation {
    pub fn new(scenario: Scenario, strategies: Strategies, options: EngineOptions) -> Result<Self, SimError> {
        if scenario.workers().next().is_none() {
            return Err(PlanError::EmptyTeam.into());
        }
        let world = WorldState::new(&scenario);
        Ok(Self { scenario, strategies, options, world, pending_reads: Vec::new() })
    }

    pub fn is_finished(&self) -> bool {
        self.world.clock.finished() || (self.world.planned && self.world.graph.all_roots_done())
    }

    pub fn run(mut self) -> SimResult {
        while !self.is_finished() {
            self.step();
        }
        self.finish()
    }

    fn finish(mut self) -> SimResult {
        let w = &mut self.world;
        let last = w.clock.step.saturating_sub(1);
        for m in w.buffer.drain() {
            w.trace.warn(last, format!("message {} from {} undelivered at end of run", m.message_id, m.from_agent));
        }
        for r in w.graph.roots.clone() {
            if !w.graph.nodes[&r].is_done() {
                w.trace.warn(last, format!("task {r} incomplete at end of run"));
            }
        }
        SimResult {
            scenario: self.scenario,
            trace: std::mem::take(&mut w.trace),
            graph: std::mem::take(&mut w.graph),
            alignment: std::mem::take(&mut w.alignment),
            assignments: std::mem::take(&mut w.assignments),
            completion_steps: std::mem::take(&mut w.completion_steps),
            steps_run: w.clock.step,
            comm_cost_hours: w.comm_cost_hours,
        }
    }

    /// Runs one full step. Does nothing once the run is finished.
    pub fn step(&mut self) {
        if self.is_finished() {
            return;
        }
        self.deliver();
        let (idle, contexts) = self.build_contexts();
        let decisions = self.decide(&contexts);
        self.resolve_all(&idle, &contexts, decisions);
        self.execute();
        self.apply_deltas();
        self.start_meetings();
        self.world.clock.advance();
    }

    fn deliver(&mut self) {
        let w = &mut self.world;
        let now = w.clock.step;
        for m in w.buffer.deliver_due(now) {
            for to in &m.to_agents {
                w.trace.push(
                    now,
                    EventPayload::MessageDelivered {
                        message_id: m.message_id,
                        thread_id: m.thread_id,
                        from: m.from_agent.clone(),
                        to: to.clone(),
                        message_type: m.message_type,
                        channel: m.channel,
                        sent_step: m.sent_step,
                    },
                );
                let Some(i) = w.index_of(to) else { continue };
                match m.message_type {
                    MessageType::MeetingInvite => {
                        if let Some(mid) = m.meeting_id {
                            if w.meetings.get(&mid).is_some_and(|r| r.status == MeetingStatus::Pending) {
                                w.agents[i].rsvp_pending.insert(mid);
                            }
                        }
                    }
                    MessageType::Response => {
                        if let Some(t) = w.threads.get(&m.thread_id) {
                            if &t.requester == to {
                                if let Some(task) = &t.about_task {
                                    if w.alignment.get(to, task).is_some() {
                                        w.queued.push(QueuedDelta {
                                            agent: to.clone(),
                                            task: task.clone(),
                                            message: m.message_id,
                                            source: DeltaSource::Reply {
                                                root_type: t.root_type,
                                                original: Some(t.root_message),
                                            },
                                        });
                                    }
                                }
                            }
                        }
                    }
                    _ => {}
                }
                let rt = &mut w.agents[i];
                let joins_meeting = m.message_type == MessageType::MeetingStart
                    && rt.action.as_ref().is_some_and(|a| a.payload == ActionPayload::Meeting(m.meeting_id.unwrap()));
                if joins_meeting {
                    rt.action.as_mut().unwrap().reads.push(m.message_id);
                } else {
                    rt.inbox.push(m.clone());
                }
            }
        }
    }

    fn build_contexts(&mut self) -> (Vec<usize>, Vec<PolicyContext>) {
        let w = &mut self.world;
        let now = w.clock.step;
        if !w.planned && now == 0 {
            let mi = w.agents.iter().position(|a| a.profile.role == Role::Manager).expect("manager");
            w.agents[mi].action = Some(ActiveAction::new(ActionKind::Plan, "tasks", None, now, 1, ActionPayload::Plan));
        }
        let mut idle = Vec::new();
        let mut contexts = Vec::new();
        for i in 0..w.agents.len() {
            if w.agents[i].action.is_some() {
                continue;
            }
            let ctx = w.build_context(i);
            let rt = &mut w.agents[i];
            let reads: Vec<MessageId> = rt.inbox.drain(..).map(|m| m.message_id).collect();
            let nothing_to_do = ctx.pending.is_empty() && ctx.assignments.iter().all(|a| a.task.is_done());
            if nothing_to_do {
                let mut a = ActiveAction::idle(now, None);
                a.reads = reads;
                rt.action = Some(a);
                continue;
            }
            idle.push((i, reads));
            contexts.push(ctx);
        }
        let (idx, reads): (Vec<usize>, Vec<Vec<MessageId>>) = idle.into_iter().unzip();
        self.pending_reads = reads;
        (idx, contexts)
    }

    fn decide(&self, contexts: &[PolicyContext]) -> Vec<Decision> {
        let policy = &self.strategies.policy;
        if self.options.parallel {
            contexts.par_iter().map(|c| policy.decide(c)).collect()
        } else {
            contexts.iter().map(|c| policy.decide(c)).collect()
        }
    }

    fn resolve_all(&mut self, idle: &[usize], contexts: &[PolicyContext], decisions: Vec<Decision>) {
        let reads = std::mem::take(&mut self.pending_reads);
        for (((&i, ctx), decision), reads) in idle.iter().zip(contexts).zip(decisions).zip(reads) {
            if let Some(w) = &decision.warning {
                let who = ctx.agent.agent_id.clone();
                self.world.trace.warn(self.world.clock.step, format!("{who}: {w}"));
            }
            let mut action = self.resolve_intention(ctx, &decision.intention);
            let mut all = reads;
            all.append(&mut action.reads);
            all.sort();
            all.dedup();
            action.reads = all;
            self.world.agents[i].action = Some(action);
        }
    }

    /// Turns an intention into a concrete action for the agent in `ctx`.
    pub fn resolve_intention(&mut self, ctx: &PolicyContext, intention: &Intention) -> ActiveAction {
        let policy = self.strategies.policy.clone();
        let short = self.scenario.heuristic.short_message_words;
        let w = &mut self.world;
        let k = Some(intention.kind);
        match intention.kind {
            IntentionKind::ContinueTask => match w.work_action(ctx, intention.about_task.as_ref(), k) {
                Some(a) => a,
                None => w.fallback_action(policy.as_ref(), ctx, k),
            },
            IntentionKind::CheckMessages => match w.answer_pending(policy.as_ref(), ctx, k) {
                Some(a) => a,
                None => w.fallback_action(policy.as_ref(), ctx, k),
            },
            _ => match w.communicate(policy.as_ref(), ctx, intention, short) {
                Some(a) => a,
                None => w.fallback_action(policy.as_ref(), ctx, k),
            },
        }
    }

    fn execute(&mut self) {
        for i in 0..self.world.agents.len() {
            self.execute_agent(i);
        }
    }

    fn execute_agent(&mut self, i: usize) {
        let hps = self.world.clock.hours_per_step;
        let now = self.world.clock.step;
        let mut action = self.world.agents[i].action.take().expect("every agent holds an action");
        let me = self.world.agents[i].profile.agent_id.clone();
        action.remaining -= 1;
        let done = action.remaining == 0;
        self.world.trace.push(
            now,
            EventPayload::Action {
                agent: me.clone(),
                action: action.kind,
                target: action.target.clone(),
                intention: action.intention,
                remaining: action.remaining,
                reads: std::mem::take(&mut action.reads),
            },
        );
        match &action.payload {
            ActionPayload::Work(task) => self.work(&me, task, hps),
            ActionPayload::Send(out) if done => self.send(out.as_ref().clone(), action.started),
            ActionPayload::Rsvp(mid) => {
                let w = &mut self.world;
                if let Some(rec) = w.meetings.get_mut(mid) {
                    rec.rsvp(&me);
                }
                w.agents[i].rsvp_pending.remove(mid);
            }
            ActionPayload::Meeting(mid) if done => self.finish_meeting(*mid),
            ActionPayload::Plan => self.plan(),
            _ => {}
        }
        let rt = &mut self.world.agents[i];
        if done {
            rt.last_action = Some(LastAction {
                kind: action.kind,
                target: action.target.clone(),
                step: now,
                intention: action.intention,
            });
        } else {
            rt.action = Some(action);
        }
    }

    fn work(&mut self, me: &AgentId, task: &TaskId, hps: f64) {
        let w = &mut self.world;
        let now = w.clock.step;
        let af = w.alignment.get(me, task).unwrap_or(AF_INIT);
        let eff = effective_progress(hps, af).expect("AF kept in range");
        match w.graph.record_work(task, eff) {
            Ok(out) => {
                w.trace.push(
                    now,
                    EventPayload::Progress {
                        agent: me.clone(),
                        task: task.clone(),
                        af,
                        effective_hours: eff,
                        accumulated: out.accumulated,
                    },
                );
                let st = w.stats_mut(me, task);
                st.hours_worked += hps;
                st.work_steps_since_gain += 1;
                for t in out.completed {
                    let agent = w.graph.nodes[&t].assignee.clone();
                    if w.graph.roots.contains(&t) {
                        w.completion_steps.insert(t.clone(), now);
                    }
                    w.trace.push(now, EventPayload::TaskDone { task: t, agent });
                }
            }
            Err(e) => w.trace.warn(now, format!("{me}: work on {task} rejected: {e}")),
        }
    }

    fn send(&mut self, out: Outgoing, initiated: u32) {
        let w = &mut self.world;
        let now = w.clock.step;
        let mut msg = out.message;
        msg.sent_step = now;
        msg.delivery_step = now + 1;
        if let Some(mut rec) = out.meeting {
            rec.invite_step = now;
            rec.earliest_start = now + 2;
            w.meetings.insert(rec.meeting_id, rec);
        }
        if matches!(
            msg.message_type,
            MessageType::HelpRequest | MessageType::NeedClarification | MessageType::ProgressUpdate
        ) {
            w.threads.insert(msg.thread_id, Thread::open(&msg));
        }
        w.comm_cost_hours += out.cost_hours;
        w.messages.insert(msg.message_id, msg.clone());
        w.buffer.enqueue(msg.clone(), now).expect("message stamped for this step");
        w.trace.push(
            now,
            EventPayload::MessageSent { message: msg, cost_hours: out.cost_hours, initiated_step: initiated },
        );
    }

    fn plan(&mut self) {
        let planner = self.strategies.planner.clone();
        let w = &mut self.world;
        let now = w.clock.step;
        let team: Vec<AgentProfile> = w.agents.iter().map(|a| a.profile.clone()).collect();
        for root in w.graph.roots.clone() {
            let node = w.graph.nodes[&root].clone();
            let planned = match planner.decompose(&node, &team) {
                Ok(p) => p,
                Err(e) => {
                    w.trace.warn(now, format!("planning {root} failed: {e}"));
                    continue;
                }
            };
            for msg in planned.warnings {
                w.trace.warn(now, msg);
            }
            let ids = match w.graph.add_subtasks(&root, &planned.plan.specs()) {
                Ok(ids) => ids,
                Err(e) => {
                    w.trace.warn(now, format!("planning {root} failed: {e}"));
                    continue;
                }
            };
            let before = w.assignments.clone();
            match assign(&planned.plan, &ids, &w.graph, &team, &mut w.assignments) {
                Ok(warnings) => {
                    for msg in warnings {
                        w.trace.warn(now, msg);
                    }
                }
                Err(e) => w.trace.warn(now, format!("assigning {root} failed: {e}")),
            }
            for (agent, tasks) in w.assignments.clone() {
                let old = before.get(&agent).map_or(0, Vec::len);
                for t in &tasks[old..] {
                    w.graph.nodes.get_mut(t).expect("fresh subtask").assignee = Some(agent.clone());
                    let af = w.alignment.init_alignment(&agent, t).expect("fresh pair");
                    w.stats.insert((agent.clone(), t.clone()), AssignmentStats::default());
                    w.trace.push(
                        now,
                        EventPayload::AfUpdate {
                            agent: agent.clone(),
                            task: t.clone(),
                            old_af: af,
                            delta: 0.0,
                            new_af: af,
                            cause: "init".into(),
                        },
                    );
                }
            }
        }
        w.planned = true;
    }

    fn finish_meeting(&mut self, mid: MeetingId) {
        let w = &mut self.world;
        let Some(rec) = w.meetings.get_mut(&mid) else { return };
        if rec.status != MeetingStatus::Started {
            return;
        }
        rec.status = MeetingStatus::Held;
        let rec = rec.clone();
        let Some(topic) = rec.about_task.as_ref().map(|t| w.graph.root_of(t)) else { return };
        let start = rec.start_message.unwrap_or(rec.invite_message);
        for a in &rec.attending {
            let mut tasks = w.assignments.get(a).cloned().unwrap_or_default();
            tasks.sort();
            let active = tasks.into_iter().find(|t| !w.graph.nodes[t].is_done() && w.graph.root_of(t) == topic);
            if let Some(task) = active {
                w.queued.push(QueuedDelta { agent: a.clone(), task, message: start, source: DeltaSource::Meeting });
            }
        }
    }

    fn apply_deltas(&mut self) {
        let evaluator = self.strategies.evaluator.clone();
        let w = &mut self.world;
        let now = w.clock.step;
        let mut queued = std::mem::take(&mut w.queued);
        queued.sort_by(|a, b| (&a.agent, a.message, &a.task).cmp(&(&b.agent, b.message, &b.task)));
        for q in queued {
            let Some(current) = w.alignment.get(&q.agent, &q.task) else { continue };
            let delta = match &q.source {
                DeltaSource::Meeting => MEETING_GAIN,
                DeltaSource::Reply { root_type, original } => {
                    let task = w.graph.nodes[&q.task].clone();
                    let original = original.and_then(|o| w.messages.get(&o));
                    let reply = &w.messages[&q.message];
                    let out = evaluator.evaluate(&EvalRequest {
                        agent: &q.agent,
                        task: &task,
                        current_af: current,
                        root_type: *root_type,
                        original_request: original,
                        reply,
                    });
                    if let Some(msg) = out.warning {
                        w.trace.warn(now, format!("{}: {msg}", q.agent));
                    }
                    out.evaluation.delta
                }
            };
            let up = w
                .alignment
                .apply_delta(&q.agent, &q.task, delta, now, q.message.to_string())
                .expect("pair initialized");
            if up.new_af > up.old_af {
                w.stats_mut(&q.agent, &q.task).work_steps_since_gain = 0;
            }
            w.trace.push(
                now,
                EventPayload::AfUpdate {
                    agent: up.agent_id,
                    task: up.task_id,
                    old_af: up.old_af,
                    delta: up.delta,
                    new_af: up.new_af,
                    cause: up.cause,
                },
            );
        }
    }

    fn start_meetings(&mut self) {
        let w = &mut self.world;
        let now = w.clock.step;
        let next = now + 1;
        let due: Vec<MeetingId> = w
            .meetings
            .values()
            .filter(|m| m.status == MeetingStatus::Pending && next >= m.earliest_start)
            .map(|m| m.meeting_id)
            .collect();
        for mid in due {
            let rec = w.meetings[&mid].clone();
            let free = rec.attending.iter().all(|a| w.index_of(a).is_some_and(|i| w.agents[i].action.is_none()));
            if rec.attending.len() >= 2 && !free {
                continue;
            }
            for rt in &mut w.agents {
                rt.rsvp_pending.remove(&mid);
            }
            if rec.attending.len() < 2 {
                w.meetings.get_mut(&mid).unwrap().status = MeetingStatus::Cancelled;
                w.trace.warn(now, format!("meeting {} cancelled: fewer than two attendees", rec.invite_message));
                continue;
            }
            let cost = communication_cost(Channel::Meeting, 0, rec.attending.len()).expect("two attendees");
            let steps = hours_to_steps(cost, w.clock.hours_per_step).expect("valid cost");
            let id = w.alloc_message();
            let to: Vec<AgentId> = rec.attending.iter().filter(|a| **a != rec.organizer).cloned().collect();
            let msg = Message {
                message_id: id,
                thread_id: rec.invite_message,
                from_agent: rec.organizer.clone(),
                to_agents: to,
                channel: Channel::Meeting,
                message_type: MessageType::MeetingStart,
                about_task: rec.about_task.clone(),
                content: format!("Meeting {} starts now.", rec.invite_message),
                sent_step: now,
                delivery_step: next,
                meeting_id: Some(mid),
                participants: rec.attending.iter().cloned().collect(),
                in_reply_to: Some(rec.invite_message),
                resolves: false,
            };
            {
                let r = w.meetings.get_mut(&mid).unwrap();
                r.status = MeetingStatus::Started;
                r.start_step = Some(next);
                r.duration_steps = steps;
                r.cost_hours = cost;
                r.start_message = Some(id);
            }
            for a in &rec.attending {
                let i = w.index_of(a).expect("attendee exists");
                w.agents[i].action = Some(ActiveAction::new(
                    ActionKind::Meeting,
                    rec.invite_message.to_string(),
                    None,
                    next,
                    steps,
                    ActionPayload::Meeting(mid),
                ));
            }
            w.comm_cost_hours += cost;
            w.messages.insert(id, msg.clone());
            w.buffer.enqueue(msg.clone(), now).expect("stamped for this step");
            w.trace.push(now, EventPayload::MessageSent { message: msg, cost_hours: cost, initiated_step: now });
        }
    }
}

/// Builds and runs a simulation to completion.
pub fn run(scenario: Scenario, strategies: Strategies, options: EngineOptions) -> Result<SimResult, SimError> {
    Ok(Simulation::new(scenario, strategies, options)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::RuleBasedEvaluator;
    use crate::model::{validate_scenario, HeuristicConfig, PolicyName, TaskSpec};
    use crate::planner::EvenPlanner;
    use crate::policy::{HeuristicPolicy, NoCommPolicy};

    fn scenario(hours: f64, workers: usize) -> Scenario {
        let mut team = vec![AgentProfile::new("M1", Role::Manager, &["backend", "api"])];
        for i in 0..workers {
            team.push(AgentProfile::new(&format!("W{}", i + 1), Role::Worker, &["backend", "api"]));
        }
        validate_scenario(Scenario {
            name: "t".into(),
            team,
            tasks: vec![TaskSpec {
                description: "integrate".into(),
                estimated_hours: hours,
                required_skills: vec!["backend".into(), "api".into(), "oauth".into(), "testing".into()],
            }],
            policy_name: PolicyName::NoComm,
            evaluator_name: crate::model::EvaluatorName::RuleBased,
            seed: 1,
            hours_per_step: 0.25,
            max_steps: 160,
            heuristic: HeuristicConfig::default(),
        })
        .unwrap()
    }

    fn strategies(policy: Arc<dyn Policy>) -> Strategies {
        Strategies { policy, evaluator: Arc::new(RuleBasedEvaluator), planner: Arc::new(EvenPlanner) }
    }

    fn actions(trace: &Trace, step: u32) -> Vec<(String, ActionKind)> {
        trace
            .events
            .iter()
            .filter(|e| e.step == step)
            .filter_map(|e| match &e.payload {
                EventPayload::Action { agent, action, .. } => Some((agent.as_str().to_string(), *action)),
                _ => None,
            })
            .collect()
    }

    /// Returns one fixed intention kind, or a scripted one per (agent, step).
    struct Scripted<F: Fn(&PolicyContext) -> IntentionKind + Send + Sync>(F);

    impl<F: Fn(&PolicyContext) -> IntentionKind + Send + Sync> Policy for Scripted<F> {
        fn name(&self) -> &str {
            "scripted"
        }

        fn decide(&self, ctx: &PolicyContext) -> Decision {
            let kind = (self.0)(ctx);
            let task = ctx.active().map(|a| a.task.task_id.clone());
            Decision { intention: Intention::new(kind, task, "scripted"), warning: None }
        }
    }

    #[test]
    fn manager_plans_first() {
        let mut sim =
            Simulation::new(scenario(24.0, 4), strategies(Arc::new(NoCommPolicy)), Default::default()).unwrap();
        sim.step();
        let t = &sim.world.trace;
        let acts = actions(t, 0);
        assert_eq!(acts[0], ("M1".into(), ActionKind::Plan));
        assert!(acts[1..].iter().all(|(_, k)| *k == ActionKind::Idle));
        let inits = t
            .events
            .iter()
            .filter(|e| matches!(&e.payload, EventPayload::AfUpdate { cause, new_af, .. } if cause == "init" && *new_af == AF_INIT))
            .count();
        assert_eq!(inits, 4);
        assert_eq!(sim.world.assignments.len(), 4);
    }

    #[test]
    fn no_comm_finishes_on_the_expected_step() {
        let r = run(scenario(24.0, 4), strategies(Arc::new(NoCommPolicy)), Default::default()).unwrap();
        assert!(r.all_done());
        assert_eq!(r.completion_hours(&TaskId::new("T1")), Some(20.25));
        assert_eq!(r.comm_cost_hours, 0.0);
        assert!(!r.trace.events.iter().any(|e| matches!(e.payload, EventPayload::MessageSent { .. })));
    }

    #[test]
    fn checking_an_empty_inbox_falls_back_to_work() {
        let check = Scripted(|_: &PolicyContext| IntentionKind::CheckMessages);
        let a = run(scenario(8.0, 4), strategies(Arc::new(check)), Default::default()).unwrap();
        let b = run(scenario(8.0, 4), strategies(Arc::new(NoCommPolicy)), Default::default()).unwrap();
        assert_eq!(a.completion_steps, b.completion_steps);
        assert!(actions(&a.trace, 1).iter().filter(|(a, _)| a.starts_with('W')).all(|(_, k)| *k == ActionKind::Work));
    }

    #[test]
    fn replies_go_to_the_oldest_request_first() {
        let mut s = scenario(24.0, 4);
        s.policy_name = PolicyName::Heuristic;
        let r = run(s, strategies(Arc::new(HeuristicPolicy::default())), Default::default()).unwrap();
        let sent: Vec<&Message> = r
            .trace
            .events
            .iter()
            .filter_map(|e| match &e.payload {
                EventPayload::MessageSent { message, .. } => Some(message),
                _ => None,
            })
            .collect();
        let requests: Vec<MessageId> =
            sent.iter().filter(|m| m.message_type == MessageType::NeedClarification).map(|m| m.message_id).collect();
        assert_eq!(requests.len(), 4);
        let answered: Vec<MessageId> = sent
            .iter()
            .filter(|m| m.message_type == MessageType::Response && m.from_agent.as_str() == "M1")
            .filter_map(|m| m.in_reply_to)
            .filter(|id| requests.contains(id))
            .collect();
        assert_eq!(answered, requests);
    }

    #[test]
    fn meeting_lifecycle() {
        let policy = Scripted(|ctx: &PolicyContext| {
            if ctx.agent.agent_id.as_str() == "W1" && ctx.step == 1 {
                IntentionKind::ScheduleMeeting
            } else if !ctx.pending.is_empty() {
                IntentionKind::CheckMessages
            } else {
                IntentionKind::ContinueTask
            }
        });
        let r = run(scenario(24.0, 4), strategies(Arc::new(policy)), Default::default()).unwrap();
        let mut invite = None;
        let mut start = None;
        for e in &r.trace.events {
            if let EventPayload::MessageSent { message, .. } = &e.payload {
                match message.message_type {
                    MessageType::MeetingInvite => invite = Some(message.clone()),
                    MessageType::MeetingStart => start = Some(message.clone()),
                    _ => {}
                }
            }
        }
        let (invite, start) = (invite.expect("invite sent"), start.expect("meeting started"));
        assert!(start.delivery_step >= invite.sent_step + 2);
        // The manager holds no subtask, so only worker attendees gain.
        let gains: Vec<(AgentId, f64)> = r
            .trace
            .events
            .iter()
            .filter_map(|e| match &e.payload {
                EventPayload::AfUpdate { agent, delta, cause, .. } if *cause == start.message_id.to_string() => {
                    Some((agent.clone(), *delta))
                }
                _ => None,
            })
            .collect();
        let workers: Vec<AgentId> = start.participants.iter().filter(|a| a.as_str() != "M1").cloned().collect();
        assert!(!workers.is_empty());
        assert_eq!(gains.iter().map(|g| g.0.clone()).collect::<Vec<_>>(), workers);
        assert!(gains.iter().all(|g| g.1 == MEETING_GAIN));
        let in_meeting =
            actions(&r.trace, start.delivery_step).into_iter().filter(|(_, k)| *k == ActionKind::Meeting).count();
        assert_eq!(in_meeting, start.participants.len());
    }

    #[test]
    fn parallel_decisions_match_serial() {
        let mut s = scenario(24.0, 8);
        s.policy_name = PolicyName::Heuristic;
        let go = |parallel| {
            run(s.clone(), strategies(Arc::new(HeuristicPolicy::default())), EngineOptions { parallel })
                .unwrap()
                .trace
                .to_jsonl()
        };
        assert_eq!(go(false), go(true));
    }

    #[test]
    fn step_cap_leaves_work_incomplete() {
        let mut s = scenario(40.0, 4);
        s.max_steps = 4;
        let r = run(s, strategies(Arc::new(NoCommPolicy)), Default::default()).unwrap();
        assert!(!r.all_done());
        assert_eq!(r.steps_run, 4);
        assert!(r.trace.warnings().any(|w| w.contains("incomplete")));
    }
}
