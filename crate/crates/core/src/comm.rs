//! Messages, threads, channel cost models and the staged delivery buffer.
//!
//! A message sent during step `t` is stamped for delivery at `t + 1` and
//! sits in [`CommBuffer`] until the scheduler flushes it at the start of
//! that step. Nothing sent in a step is visible to anyone in the same step.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, TaskId};

pub const MAX_REPLY_ROUNDS: u32 = 3;

const CHAT_BASE_MIN: f64 = 3.0;
const CHAT_WORDS_PER_MIN: usize = 100;
const EMAIL_BASE_MIN: f64 = 9.0;
const EMAIL_WORDS_PER_MIN: usize = 50;
const MEETING_FLOOR_MIN: f64 = 30.0;
const MEETING_PREP_BLOCK_MIN: f64 = 5.0;
const MEETING_PREP_BLOCKS: f64 = 1.0;
const MEETING_PER_PARTICIPANT_MIN: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Chat,
    Email,
    Meeting,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Chat => "chat",
            Channel::Email => "email",
            Channel::Meeting => "meeting",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageType {
    HelpRequest,
    NeedClarification,
    ProgressUpdate,
    MeetingInvite,
    MeetingStart,
    Response,
}

impl MessageType {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageType::HelpRequest => "HELP_REQUEST",
            MessageType::NeedClarification => "NEED_CLARIFICATION",
            MessageType::ProgressUpdate => "PROGRESS_UPDATE",
            MessageType::MeetingInvite => "MEETING_INVITE",
            MessageType::MeetingStart => "MEETING_START",
            MessageType::Response => "RESPONSE",
        }
    }

    /// Whether the recipient is expected to answer.
    pub fn expects_reply(&self) -> bool {
        matches!(self, MessageType::HelpRequest | MessageType::NeedClarification)
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeetingId(pub u64);

impl fmt::Display for MeetingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mtg{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: MessageId,
    pub thread_id: MessageId,
    pub from_agent: AgentId,
    pub to_agents: Vec<AgentId>,
    pub channel: Channel,
    pub message_type: MessageType,
    pub about_task: Option<TaskId>,
    pub content: String,
    pub sent_step: u32,
    pub delivery_step: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meeting_id: Option<MeetingId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub participants: Vec<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_reply_to: Option<MessageId>,
    /// Set on responses that settle the root request.
    #[serde(default)]
    pub resolves: bool,
}

impl Message {
    pub fn word_count(&self) -> usize {
        word_count(&self.content)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Error, PartialEq)]
pub enum CommError {
    #[error("meeting needs participants")]
    MeetingNeedsParticipants,
    #[error("message needs at least one recipient")]
    NoRecipients,
    #[error("thread depth exceeded")]
    ThreadDepthExceeded,
    #[error("thread closed")]
    ThreadClosed,
    #[error("message {id} sent at step {sent} enqueued at step {now}")]
    WrongSendStep { id: MessageId, sent: u32, now: u32 },
}

/// Time in hours spent producing a communication on `channel`.
pub fn communication_cost(channel: Channel, content_word_count: usize, participants: usize) -> Result<f64, CommError> {
    let minutes = match channel {
        Channel::Chat | Channel::Email if participants == 0 => {
            return Err(CommError::NoRecipients);
        }
        Channel::Chat => CHAT_BASE_MIN + content_word_count.div_ceil(CHAT_WORDS_PER_MIN) as f64,
        Channel::Email => EMAIL_BASE_MIN + content_word_count.div_ceil(EMAIL_WORDS_PER_MIN) as f64,
        Channel::Meeting => {
            if participants < 2 {
                return Err(CommError::MeetingNeedsParticipants);
            }
            let m = MEETING_FLOOR_MIN
                + MEETING_PREP_BLOCK_MIN * MEETING_PREP_BLOCKS
                + MEETING_PER_PARTICIPANT_MIN * participants as f64;
            m.max(MEETING_FLOOR_MIN)
        }
    };
    Ok(minutes / 60.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_id: MessageId,
    pub root_message: MessageId,
    pub root_type: MessageType,
    pub channel: Channel,
    pub requester: AgentId,
    pub about_task: Option<TaskId>,
    pub participants: BTreeSet<AgentId>,
    pub reply_rounds: u32,
    pub open: bool,
    /// Whoever owes the next reply while the thread is open.
    pub awaiting: Option<AgentId>,
    pub messages: Vec<MessageId>,
}

impl Thread {
    /// Opens a thread rooted at `root`. Fire-and-forget messages produce a
    /// thread that is closed from the start.
    pub fn open(root: &Message) -> Self {
        let expects = root.message_type.expects_reply();
        let mut participants: BTreeSet<AgentId> = root.to_agents.iter().cloned().collect();
        participants.insert(root.from_agent.clone());
        Self {
            thread_id: root.thread_id,
            root_message: root.message_id,
            root_type: root.message_type,
            channel: root.channel,
            requester: root.from_agent.clone(),
            about_task: root.about_task.clone(),
            participants,
            reply_rounds: 0,
            open: expects,
            awaiting: if expects { root.to_agents.first().cloned() } else { None },
            messages: vec![root.message_id],
        }
    }
}

/// Builds the next reply on `thread`. The reply goes to every prior
/// participant except the sender; the thread closes once the reply resolves
/// the request or the round limit is hit.
pub fn reply(
    thread: &mut Thread,
    message_id: MessageId,
    from_agent: &AgentId,
    content: String,
    current_step: u32,
    resolves: bool,
) -> Result<Message, CommError> {
    if thread.reply_rounds >= MAX_REPLY_ROUNDS {
        return Err(CommError::ThreadDepthExceeded);
    }
    if !thread.open {
        return Err(CommError::ThreadClosed);
    }
    let to_agents: Vec<AgentId> = thread.participants.iter().filter(|a| *a != from_agent).cloned().collect();
    if to_agents.is_empty() {
        return Err(CommError::NoRecipients);
    }
    let msg = Message {
        message_id,
        thread_id: thread.thread_id,
        from_agent: from_agent.clone(),
        to_agents: to_agents.clone(),
        channel: thread.channel,
        message_type: MessageType::Response,
        about_task: thread.about_task.clone(),
        content,
        sent_step: current_step,
        delivery_step: current_step + 1,
        meeting_id: None,
        participants: Vec::new(),
        in_reply_to: thread.messages.last().copied(),
        resolves,
    };
    thread.reply_rounds += 1;
    thread.messages.push(message_id);
    if resolves || thread.reply_rounds >= MAX_REPLY_ROUNDS {
        thread.open = false;
        thread.awaiting = None;
    } else {
        thread.awaiting = to_agents.into_iter().next();
    }
    Ok(msg)
}

/// Pending deliveries in canonical `(sent_step, from_agent, message_id)` order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommBuffer {
    pub pending: Vec<Message>,
}

impl CommBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Stamps `delivery_step = current_step + 1` and stages the message.
    pub fn enqueue(&mut self, mut message: Message, current_step: u32) -> Result<(), CommError> {
        if message.sent_step != current_step {
            return Err(CommError::WrongSendStep {
                id: message.message_id,
                sent: message.sent_step,
                now: current_step,
            });
        }
        if message.to_agents.is_empty() {
            return Err(CommError::NoRecipients);
        }
        message.delivery_step = current_step + 1;
        let key = |m: &Message| (m.sent_step, m.from_agent.clone(), m.message_id);
        let k = key(&message);
        let pos = self.pending.partition_point(|m| key(m) <= k);
        self.pending.insert(pos, message);
        Ok(())
    }

    /// Removes and returns every message due at `current_step`, in
    /// canonical order.
    pub fn deliver_due(&mut self, current_step: u32) -> Vec<Message> {
        let (due, rest): (Vec<Message>, Vec<Message>) =
            std::mem::take(&mut self.pending).into_iter().partition(|m| m.delivery_step <= current_step);
        self.pending = rest;
        due
    }

    pub fn drain(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.pending)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeetingStatus {
    Pending,
    Started,
    Held,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeetingRecord {
    pub meeting_id: MeetingId,
    pub organizer: AgentId,
    pub invitees: Vec<AgentId>,
    /// Organizer plus everyone who has RSVPed.
    pub attending: BTreeSet<AgentId>,
    pub about_task: Option<TaskId>,
    pub invite_message: MessageId,
    pub invite_step: u32,
    pub earliest_start: u32,
    pub start_step: Option<u32>,
    pub duration_steps: u32,
    pub cost_hours: f64,
    pub start_message: Option<MessageId>,
    pub status: MeetingStatus,
}

impl MeetingRecord {
    pub fn participant_count(&self) -> usize {
        self.attending.len()
    }

    pub fn is_invited(&self, agent: &AgentId) -> bool {
        self.invitees.contains(agent)
    }

    pub fn rsvp(&mut self, agent: &AgentId) {
        if self.status == MeetingStatus::Pending && self.is_invited(agent) {
            self.attending.insert(agent.clone());
        }
    }
}

/// Creates the invite for a meeting and its pending record. The invite is
/// delivered at `current_step + 1`; the meeting cannot start before
/// `current_step + 2` so invitees get one step to RSVP.
pub fn schedule_meeting(
    meeting_id: MeetingId,
    message_id: MessageId,
    organizer: &AgentId,
    participants: &[AgentId],
    about_task: Option<TaskId>,
    content: String,
    current_step: u32,
) -> Result<(Message, MeetingRecord), CommError> {
    let mut all: BTreeSet<AgentId> = participants.iter().cloned().collect();
    all.insert(organizer.clone());
    if all.len() < 2 {
        return Err(CommError::MeetingNeedsParticipants);
    }
    let invitees: Vec<AgentId> = all.iter().filter(|a| *a != organizer).cloned().collect();
    let msg = Message {
        message_id,
        thread_id: message_id,
        from_agent: organizer.clone(),
        to_agents: invitees.clone(),
        channel: Channel::Meeting,
        message_type: MessageType::MeetingInvite,
        about_task: about_task.clone(),
        content,
        sent_step: current_step,
        delivery_step: current_step + 1,
        meeting_id: Some(meeting_id),
        participants: all.iter().cloned().collect(),
        in_reply_to: None,
        resolves: false,
    };
    let record = MeetingRecord {
        meeting_id,
        organizer: organizer.clone(),
        invitees,
        attending: [organizer.clone()].into_iter().collect(),
        about_task,
        invite_message: message_id,
        invite_step: current_step,
        earliest_start: current_step + 2,
        start_step: None,
        duration_steps: 0,
        cost_hours: 0.0,
        start_message: None,
        status: MeetingStatus::Pending,
    };
    Ok((msg, record))
}

/// Earliest step a meeting invited at `invite_step` can start given the
/// first free step of each attendee.
pub fn meeting_start_step(invite_step: u32, attendee_free_from: &[u32]) -> u32 {
    attendee_free_from.iter().copied().fold(invite_step + 2, u32::max)
}
