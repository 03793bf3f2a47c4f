//! Append-only event log of a run, serialized as JSON lines.
//!
//! Each line is `{"seq", "step", "kind", ...payload}`. Field order follows
//! the struct declarations below, so identical runs produce identical bytes.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::comm::{Channel, Message, MessageId, MessageType};
use crate::model::{AgentId, TaskId};
use crate::policy::IntentionKind;
use crate::scheduler::ActionKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    /// One per agent per step.
    Action {
        agent: AgentId,
        action: ActionKind,
        target: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intention: Option<IntentionKind>,
        /// Steps the action still occupies after this one.
        remaining: u32,
        /// Messages consumed by the agent in this step.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        reads: Vec<MessageId>,
    },
    MessageSent {
        message: Message,
        cost_hours: f64,
        /// Step the producing action began.
        initiated_step: u32,
    },
    /// One per (message, recipient).
    MessageDelivered {
        message_id: MessageId,
        thread_id: MessageId,
        from: AgentId,
        to: AgentId,
        message_type: MessageType,
        channel: Channel,
        sent_step: u32,
    },
    AfUpdate {
        agent: AgentId,
        task: TaskId,
        old_af: f64,
        delta: f64,
        new_af: f64,
        cause: String,
    },
    Progress {
        agent: AgentId,
        task: TaskId,
        af: f64,
        effective_hours: f64,
        accumulated: f64,
    },
    TaskDone {
        task: TaskId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent: Option<AgentId>,
    },
    Warning {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub step: u32,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, step: u32, payload: EventPayload) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { seq, step, payload });
    }

    pub fn warn(&mut self, step: u32, message: impl Into<String>) {
        self.push(step, EventPayload::Warning { message: message.into() });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match &e.payload {
            EventPayload::Warning { message } => Some(message.as_str()),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEvent = serde_json::from_str(&line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
            events.push(e);
        }
        Ok(Self { events })
    }
}
