//! Scripted strategies and trace checks shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamsim_core::alignment::{RuleBasedEvaluator, AF_MAX, AF_MIN};
use teamsim_core::comm::{Message, MessageId, MessageType, MAX_REPLY_ROUNDS};
use teamsim_core::model::{
    validate_scenario, AgentId, AgentProfile, EvaluatorName, HeuristicConfig, PolicyName, Role, Scenario, TaskSpec,
};
use teamsim_core::planner::{DecompositionPlan, PlanError, Planned, PlannedSubtask, Planner};
use teamsim_core::policy::{Decision, Intention, IntentionKind, Policy, PolicyContext};
use teamsim_core::scheduler::{SimResult, Strategies};
use teamsim_core::task_graph::TaskNode;
use teamsim_core::trace::EventPayload;

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn agent_key(a: &AgentId) -> u64 {
    a.as_str().bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64))
}

/// Picks intentions and reply outcomes at random, reproducibly per
/// (seed, agent, step).
pub struct RandomPolicy {
    pub seed: u64,
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&self, ctx: &PolicyContext) -> Decision {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.seed, agent_key(&ctx.agent.agent_id), ctx.step as u64]));
        let kind = match rng.random_range(0..20) {
            0..=8 => IntentionKind::ContinueTask,
            9..=12 => IntentionKind::CheckMessages,
            13..=14 => IntentionKind::RequestHelp,
            15..=16 => IntentionKind::NeedClarification,
            17..=18 => IntentionKind::ReportProgress,
            _ => IntentionKind::ScheduleMeeting,
        };
        let task = if ctx.assignments.is_empty() {
            None
        } else {
            Some(ctx.assignments[rng.random_range(0..ctx.assignments.len())].task.task_id.clone())
        };
        Decision { intention: Intention::new(kind, task, "random"), warning: None }
    }

    fn resolves(&self, ctx: &PolicyContext, request: &Message) -> bool {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix(&[self.seed, agent_key(&ctx.agent.agent_id), request.message_id.0]));
        rng.random_bool(0.3)
    }
}

/// Splits each task into a random DAG of 1..=5 parts.
pub struct RandomDagPlanner {
    pub seed: u64,
}

impl Planner for RandomDagPlanner {
    fn name(&self) -> &str {
        "random_dag"
    }

    fn decompose(&self, task: &TaskNode, team: &[AgentProfile]) -> Result<Planned, PlanError> {
        if !team.iter().any(|a| a.role == Role::Worker) {
            return Err(PlanError::EmptyTeam);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.seed, task.estimated_hours.to_bits()]));
        let n = rng.random_range(1..=5usize);
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let total: f64 = weights.iter().sum();
        let skills: Vec<String> = task.required_skills.iter().cloned().collect();
        let subtasks = (0..n)
            .map(|i| PlannedSubtask {
                description: format!("{} ({})", task.description, i + 1),
                estimated_hours: task.estimated_hours * weights[i] / total,
                required_skills: vec![skills[rng.random_range(0..skills.len())].clone()],
                suggested_assignee: None,
                dependencies: (0..i).filter(|_| rng.random_bool(0.35)).collect(),
            })
            .collect();
        Ok(Planned { plan: DecompositionPlan { subtasks, rationale: "random".into() }, warnings: vec![] })
    }
}

const SKILLS: [&str; 6] = ["backend", "api", "oauth", "testing", "database", "frontend"];

pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workers = rng.random_range(1..=6usize);
    let mut team = vec![AgentProfile::new("M1", Role::Manager, &SKILLS[..2])];
    for i in 0..workers {
        let a = rng.random_range(0..SKILLS.len());
        let b = rng.random_range(0..SKILLS.len());
        team.push(AgentProfile::new(&format!("W{}", i + 1), Role::Worker, &[SKILLS[a], SKILLS[b]]));
    }
    let tasks = (0..rng.random_range(1..=2))
        .map(|i| TaskSpec {
            description: format!("task {}", i + 1),
            estimated_hours: rng.random_range(1.0..10.0),
            required_skills: (0..rng.random_range(1..=4)).map(|_| SKILLS[rng.random_range(0..6)].to_string()).collect(),
        })
        .collect();
    validate_scenario(Scenario {
        name: format!("random-{seed}"),
        team,
        tasks,
        policy_name: PolicyName::Heuristic,
        evaluator_name: EvaluatorName::RuleBased,
        seed,
        hours_per_step: 0.25,
        max_steps: rng.random_range(8..=100),
        heuristic: HeuristicConfig::default(),
    })
    .expect("generated scenario is valid")
}

pub fn random_strategies(seed: u64) -> Strategies {
    Strategies {
        policy: Arc::new(RandomPolicy { seed }),
        evaluator: Arc::new(RuleBasedEvaluator),
        planner: Arc::new(RandomDagPlanner { seed }),
    }
}

pub fn sent(r: &SimResult) -> BTreeMap<MessageId, Message> {
    r.trace
        .events
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::MessageSent { message, .. } => Some((message.message_id, message.clone())),
            _ => None,
        })
        .collect()
}

/// Every violated simulation invariant, as readable strings.
pub fn violations(r: &SimResult) -> Vec<String> {
    let mut out = Vec::new();
    let messages = sent(r);
    let agents: Vec<AgentId> = r.scenario.team.iter().map(|a| a.agent_id.clone()).collect();

    // one action per agent per step
    let mut per_step: BTreeMap<(u32, AgentId), u32> = BTreeMap::new();
    let mut first_read: BTreeMap<(MessageId, AgentId), u32> = BTreeMap::new();
    let mut delivered: BTreeMap<(MessageId, AgentId), Vec<u32>> = BTreeMap::new();
    for e in &r.trace.events {
        match &e.payload {
            EventPayload::Action { agent, reads, .. } => {
                *per_step.entry((e.step, agent.clone())).or_default() += 1;
                for id in reads {
                    first_read.entry((*id, agent.clone())).or_insert(e.step);
                }
            }
            EventPayload::MessageDelivered { message_id, to, .. } => {
                delivered.entry((*message_id, to.clone())).or_default().push(e.step);
            }
            EventPayload::AfUpdate { new_af, .. } if !(AF_MIN..=AF_MAX).contains(new_af) => {
                out.push(format!("AF {new_af} out of range at step {}", e.step));
            }
            _ => {}
        }
    }
    for s in 0..r.steps_run {
        for a in &agents {
            let n = per_step.get(&(s, a.clone())).copied().unwrap_or(0);
            if n != 1 {
                out.push(format!("{a} logged {n} actions at step {s}"));
            }
        }
    }
    if per_step.keys().any(|(s, _)| *s >= r.steps_run) {
        out.push("action logged after the last step".into());
    }

    for ((id, a), step) in &first_read {
        match messages.get(id) {
            Some(m) if *step <= m.sent_step => out.push(format!("{a} read {id} at {step}, sent at {}", m.sent_step)),
            Some(m) if !m.to_agents.contains(a) => out.push(format!("{a} read {id} not addressed to it")),
            None => out.push(format!("{a} read unknown message {id}")),
            _ => {}
        }
    }

    for (id, m) in &messages {
        for to in &m.to_agents {
            let got = delivered.get(&(*id, to.clone())).cloned().unwrap_or_default();
            let expected = if m.delivery_step < r.steps_run { vec![m.delivery_step] } else { vec![] };
            if got != expected {
                out.push(format!("{id} to {to}: delivered at {got:?}, expected {expected:?}"));
            }
        }
    }
    for (id, _) in delivered.keys() {
        if !messages.contains_key(id) {
            out.push(format!("delivered unknown message {id}"));
        }
    }

    let mut depth: BTreeMap<MessageId, u32> = BTreeMap::new();
    for m in messages.values().filter(|m| m.message_type == MessageType::Response) {
        *depth.entry(m.thread_id).or_default() += 1;
    }
    for (t, d) in depth {
        if d > MAX_REPLY_ROUNDS {
            out.push(format!("thread {t} has {d} replies"));
        }
    }

    // progress credited equals progress recorded
    let mut credited: BTreeMap<String, f64> = BTreeMap::new();
    for e in &r.trace.events {
        if let EventPayload::Progress { task, effective_hours, .. } = &e.payload {
            *credited.entry(task.as_str().to_string()).or_default() += effective_hours;
        }
    }
    for n in r.graph.nodes.values().filter(|n| n.is_leaf() && n.parent_id.is_some()) {
        let c = credited.get(n.task_id.as_str()).copied().unwrap_or(0.0);
        if (c - n.accumulated_effective_hours).abs() > 1e-9 {
            out.push(format!("{}: credited {c}, accumulated {}", n.task_id, n.accumulated_effective_hours));
        }
    }
    out
}
