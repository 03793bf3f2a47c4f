//! Manager-side decomposition of root tasks into subtasks and the
//! assignment of those subtasks to team members.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::adapter::{extract_json_object, ChatMessage, ModelAdapter};
use crate::alignment::truncate;
use crate::model::{skill_match_score, AgentId, AgentProfile, Role, Skill, TaskId};
use crate::prompts::decomposition_prompt;
use crate::task_graph::{topo_order, SubtaskSpec, TaskGraph, TaskNode};

/// Accepted deviation of a model plan's total hours from the root estimate.
pub const HOURS_TOLERANCE: f64 = 0.20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedSubtask {
    pub description: String,
    pub estimated_hours: f64,
    pub required_skills: Vec<Skill>,
    pub suggested_assignee: Option<AgentId>,
    pub dependencies: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub subtasks: Vec<PlannedSubtask>,
    pub rationale: String,
}

impl DecompositionPlan {
    pub fn specs(&self) -> Vec<SubtaskSpec> {
        self.subtasks
            .iter()
            .map(|s| SubtaskSpec {
                description: s.description.clone(),
                estimated_hours: s.estimated_hours,
                required_skills: s.required_skills.clone(),
                dependencies: s.dependencies.clone(),
            })
            .collect()
    }

    pub fn total_hours(&self) -> f64 {
        self.subtasks.iter().map(|s| s.estimated_hours).sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("empty team")]
    EmptyTeam,
    #[error("invalid plan: {0}")]
    Invalid(String),
}

/// A plan plus anything worth recording about how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct Planned {
    pub plan: DecompositionPlan,
    pub warnings: Vec<String>,
}

pub trait Planner: Send + Sync {
    fn name(&self) -> &str;

    fn decompose(&self, task: &TaskNode, team: &[AgentProfile]) -> Result<Planned, PlanError>;
}

fn workers(team: &[AgentProfile]) -> Vec<&AgentProfile> {
    let mut w: Vec<&AgentProfile> = team.iter().filter(|a| a.role == Role::Worker).collect();
    w.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    w
}

/// One subtask per worker with equal hours. Each subtask takes
/// `ceil(skills / workers)` consecutive skills from the task's list,
/// wrapping around.
pub fn decompose_even(task: &TaskNode, team: &[AgentProfile]) -> Result<DecompositionPlan, PlanError> {
    let ws = workers(team);
    if ws.is_empty() {
        return Err(PlanError::EmptyTeam);
    }
    let n = ws.len();
    let skills: Vec<&Skill> = task.required_skills.iter().collect();
    let per = if skills.is_empty() { 0 } else { skills.len().div_ceil(n) };
    let hours = task.estimated_hours / n as f64;

    let mut suggested: BTreeMap<&AgentId, usize> = BTreeMap::new();
    let mut subtasks = Vec::with_capacity(n);
    for i in 0..n {
        let mut required: Vec<Skill> = Vec::new();
        for j in 0..per {
            let s = skills[(i * per + j) % skills.len()];
            if !required.contains(s) {
                required.push(s.clone());
            }
        }
        let set = required.iter().cloned().collect();
        // fewest suggestions so far, then best match, then lowest id
        let pick = ws
            .iter()
            .min_by(|a, b| {
                let ka = suggested.get(&a.agent_id).copied().unwrap_or(0);
                let kb = suggested.get(&b.agent_id).copied().unwrap_or(0);
                ka.cmp(&kb)
                    .then(skill_match_score(b, &set).total_cmp(&skill_match_score(a, &set)))
                    .then(a.agent_id.cmp(&b.agent_id))
            })
            .expect("non-empty");
        *suggested.entry(&pick.agent_id).or_default() += 1;
        subtasks.push(PlannedSubtask {
            description: format!("{} (part {} of {})", task.description, i + 1, n),
            estimated_hours: hours,
            required_skills: required,
            suggested_assignee: Some(pick.agent_id.clone()),
            dependencies: Vec::new(),
        });
    }
    Ok(DecompositionPlan { subtasks, rationale: "even split across workers".into() })
}

fn resolve_member(team: &[AgentProfile], name: &str) -> Option<AgentId> {
    let name = name.trim();
    // the prompt shows names, but models sometimes echo ids or decorate them
    team.iter()
        .find(|a| a.name.eq_ignore_ascii_case(name) || a.agent_id.as_str().eq_ignore_ascii_case(name))
        .or_else(|| {
            team.iter().find(|a| {
                let lower = name.to_ascii_lowercase();
                lower.starts_with(&a.name.to_ascii_lowercase())
                    || lower.starts_with(&a.agent_id.as_str().to_ascii_lowercase())
            })
        })
        .map(|a| a.agent_id.clone())
}

/// Parses a decomposition response and checks it against `task` and `team`.
pub fn parse_plan(text: &str, task: &TaskNode, team: &[AgentProfile]) -> Result<DecompositionPlan, PlanError> {
    let bad = |s: String| PlanError::Invalid(s);
    let v = extract_json_object(text).ok_or_else(|| bad("no JSON object".into()))?;
    let arr = v.get("subtasks").and_then(Value::as_array).ok_or_else(|| bad("missing subtasks".into()))?;
    let mut subtasks = Vec::with_capacity(arr.len());
    for (i, s) in arr.iter().enumerate() {
        let description = s
            .get("description")
            .and_then(Value::as_str)
            .ok_or_else(|| bad(format!("subtask {i} lacks description")))?
            .to_string();
        let estimated_hours = s
            .get("estimated_hours")
            .and_then(Value::as_f64)
            .ok_or_else(|| bad(format!("subtask {i} lacks estimated_hours")))?;
        let required_skills = s
            .get("required_skills")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(crate::model::normalize_skill).collect())
            .unwrap_or_default();
        let suggested_assignee = match s.get("suggested_assignee").and_then(Value::as_str) {
            None => None,
            Some(n) if n.trim().is_empty() => None,
            Some(n) => Some(resolve_member(team, n).ok_or_else(|| bad(format!("unknown assignee {n:?}")))?),
        };
        let mut dependencies = Vec::new();
        for d in s.get("dependencies").and_then(Value::as_array).into_iter().flatten() {
            let d = d.as_u64().ok_or_else(|| bad(format!("subtask {i} has a non-index dependency")))?;
            dependencies.push(d as usize);
        }
        subtasks.push(PlannedSubtask {
            description,
            estimated_hours,
            required_skills,
            suggested_assignee,
            dependencies,
        });
    }
    let rationale = v.get("decomposition_rationale").and_then(Value::as_str).unwrap_or_default().to_string();
    let plan = DecompositionPlan { subtasks, rationale };
    validate_plan(&plan, task)?;
    Ok(plan)
}

/// Hours within tolerance, positive efforts, in-range acyclic dependencies.
pub fn validate_plan(plan: &DecompositionPlan, task: &TaskNode) -> Result<(), PlanError> {
    let n = plan.subtasks.len();
    if n == 0 {
        return Err(PlanError::Invalid("no subtasks".into()));
    }
    for (i, s) in plan.subtasks.iter().enumerate() {
        if !s.estimated_hours.is_finite() || s.estimated_hours <= 0.0 {
            return Err(PlanError::Invalid(format!("subtask {i} has non-positive hours")));
        }
        if let Some(d) = s.dependencies.iter().find(|&&d| d >= n || d == i) {
            return Err(PlanError::Invalid(format!("subtask {i} has bad dependency {d} of {n}")));
        }
    }
    let total = plan.total_hours();
    if (total - task.estimated_hours).abs() > HOURS_TOLERANCE * task.estimated_hours + 1e-9 {
        return Err(PlanError::Invalid(format!("total hours {total} outside tolerance of {}", task.estimated_hours)));
    }
    let deps: Vec<Vec<usize>> = plan.subtasks.iter().map(|s| s.dependencies.clone()).collect();
    if topo_order(&deps).is_none() {
        return Err(PlanError::Invalid("cycle detected".into()));
    }
    Ok(())
}

/// Asks the model for a plan, retries once on an invalid answer and
/// otherwise falls back to [`decompose_even`].
pub fn decompose_llm(task: &TaskNode, team: &[AgentProfile], adapter: &dyn ModelAdapter) -> Result<Planned, PlanError> {
    let team_size = workers(team).len();
    if team_size == 0 {
        return Err(PlanError::EmptyTeam);
    }
    let prompt = decomposition_prompt(task, team, team_size);
    let mut warnings = Vec::new();
    for attempt in 1..=2 {
        match adapter.complete(&[ChatMessage::user(prompt.clone())]) {
            Ok(text) => match parse_plan(&text, task, team) {
                Ok(plan) => return Ok(Planned { plan, warnings }),
                Err(e) => warnings.push(format!(
                    "decomposition attempt {attempt} for {}: {e} ({})",
                    task.task_id,
                    truncate(&text, 80)
                )),
            },
            Err(e) => warnings.push(format!("decomposition attempt {attempt} for {}: {e}", task.task_id)),
        }
    }
    warnings.push(format!("falling back to even decomposition for {}", task.task_id));
    Ok(Planned { plan: decompose_even(task, team)?, warnings })
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvenPlanner;

impl Planner for EvenPlanner {
    fn name(&self) -> &str {
        "even"
    }

    fn decompose(&self, task: &TaskNode, team: &[AgentProfile]) -> Result<Planned, PlanError> {
        Ok(Planned { plan: decompose_even(task, team)?, warnings: Vec::new() })
    }
}

pub struct LlmPlanner {
    adapter: Arc<dyn ModelAdapter>,
}

impl LlmPlanner {
    pub fn new(adapter: Arc<dyn ModelAdapter>) -> Self {
        Self { adapter }
    }
}

impl Planner for LlmPlanner {
    fn name(&self) -> &str {
        "llm"
    }

    fn decompose(&self, task: &TaskNode, team: &[AgentProfile]) -> Result<Planned, PlanError> {
        decompose_llm(task, team, self.adapter.as_ref())
    }
}

/// Agent to task list, in assignment order.
pub type Assignments = BTreeMap<AgentId, Vec<TaskId>>;

/// Assigns the materialized subtasks `ids` of `plan`, extending `current`.
/// Workers are balanced by load. A suggestion is honoured when the
/// suggested member has a skill match and no worker carries less load;
/// otherwise the best match among the least-loaded workers wins, lower id
/// first. The manager only receives work when a plan names it.
pub fn assign(
    plan: &DecompositionPlan,
    ids: &[TaskId],
    graph: &TaskGraph,
    team: &[AgentProfile],
    current: &mut Assignments,
) -> Result<Vec<String>, PlanError> {
    let ws = workers(team);
    if ws.is_empty() {
        return Err(PlanError::EmptyTeam);
    }
    let mut warnings = Vec::new();
    for (sub, id) in plan.subtasks.iter().zip(ids) {
        let required = &graph.nodes[id].required_skills;
        let load = |a: &AgentId, cur: &Assignments| cur.get(a).map_or(0, Vec::len);
        let min_load = ws.iter().map(|w| load(&w.agent_id, current)).min().unwrap_or(0);
        let suggested = sub
            .suggested_assignee
            .as_ref()
            .and_then(|s| team.iter().find(|a| &a.agent_id == s))
            .filter(|a| skill_match_score(a, required) > 0.0)
            .filter(|a| a.role == Role::Manager || load(&a.agent_id, current) == min_load);
        let chosen = match suggested {
            Some(a) => a.agent_id.clone(),
            None => {
                let least: Vec<&&AgentProfile> = ws.iter().filter(|w| load(&w.agent_id, current) == min_load).collect();
                let best = least
                    .iter()
                    .max_by(|a, b| {
                        skill_match_score(a, required)
                            .total_cmp(&skill_match_score(b, required))
                            .then(b.agent_id.cmp(&a.agent_id))
                    })
                    .expect("non-empty");
                if ws.iter().all(|w| skill_match_score(w, required) == 0.0) {
                    warnings.push(format!("no worker matches the skills of {id}; assigned to {}", best.agent_id));
                }
                best.agent_id.clone()
            }
        };
        current.entry(chosen).or_default().push(id.clone());
    }
    Ok(warnings)
}
