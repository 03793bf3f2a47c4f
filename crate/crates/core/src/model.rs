//! Domain types shared by every part of the engine: identifiers, the step
//! clock, agent profiles and scenarios.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HOURS_PER_STEP: f64 = 0.25;
pub const DEFAULT_MAX_STEPS: u32 = 160;

/// Tolerance used when snapping a quotient onto the step grid, so that
/// `1.0 / 0.25` and friends do not round up because of representation error.
const GRID_EPS: f64 = 1e-9;

/// Compares two identifiers treating embedded digit runs as numbers, so
/// `W2 < W10` and `T1.2 < T1.10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let mut ai = a.as_bytes();
    let mut bi = b.as_bytes();
    loop {
        match (ai.first(), bi.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let na = ai.iter().take_while(|c| c.is_ascii_digit()).count();
                let nb = bi.iter().take_while(|c| c.is_ascii_digit()).count();
                let (da, ra) = ai.split_at(na);
                let (db, rb) = bi.split_at(nb);
                let ta = trim_zeros(da);
                let tb = trim_zeros(db);
                let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb)).then(na.cmp(&nb));
                if ord != Ordering::Equal {
                    return ord;
                }
                ai = ra;
                bi = rb;
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(y);
                }
                ai = &ai[1..];
                bi = &bi[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let n = d.iter().take_while(|c| **c == b'0').count();
    &d[n..]
}

macro_rules! natural_id {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl Ord for $name {
            fn cmp(&self, other: &Self) -> Ordering {
                natural_cmp(&self.0, &other.0)
            }
        }

        impl PartialOrd for $name {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

natural_id!(
    /// Agent identifier such as `M1` or `W12`.
    AgentId
);
natural_id!(
    /// Task identifier. Roots are `T1`, `T2`, ...; subtasks `T1.1`, `T1.2`, ...
    TaskId
);

/// Skill tags are compared by exact, lower-cased equality.
pub type Skill = String;

pub fn normalize_skill(s: &str) -> Skill {
    s.trim().to_lowercase()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Manager,
    Worker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub name: String,
    pub role: Role,
    pub skills: BTreeSet<Skill>,
    #[serde(default)]
    pub busy_until_step: u32,
}

impl AgentProfile {
    pub fn new(id: &str, role: Role, skills: &[&str]) -> Self {
        Self {
            agent_id: AgentId::new(id),
            name: id.to_string(),
            role,
            skills: skills.iter().map(|s| normalize_skill(s)).collect(),
            busy_until_step: 0,
        }
    }

    pub fn is_manager(&self) -> bool {
        self.role == Role::Manager
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub step: u32,
    pub hours_per_step: f64,
    pub max_steps: u32,
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new(DEFAULT_HOURS_PER_STEP, DEFAULT_MAX_STEPS)
    }
}

impl SimClock {
    pub fn new(hours_per_step: f64, max_steps: u32) -> Self {
        assert!(hours_per_step > 0.0, "hours_per_step must be positive");
        Self { step: 0, hours_per_step, max_steps }
    }

    pub fn finished(&self) -> bool {
        self.step >= self.max_steps
    }

    /// Moves to the next step. Returns false (and stays put) at the cap.
    pub fn advance(&mut self) -> bool {
        if self.step >= self.max_steps {
            return false;
        }
        self.step += 1;
        true
    }

    /// Wall-clock hours elapsed after `steps` complete steps.
    pub fn hours(&self, steps: u32) -> f64 {
        steps as f64 * self.hours_per_step
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("contract violation: negative hours {0}")]
    NegativeHours(f64),
    #[error("contract violation: hours_per_step must be positive, got {0}")]
    BadStepSize(f64),
}

/// Number of whole steps needed to cover `hours`, rounding up onto the grid.
pub fn hours_to_steps(hours: f64, hours_per_step: f64) -> Result<u32, ModelError> {
    if hours_per_step.is_nan() || hours_per_step <= 0.0 {
        return Err(ModelError::BadStepSize(hours_per_step));
    }
    if hours < 0.0 || hours.is_nan() {
        return Err(ModelError::NegativeHours(hours));
    }
    if hours == 0.0 {
        return Ok(0);
    }
    let q = hours / hours_per_step;
    let nearest = q.round();
    let steps = if (q - nearest).abs() <= GRID_EPS * q.max(1.0) { nearest } else { q.ceil() };
    Ok((steps as u32).max(1))
}

/// Fraction of `required` the agent covers; 1.0 when nothing is required.
pub fn skill_match_score(agent: &AgentProfile, required: &BTreeSet<Skill>) -> f64 {
    if required.is_empty() {
        return 1.0;
    }
    let hits = required.iter().filter(|s| agent.skills.contains(*s)).count();
    hits as f64 / required.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub description: String,
    #[serde(rename = "hours")]
    pub estimated_hours: f64,
    #[serde(rename = "skills", default)]
    pub required_skills: Vec<Skill>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyName {
    #[serde(rename = "no_comm")]
    NoComm,
    #[serde(rename = "fixed_steps")]
    FixedSteps,
    #[serde(rename = "c2c_heuristic")]
    Heuristic,
    #[serde(rename = "c2c_llm")]
    Llm,
}

impl PolicyName {
    pub const ALL: [PolicyName; 4] =
        [PolicyName::NoComm, PolicyName::FixedSteps, PolicyName::Heuristic, PolicyName::Llm];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyName::NoComm => "no_comm",
            PolicyName::FixedSteps => "fixed_steps",
            PolicyName::Heuristic => "c2c_heuristic",
            PolicyName::Llm => "c2c_llm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, PolicyName::Llm)
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorName {
    RuleBased,
    Llm,
}

impl EvaluatorName {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvaluatorName::RuleBased => "rule_based",
            EvaluatorName::Llm => "llm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rule_based" => Some(Self::RuleBased),
            "llm" => Some(Self::Llm),
            _ => None,
        }
    }
}

impl fmt::Display for EvaluatorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tunables for the deterministic communicating policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Alignment below which an agent considers itself under-informed.
    pub af_threshold: f64,
    /// Worked steps without an alignment gain before asking for help.
    pub stuck_steps: u32,
    /// Progress fractions that trigger a report to the manager.
    pub report_milestones: Vec<f64>,
    /// Subtasks smaller than this (hours) are not reported on.
    pub report_min_task_hours: f64,
    /// Requests are skipped when the remaining wall-clock work at the
    /// current alignment is below this many hours.
    pub min_remaining_hours: f64,
    /// Help requests shorter than this many words go by chat.
    pub short_message_words: usize,
    /// Number of blocked dependants that justifies a meeting.
    pub meeting_min_blocked: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            af_threshold: 0.45,
            stuck_steps: 4,
            report_milestones: vec![0.5, 1.0],
            report_min_task_hours: 4.0,
            min_remaining_hours: 2.0,
            short_message_words: 120,
            meeting_min_blocked: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Free-form label, typically the complexity tier.
    #[serde(default)]
    pub name: String,
    pub team: Vec<AgentProfile>,
    pub tasks: Vec<TaskSpec>,
    pub policy_name: PolicyName,
    pub evaluator_name: EvaluatorName,
    pub seed: u64,
    #[serde(default = "default_hps")]
    pub hours_per_step: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default)]
    pub heuristic: HeuristicConfig,
}

fn default_hps() -> f64 {
    DEFAULT_HOURS_PER_STEP
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

impl Scenario {
    pub fn manager(&self) -> &AgentProfile {
        self.team.iter().find(|a| a.is_manager()).expect("validated scenario has a manager")
    }

    pub fn workers(&self) -> impl Iterator<Item = &AgentProfile> {
        self.team.iter().filter(|a| !a.is_manager())
    }

    /// `1M+4W` style label derived from the team composition.
    pub fn team_label(&self) -> String {
        let managers = self.team.iter().filter(|a| a.is_manager()).count();
        format!("{}M+{}W", managers, self.team.len() - managers)
    }

    pub fn clock(&self) -> SimClock {
        SimClock::new(self.hours_per_step, self.max_steps)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("empty team")]
    EmptyTeam,
    #[error("no manager")]
    NoManager,
    #[error("multiple managers: {0:?}")]
    MultipleManagers(Vec<String>),
    #[error("no tasks")]
    NoTasks,
    #[error("non-positive effort: task {index} has estimated_hours {hours}")]
    NonPositiveEffort { index: usize, hours: f64 },
    #[error("duplicate agent id {0}")]
    DuplicateAgent(String),
    #[error("agent {0} has no skills")]
    NoSkills(String),
    #[error("bad step size {0}")]
    BadStepSize(f64),
    #[error("max_steps must be positive")]
    ZeroMaxSteps,
}

/// Enforces scenario invariants and lower-cases every skill tag.
pub fn validate_scenario(mut raw: Scenario) -> Result<Scenario, ScenarioError> {
    if raw.team.is_empty() {
        return Err(ScenarioError::EmptyTeam);
    }
    let managers: Vec<String> = raw.team.iter().filter(|a| a.is_manager()).map(|a| a.agent_id.0.clone()).collect();
    match managers.len() {
        0 => return Err(ScenarioError::NoManager),
        1 => {}
        _ => return Err(ScenarioError::MultipleManagers(managers)),
    }
    if raw.tasks.is_empty() {
        return Err(ScenarioError::NoTasks);
    }
    for (index, t) in raw.tasks.iter().enumerate() {
        if t.estimated_hours.is_nan() || t.estimated_hours <= 0.0 {
            return Err(ScenarioError::NonPositiveEffort { index, hours: t.estimated_hours });
        }
    }
    if raw.hours_per_step.is_nan() || raw.hours_per_step <= 0.0 {
        return Err(ScenarioError::BadStepSize(raw.hours_per_step));
    }
    if raw.max_steps == 0 {
        return Err(ScenarioError::ZeroMaxSteps);
    }
    let mut seen = BTreeSet::new();
    for a in &mut raw.team {
        if !seen.insert(a.agent_id.clone()) {
            return Err(ScenarioError::DuplicateAgent(a.agent_id.0.clone()));
        }
        a.skills = a.skills.iter().map(|s| normalize_skill(s)).collect();
        if a.skills.is_empty() {
            return Err(ScenarioError::NoSkills(a.agent_id.0.clone()));
        }
    }
    for t in &mut raw.tasks {
        t.required_skills = t.required_skills.iter().map(|s| normalize_skill(s)).collect();
    }
    raw.team.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    Ok(raw)
}
