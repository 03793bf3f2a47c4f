//! Scenario files (YAML) and run configuration.
//!
//! ```yaml
//! name: medium
//! team: 1M+4W            # or a list of {id, name, role, skills}
//! tasks:
//!   - description: "Integrate an external API"
//!     hours: 24.0
//!     skills: [backend, api, oauth]
//! policy: c2c_heuristic
//! evaluator: rule_based
//! seed: 7
//! ```
//!
//! The `NM+KW` shorthand draws skills from `skill_pool`, or from the task
//! skills in order of first appearance. Worker `i` (0-based) gets pool
//! entries `2i` and `2i+1`, wrapping; the manager gets the first two.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::AdapterSettings;
use crate::model::{
    normalize_skill, validate_scenario, AgentId, AgentProfile, EvaluatorName, HeuristicConfig, PolicyName, Role,
    Scenario, ScenarioError, Skill, TaskSpec, DEFAULT_HOURS_PER_STEP, DEFAULT_MAX_STEPS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub role: Role,
    pub skills: Vec<Skill>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TeamSpec {
    Shorthand(String),
    Agents(Vec<AgentSpec>),
}

fn default_policy() -> PolicyName {
    PolicyName::NoComm
}

fn default_evaluator() -> EvaluatorName {
    EvaluatorName::RuleBased
}

fn default_hps() -> f64 {
    DEFAULT_HOURS_PER_STEP
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub team: TeamSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_pool: Option<Vec<Skill>>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "default_policy")]
    pub policy: PolicyName,
    #[serde(default = "default_evaluator")]
    pub evaluator: EvaluatorName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hps")]
    pub hours_per_step: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default)]
    pub heuristic: HeuristicConfig,
}

/// Where in the source a problem was found.
#[derive(Clone, Debug, PartialEq)]
pub enum Location {
    Position { line: usize, column: usize },
    Path(String),
    Unknown,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Position { line, column } => write!(f, "line {line}, column {column}"),
            Location::Path(p) => f.write_str(p),
            Location::Unknown => f.write_str("unknown location"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{source_name}: {location}: {message}")]
    Parse { source_name: String, location: Location, message: String },
    #[error("{source_name}: {0}", source_name = .1)]
    Invalid(#[source] ScenarioError, String),
    #[error("cannot read {path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
}

impl ConfigError {
    pub fn location(&self) -> Option<&Location> {
        match self {
            ConfigError::Parse { location, .. } => Some(location),
            _ => None,
        }
    }
}

/// Parses `NM+KW` into (managers, workers).
pub fn parse_shorthand(s: &str) -> Option<(usize, usize)> {
    let s = s.trim().to_ascii_uppercase();
    let (m, w) = s.split_once('+')?;
    let m: usize = m.trim().strip_suffix('M')?.trim().parse().ok()?;
    let w: usize = w.trim().strip_suffix('W')?.trim().parse().ok()?;
    Some((m, w))
}

/// Pool skills in order of first appearance across the tasks.
pub fn task_skill_pool(tasks: &[TaskSpec]) -> Vec<Skill> {
    let mut pool: Vec<Skill> = Vec::new();
    for t in tasks {
        for s in &t.required_skills {
            let s = normalize_skill(s);
            if !pool.contains(&s) {
                pool.push(s);
            }
        }
    }
    pool
}

fn pick(pool: &[Skill], start: usize) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for j in 0..2 {
        let s = pool[(start + j) % pool.len()].as_str();
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

pub fn expand_team(managers: usize, workers: usize, pool: &[Skill]) -> Vec<AgentProfile> {
    let mut team = Vec::with_capacity(managers + workers);
    for i in 0..managers {
        team.push(AgentProfile::new(&format!("M{}", i + 1), Role::Manager, &pick(pool, 0)));
    }
    for i in 0..workers {
        team.push(AgentProfile::new(&format!("W{}", i + 1), Role::Worker, &pick(pool, 2 * i)));
    }
    team
}

fn parse_error(source_name: &str, location: Location, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse { source_name: source_name.to_string(), location, message: message.into() }
}

/// Parses and validates scenario text. `source_name` only labels errors.
pub fn parse_scenario_str(text: &str, source_name: &str) -> Result<Scenario, ConfigError> {
    let file: ScenarioFile = serde_yaml::from_str(text).map_err(|e| {
        let location = e
            .location()
            .map(|l| Location::Position { line: l.line(), column: l.column() })
            .unwrap_or(Location::Unknown);
        let mut message = e.to_string();
        if let Some(cut) = message.find(" at line ") {
            message.truncate(cut);
        }
        parse_error(source_name, location, message)
    })?;
    from_file(file, source_name)
}

pub fn from_file(file: ScenarioFile, source_name: &str) -> Result<Scenario, ConfigError> {
    let pool: Option<Vec<Skill>> = file.skill_pool.as_ref().map(|p| p.iter().map(|s| normalize_skill(s)).collect());
    if let Some(pool) = &pool {
        for (i, t) in file.tasks.iter().enumerate() {
            for (j, s) in t.required_skills.iter().enumerate() {
                if !pool.contains(&normalize_skill(s)) {
                    return Err(parse_error(
                        source_name,
                        Location::Path(format!("tasks[{i}].skills[{j}]")),
                        format!("unknown skill {s:?}"),
                    ));
                }
            }
        }
    }
    let team = match &file.team {
        TeamSpec::Shorthand(s) => {
            let (m, w) = parse_shorthand(s).ok_or_else(|| {
                parse_error(source_name, Location::Path("team".into()), format!("bad team shorthand {s:?}"))
            })?;
            let pool = pool.clone().unwrap_or_else(|| task_skill_pool(&file.tasks));
            if pool.is_empty() {
                return Err(parse_error(source_name, Location::Path("team".into()), "no skills to distribute"));
            }
            expand_team(m, w, &pool)
        }
        TeamSpec::Agents(agents) => {
            let mut team = Vec::with_capacity(agents.len());
            for (i, a) in agents.iter().enumerate() {
                if let Some(pool) = &pool {
                    if let Some((j, s)) = a.skills.iter().enumerate().find(|(_, s)| !pool.contains(&normalize_skill(s)))
                    {
                        return Err(parse_error(
                            source_name,
                            Location::Path(format!("team[{i}].skills[{j}]")),
                            format!("unknown skill {s:?}"),
                        ));
                    }
                }
                team.push(AgentProfile {
                    agent_id: AgentId::new(a.id.clone()),
                    name: a.name.clone().unwrap_or_else(|| a.id.clone()),
                    role: a.role,
                    skills: a.skills.iter().map(|s| normalize_skill(s)).collect(),
                    busy_until_step: 0,
                });
            }
            team
        }
    };
    let raw = Scenario {
        name: file.name,
        team,
        tasks: file.tasks,
        policy_name: file.policy,
        evaluator_name: file.evaluator,
        seed: file.seed,
        hours_per_step: file.hours_per_step,
        max_steps: file.max_steps,
        heuristic: file.heuristic,
    };
    validate_scenario(raw).map_err(|e| ConfigError::Invalid(e, source_name.to_string()))
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io { path: path.to_path_buf(), err })?;
    parse_scenario_str(&text, &path.display().to_string())
}

/// Explicit form of a scenario; `parse_scenario_str(emit(s))` gives `s` back.
pub fn to_file(s: &Scenario) -> ScenarioFile {
    ScenarioFile {
        name: s.name.clone(),
        team: TeamSpec::Agents(
            s.team
                .iter()
                .map(|a| AgentSpec {
                    id: a.agent_id.as_str().to_string(),
                    name: (a.name != a.agent_id.as_str()).then(|| a.name.clone()),
                    role: a.role,
                    skills: a.skills.iter().cloned().collect(),
                })
                .collect(),
        ),
        skill_pool: None,
        tasks: s.tasks.clone(),
        policy: s.policy_name,
        evaluator: s.evaluator_name,
        seed: s.seed,
        hours_per_step: s.hours_per_step,
        max_steps: s.max_steps,
        heuristic: s.heuristic.clone(),
    }
}

pub fn emit_scenario(s: &Scenario) -> String {
    serde_yaml::to_string(&to_file(s)).expect("scenario serializes")
}

/// Everything one invocation needs besides the scenario text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub policy: Option<String>,
    pub evaluator: Option<String>,
    pub planner: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub max_steps: Option<u32>,
    /// Present when an endpoint was given; the token itself stays in the
    /// environment.
    pub adapter: Option<AdapterSettings>,
    pub baseline_hours: Option<f64>,
    pub parallel: bool,
}

impl RunConfig {
    /// Applies command-line overrides to a parsed scenario.
    pub fn apply(&self, mut s: Scenario) -> Result<Scenario, String> {
        if let Some(p) = &self.policy {
            s.policy_name = PolicyName::parse(p).ok_or_else(|| format!("unknown policy {p:?}"))?;
        }
        if let Some(e) = &self.evaluator {
            s.evaluator_name = EvaluatorName::parse(e).ok_or_else(|| format!("unknown evaluator {e:?}"))?;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(m) = self.max_steps {
            if m == 0 {
                return Err("max steps must be positive".into());
            }
            s.max_steps = m;
        }
        Ok(s)
    }

    /// Planner used when none is named: the model planner for the model
    /// policy, the even split otherwise.
    pub fn planner_for(&self, policy: PolicyName) -> String {
        self.planner.clone().unwrap_or_else(|| if policy.needs_model() { "llm" } else { "even" }.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIMPLE: &str = r#"
name: simple
team: 1M+4W
tasks:
  - description: "Fix five independent bugs across modules."
    hours: 8.0
    skills: ["backend", "frontend", "database", "api", "testing"]
"#;

    #[test]
    fn simple_block() {
        let s = parse_scenario_str(SIMPLE, "simple.yaml").unwrap();
        assert_eq!(s.tasks[0].estimated_hours, 8.0);
        assert_eq!(s.tasks[0].required_skills.len(), 5);
        assert_eq!(s.team_label(), "1M+4W");
        assert_eq!(s.policy_name, PolicyName::NoComm);
        assert_eq!(s.max_steps, 160);
    }

    #[test]
    fn shorthand_rotation() {
        let text = SIMPLE.replace("1M+4W", "1M+8W");
        let s = parse_scenario_str(&text, "x").unwrap();
        assert_eq!(s.team.len(), 9);
        let skills = |id: &str| {
            let a = s.team.iter().find(|a| a.agent_id.as_str() == id).unwrap();
            a.skills.iter().cloned().collect::<Vec<_>>()
        };
        assert_eq!(skills("M1"), vec!["backend", "frontend"]);
        assert_eq!(skills("W1"), vec!["backend", "frontend"]);
        assert_eq!(skills("W2"), vec!["api", "database"]);
        assert_eq!(skills("W3"), vec!["backend", "testing"]);
        assert_eq!(skills("W8"), vec!["backend", "testing"]);
        assert_eq!(s.team.last().unwrap().agent_id.as_str(), "W8");
    }

    #[test]
    fn two_tasks() {
        let text = format!("{SIMPLE}  - description: second\n    hours: 4\n    skills: [api]\n");
        let s = parse_scenario_str(&text, "x").unwrap();
        assert_eq!(s.tasks.len(), 2);
    }

    #[test]
    fn missing_field_is_located() {
        let text = "team: 1M+2W\ntasks:\n  - description: x\n    skills: [a]\n";
        let e = parse_scenario_str(text, "bad.yaml").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("hours"), "{msg}");
        assert!(matches!(e.location(), Some(Location::Position { line: 3, .. })), "{msg}");
    }

    #[test]
    fn malformed_syntax_is_located() {
        let e = parse_scenario_str("team: [1M\ntasks: {", "bad.yaml").unwrap_err();
        assert!(matches!(e.location(), Some(Location::Position { .. })), "{e}");
    }

    #[test]
    fn unknown_skill_reference() {
        let text = "team:\n  - {id: M1, role: manager, skills: [api]}\n  - {id: W1, role: worker, skills: [cobol]}\n\
                    skill_pool: [api]\ntasks:\n  - {description: x, hours: 2, skills: [api]}\n";
        let e = parse_scenario_str(text, "x").unwrap_err();
        assert_eq!(e.location(), Some(&Location::Path("team[1].skills[0]".into())));
        assert!(e.to_string().contains("unknown skill"));
    }

    #[test]
    fn validation_errors_surface() {
        let text = "team:\n  - {id: W1, role: worker, skills: [api]}\ntasks:\n  - {description: x, hours: 2}\n";
        let e = parse_scenario_str(text, "x").unwrap_err();
        assert!(e.to_string().contains("no manager"));
        let text = SIMPLE.replace("8.0", "-1");
        assert!(parse_scenario_str(&text, "x").unwrap_err().to_string().contains("non-positive effort"));
    }

    #[test]
    fn round_trip() {
        let mut s = parse_scenario_str(SIMPLE, "x").unwrap();
        s.team[2].name = "Ada".into();
        s.heuristic.af_threshold = 0.5;
        let text = emit_scenario(&s);
        assert_eq!(parse_scenario_str(&text, "emitted").unwrap(), s);
    }

    #[test]
    fn overrides() {
        let s = parse_scenario_str(SIMPLE, "x").unwrap();
        let cfg =
            RunConfig { policy: Some("c2c_heuristic".into()), seed: Some(9), max_steps: Some(4), ..Default::default() };
        let s = cfg.apply(s).unwrap();
        assert_eq!((s.policy_name, s.seed, s.max_steps), (PolicyName::Heuristic, 9, 4));
        assert_eq!(cfg.planner_for(s.policy_name), "even");
        assert_eq!(cfg.planner_for(PolicyName::Llm), "llm");
        let bad = RunConfig { policy: Some("chaos".into()), ..Default::default() };
        assert!(bad.apply(parse_scenario_str(SIMPLE, "x").unwrap()).is_err());
    }
}
