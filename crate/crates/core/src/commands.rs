//! Run orchestration behind the `teamsim` subcommands.
//!
//! Exit statuses: 0 every root task finished, 1 usage or configuration
//! error, 2 the run ended with work left, 3 a model endpoint was needed but
//! missing or unreachable.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::adapter::{HttpAdapter, ModelAdapter};
use crate::config::{parse_scenario, ConfigError, RunConfig};
use crate::metrics::{compute_metrics, render_report, render_table, to_csv, MetricsError, MetricsReport};
use crate::model::{PolicyName, Scenario};
use crate::registry::{BuildContext, Registry, RegistryError};
use crate::scheduler::{run, EngineOptions, SimError, SimResult};
use crate::trace::Trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCOMPLETE: i32 = 2;
pub const EXIT_ADAPTER: i32 = 3;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(RegistryError),
    #[error("model endpoint unavailable: {0}")]
    Adapter(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Adapter(_) | CommandError::Registry(RegistryError::NeedsAdapter { .. }) => EXIT_ADAPTER,
            _ => EXIT_ERROR,
        }
    }
}

impl From<RegistryError> for CommandError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NeedsAdapter { .. } => CommandError::Adapter(e.to_string()),
            other => CommandError::Registry(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |err| CommandError::Io { path: path.to_path_buf(), err }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(io_err(path))
}

pub struct RunOutcome {
    pub result: SimResult,
    pub report: MetricsReport,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.result.all_done() {
            EXIT_OK
        } else {
            EXIT_INCOMPLETE
        }
    }
}

/// Builds the model adapter only when one of the chosen strategies needs
/// it, and checks that it answers. Without that need nothing touches the
/// network.
fn build_context(
    registry: &Registry,
    scenario: &Scenario,
    planner: &str,
    config: &RunConfig,
    adapter: Option<Arc<dyn ModelAdapter>>,
) -> Result<BuildContext, CommandError> {
    let needs = registry.needs_model(scenario.policy_name.as_str(), scenario.evaluator_name.as_str(), planner)?;
    let mut ctx = BuildContext { heuristic: scenario.heuristic.clone(), adapter: None };
    if !needs {
        return Ok(ctx);
    }
    let adapter = match adapter {
        Some(a) => a,
        None => {
            let settings = config
                .adapter
                .clone()
                .ok_or_else(|| CommandError::Adapter("no endpoint given (use --endpoint)".into()))?;
            Arc::new(HttpAdapter::new(settings)) as Arc<dyn ModelAdapter>
        }
    };
    adapter.probe().map_err(|e| CommandError::Adapter(e.to_string()))?;
    ctx.adapter = Some(adapter);
    Ok(ctx)
}

/// Runs an already parsed scenario with the built-in strategies.
pub fn simulate(
    scenario: Scenario,
    config: &RunConfig,
    adapter: Option<Arc<dyn ModelAdapter>>,
) -> Result<(SimResult, MetricsReport), CommandError> {
    let registry = Registry::builtin();
    let planner = config.planner_for(scenario.policy_name);
    let ctx = build_context(&registry, &scenario, &planner, config, adapter)?;
    let strategies =
        registry.strategies(scenario.policy_name.as_str(), scenario.evaluator_name.as_str(), &planner, &ctx)?;
    let result = run(scenario, strategies, EngineOptions { parallel: config.parallel })?;
    let report = compute_metrics(&result.trace, &result.scenario, config.baseline_hours)?;
    Ok((result, report))
}

fn load(config: &RunConfig) -> Result<Scenario, CommandError> {
    let scenario = parse_scenario(&config.scenario_path)?;
    config.apply(scenario).map_err(CommandError::Usage)
}

fn write_outputs(dir: &Path, result: &SimResult, report: &MetricsReport) -> Result<Vec<PathBuf>, CommandError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace = dir.join("trace.jsonl");
    write_file(&trace, &result.trace.to_jsonl())?;
    let csv = dir.join("metrics.csv");
    write_file(&csv, &to_csv(std::slice::from_ref(report)))?;
    let text = dir.join("report.txt");
    let mut body = render_report(report);
    let warnings: Vec<&str> = result.trace.warnings().collect();
    if !warnings.is_empty() {
        body.push_str("\nWarnings\n");
        for w in warnings {
            body.push_str("  ");
            body.push_str(w);
            body.push('\n');
        }
    }
    write_file(&text, &body)?;
    Ok(vec![trace, csv, text])
}

pub fn cmd_run(config: &RunConfig) -> Result<RunOutcome, CommandError> {
    cmd_run_with(config, None)
}

/// `cmd_run` with an injected adapter in place of the HTTP one.
pub fn cmd_run_with(config: &RunConfig, adapter: Option<Arc<dyn ModelAdapter>>) -> Result<RunOutcome, CommandError> {
    let scenario = load(config)?;
    let (result, report) = simulate(scenario, config, adapter)?;
    let files = write_outputs(&config.out_dir, &result, &report)?;
    Ok(RunOutcome { result, report, files })
}

pub struct Comparison {
    pub reports: Vec<MetricsReport>,
    pub table: String,
    pub csv: String,
}

/// Runs each policy in turn on the same scenario and seed. Speedup is
/// measured against the first policy's completion time.
pub fn cmd_compare(config: &RunConfig, policies: &[String]) -> Result<Comparison, CommandError> {
    if policies.len() < 2 {
        return Err(CommandError::Usage("compare needs at least two policies".into()));
    }
    let parsed: Vec<PolicyName> = policies
        .iter()
        .map(|p| PolicyName::parse(p).ok_or_else(|| CommandError::Usage(format!("unknown policy {p:?}"))))
        .collect::<Result<_, _>>()?;
    let base = load(&RunConfig { policy: None, ..config.clone() })?;
    let mut reports: Vec<MetricsReport> = Vec::with_capacity(parsed.len());
    let mut baseline = config.baseline_hours;
    for (name, policy) in policies.iter().zip(parsed) {
        let mut scenario = base.clone();
        scenario.policy_name = policy;
        let cfg = RunConfig { baseline_hours: baseline, ..config.clone() };
        let (result, report) = simulate(scenario, &cfg, None)?;
        write_outputs(&config.out_dir.join(name), &result, &report)?;
        if baseline.is_none() {
            baseline = report.avg_completion_time;
            reports.push(MetricsReport { speedup: baseline.map(|_| 1.0), ..report });
        } else {
            reports.push(report);
        }
    }
    let table = render_table(&reports);
    let csv = to_csv(&reports);
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    write_file(&config.out_dir.join("compare.txt"), &table)?;
    write_file(&config.out_dir.join("metrics.csv"), &csv)?;
    Ok(Comparison { reports, table, csv })
}

/// Recomputes metrics from a stored trace.
pub fn cmd_report(
    scenario_path: &Path,
    trace_path: &Path,
    baseline: Option<f64>,
) -> Result<MetricsReport, CommandError> {
    let scenario = parse_scenario(scenario_path)?;
    let file = fs::File::open(trace_path).map_err(io_err(trace_path))?;
    let trace = Trace::read_jsonl(BufReader::new(file)).map_err(io_err(trace_path))?;
    Ok(compute_metrics(&trace, &scenario, baseline)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MEDIUM: &str = "name: medium\nteam: 1M+4W\ntasks:\n  - description: integrate an API\n    hours: 24\n    skills: [backend, api, oauth, testing]\n";

    fn setup(text: &str) -> (tempfile::TempDir, RunConfig) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.yaml");
        fs::write(&path, text).unwrap();
        let cfg = RunConfig { scenario_path: path, out_dir: dir.path().join("out"), ..Default::default() };
        (dir, cfg)
    }

    #[test]
    fn run_writes_outputs() {
        let (_d, cfg) = setup(MEDIUM);
        let out = cmd_run(&cfg).unwrap();
        assert_eq!(out.exit_code(), EXIT_OK);
        for f in &out.files {
            assert!(f.exists(), "{}", f.display());
        }
        let csv = fs::read_to_string(cfg.out_dir.join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn step_cap_is_incomplete() {
        let (_d, mut cfg) = setup(MEDIUM);
        cfg.max_steps = Some(4);
        assert_eq!(cmd_run(&cfg).unwrap().exit_code(), EXIT_INCOMPLETE);
    }

    #[test]
    fn model_policy_without_endpoint() {
        let (_d, mut cfg) = setup(MEDIUM);
        cfg.policy = Some("c2c_llm".into());
        let err = cmd_run(&cfg).err().unwrap();
        assert_eq!(err.exit_code(), EXIT_ADAPTER);
        let (_d, mut cfg) = setup(MEDIUM);
        cfg.evaluator = Some("llm".into());
        assert_eq!(cmd_run(&cfg).err().unwrap().exit_code(), EXIT_ADAPTER);
    }

    #[test]
    fn compare_grid_and_usage() {
        let (_d, cfg) = setup(MEDIUM);
        let err = cmd_compare(&cfg, &["no_comm".into()]).err().unwrap();
        assert!(matches!(err, CommandError::Usage(_)));
        let policies: Vec<String> = ["no_comm", "fixed_steps", "c2c_heuristic"].map(String::from).to_vec();
        let a = cmd_compare(&cfg, &policies).unwrap();
        assert_eq!(a.reports.len(), 3);
        assert_eq!(a.reports[0].speedup, Some(1.0));
        assert_eq!(a.csv.lines().count(), 4);
        let b = cmd_compare(&cfg, &policies).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn report_matches_run() {
        let (_d, cfg) = setup(MEDIUM);
        let out = cmd_run(&cfg).unwrap();
        let again = cmd_report(&cfg.scenario_path, &cfg.out_dir.join("trace.jsonl"), None).unwrap();
        assert_eq!(again, out.report);
    }
}
