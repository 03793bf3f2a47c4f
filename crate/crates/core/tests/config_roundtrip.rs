use std::path::PathBuf;

use proptest::prelude::*;
use teamsim_core::config::{emit_scenario, parse_scenario, parse_scenario_str};
use teamsim_core::model::{
    validate_scenario, AgentProfile, EvaluatorName, HeuristicConfig, PolicyName, Role, Scenario, TaskSpec,
};

fn arb_skills() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-z]{2,8}", 1..4)
}

fn arb_scenario() -> impl Strategy<Value = Scenario> {
    (
        prop::collection::vec((arb_skills(), prop::option::of("[A-Z][a-z]{1,6}")), 1..6),
        prop::collection::vec(("[a-zA-Z ,.:-]{1,40}", 0.25f64..80.0, arb_skills()), 1..3),
        prop::sample::select(vec![PolicyName::NoComm, PolicyName::FixedSteps, PolicyName::Heuristic, PolicyName::Llm]),
        any::<bool>(),
        any::<u64>(),
        prop::sample::select(vec![0.25, 0.5, 0.1]),
        1u32..500,
        0.05f64..0.95,
    )
        .prop_map(|(agents, tasks, policy, llm_eval, seed, hps, max_steps, threshold)| {
            let mut team = Vec::new();
            for (i, (skills, name)) in agents.iter().enumerate() {
                let role = if i == 0 { Role::Manager } else { Role::Worker };
                let id = if i == 0 { "M1".to_string() } else { format!("W{i}") };
                let refs: Vec<&str> = skills.iter().map(String::as_str).collect();
                let mut a = AgentProfile::new(&id, role, &refs);
                if let Some(n) = name {
                    a.name = n.clone();
                }
                team.push(a);
            }
            let tasks = tasks
                .into_iter()
                .map(|(description, estimated_hours, required_skills)| TaskSpec {
                    description: description.trim().to_string(),
                    estimated_hours,
                    required_skills,
                })
                .collect();
            let heuristic = HeuristicConfig { af_threshold: threshold, ..HeuristicConfig::default() };
            validate_scenario(Scenario {
                name: "generated".into(),
                team,
                tasks,
                policy_name: policy,
                evaluator_name: if llm_eval { EvaluatorName::Llm } else { EvaluatorName::RuleBased },
                seed,
                hours_per_step: hps,
                max_steps,
                heuristic,
            })
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn emit_then_parse_is_identity(s in arb_scenario()) {
        let text = emit_scenario(&s);
        let back = parse_scenario_str(&text, "emitted").unwrap();
        prop_assert_eq!(back, s);
    }
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn bundled_scenarios_parse_and_round_trip() {
    let mut n = 0;
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("yaml") {
            continue;
        }
        let s = parse_scenario(&path).unwrap_or_else(|e| panic!("{e}"));
        assert_eq!(parse_scenario_str(&emit_scenario(&s), "x").unwrap(), s, "{}", path.display());
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn bundled_task_sizes() {
    let hours = |f: &str| parse_scenario(&scenarios().join(f)).unwrap().tasks[0].estimated_hours;
    assert_eq!(hours("simple.yaml"), 8.0);
    assert_eq!(hours("medium.yaml"), 24.0);
    assert_eq!(hours("complex.yaml"), 40.0);
    let s = parse_scenario(&scenarios().join("simple.yaml")).unwrap();
    assert_eq!(s.tasks[0].required_skills.len(), 5);
    let big = parse_scenario(&scenarios().join("medium_16w.yaml")).unwrap();
    assert_eq!(big.team.len(), 17);
    assert_eq!(big.team_label(), "1M+16W");
}
