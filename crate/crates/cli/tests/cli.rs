use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn teamsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teamsim")).args(args).env_remove("TEAMSIM_API_KEY").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_completes_and_writes_outputs() {
    let tmp = tmp();
    let out = tmp.path().join("out");
    let scen = scenarios().join("simple.yaml");
    let o = teamsim(&["run", "--scenario", s(&scen), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("Avg completion time (h)"), "{stdout}");
    for f in ["trace.jsonl", "metrics.csv", "report.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("config,complexity,completion_rate,avg_time_h,comm_cost_h,alignment,efficiency,speedup\n"));
    assert!(csv.contains("no_comm:1M+4W,simple,100.0,7.00"), "{csv}");

    let trace = out.join("trace.jsonl");
    let r = teamsim(&["report", "--scenario", s(&scen), "--trace", s(&trace), "--csv"]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&r.stdout), csv);
}

#[test]
fn step_cap_gives_incomplete_status() {
    let tmp = tmp();
    let out = tmp.path().join("out");
    let scen = scenarios().join("complex.yaml");
    let o = teamsim(&["run", "--scenario", s(&scen), "--out", s(&out), "--max-steps", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incomplete"));
}

#[test]
fn model_policy_without_endpoint_gives_adapter_status() {
    let tmp = tmp();
    let out = tmp.path().join("out");
    let scen = scenarios().join("medium.yaml");
    let o = teamsim(&["run", "--scenario", s(&scen), "--out", s(&out), "--policy", "c2c_llm"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("endpoint"));
    assert!(!out.join("trace.jsonl").exists());
}

#[test]
fn usage_and_config_errors_give_status_one() {
    let scen = scenarios().join("medium.yaml");
    let tmp = tmp();
    let out = tmp.path().join("out");
    let single = teamsim(&["compare", "--scenario", s(&scen), "--out", s(&out), "--policies", "no_comm"]);
    assert_eq!(single.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&single.stderr).contains("at least two"));
    assert_eq!(teamsim(&["run"]).status.code(), Some(1));
    assert_eq!(teamsim(&["run", "--scenario", s(&scen), "--policy", "chaos"]).status.code(), Some(1));
    let missing = teamsim(&["run", "--scenario", "/nonexistent/x.yaml"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(teamsim(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_scenario_reports_location() {
    let tmp = tmp();
    let dir = tmp.path().to_path_buf();
    let path = dir.join("bad.yaml");
    std::fs::write(&path, "team: 1M+2W\ntasks:\n  - description: x\n    skills: [api]\n").unwrap();
    let o = teamsim(&["run", "--scenario", s(&path), "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("hours"), "{err}");
}

#[test]
fn compare_prints_a_grid_and_is_repeatable() {
    let scen = scenarios().join("medium.yaml");
    let run = |tag: &str| {
        let tmp = tmp();
        let out = tmp.path().join(tag);
        let o = teamsim(&[
            "compare",
            "--scenario",
            s(&scen),
            "--out",
            s(&out),
            "--policies",
            "no_comm,fixed_steps,c2c_heuristic",
        ]);
        assert_eq!(o.status.code(), Some(0));
        let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        (String::from_utf8_lossy(&o.stdout).into_owned(), csv)
    };
    let (a, csv) = run("cmp1");
    assert!(a.lines().next().unwrap().contains("c2c_heuristic:1M+4W"));
    assert_eq!(a.lines().count(), 7);
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(run("cmp2").0, a);
}
