//! Run metrics derived purely from a trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{Channel, MessageId, MessageType};
use crate::model::{AgentId, Scenario, TaskId};
use crate::trace::{EventPayload, Trace};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty trace")]
    EmptyTrace,
}

/// `count[i][j]` messages from `agents[i]` delivered to `agents[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub agents: Vec<AgentId>,
    pub counts: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn get(&self, from: &AgentId, to: &AgentId) -> u64 {
        let i = self.agents.iter().position(|a| a == from);
        let j = self.agents.iter().position(|a| a == to);
        match (i, j) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub type_shares: BTreeMap<MessageType, f64>,
    pub channel_shares: BTreeMap<Channel, f64>,
    /// Mean steps from a request's send to its first answer's delivery.
    pub latency_by_type: BTreeMap<MessageType, f64>,
    pub latency_by_channel: BTreeMap<Channel, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: String,
    pub complexity: String,
    /// Percent of root tasks done.
    pub completion_rate: f64,
    /// Mean hours to completion over completed roots.
    pub avg_completion_time: Option<f64>,
    pub communication_cost: f64,
    pub alignment_score: f64,
    /// Estimated hours of completed roots over `avg_completion_time`.
    pub efficiency: f64,
    pub speedup: Option<f64>,
    pub heatmap: Heatmap,
    pub distributions: Distributions,
}

/// Baseline time over measured time.
pub fn speedup(baseline_hours: f64, hours: f64) -> Option<f64> {
    (hours > 0.0 && baseline_hours > 0.0).then(|| baseline_hours / hours)
}

pub fn heatmap(trace: &Trace, agents: &[AgentId]) -> Heatmap {
    let mut agents: Vec<AgentId> = agents.to_vec();
    agents.sort();
    let index: BTreeMap<&AgentId, usize> = agents.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let mut counts = vec![vec![0u64; agents.len()]; agents.len()];
    for e in &trace.events {
        if let EventPayload::MessageDelivered { from, to, .. } = &e.payload {
            if let (Some(&i), Some(&j)) = (index.get(from), index.get(to)) {
                counts[i][j] += 1;
            }
        }
    }
    Heatmap { agents, counts }
}

fn shares<K: Ord + Copy>(counts: &BTreeMap<K, u64>) -> BTreeMap<K, f64> {
    let total: u64 = counts.values().sum();
    counts.iter().map(|(k, &c)| (*k, c as f64 / total as f64)).collect()
}

fn means<K: Ord + Copy>(sums: &BTreeMap<K, (u64, u64)>) -> BTreeMap<K, f64> {
    sums.iter().map(|(k, &(s, n))| (*k, s as f64 / n as f64)).collect()
}

pub fn distributions(trace: &Trace) -> Distributions {
    struct Req {
        mtype: MessageType,
        channel: Channel,
        sent: u32,
    }
    let mut by_type: BTreeMap<MessageType, u64> = BTreeMap::new();
    let mut by_channel: BTreeMap<Channel, u64> = BTreeMap::new();
    let mut requests: BTreeMap<MessageId, Req> = BTreeMap::new();
    let mut first_answer: BTreeMap<MessageId, u32> = BTreeMap::new();
    let mut answers: BTreeSet<MessageId> = BTreeSet::new();

    for e in &trace.events {
        match &e.payload {
            EventPayload::MessageSent { message, .. } => match message.message_type {
                MessageType::Response | MessageType::MeetingStart => {
                    answers.insert(message.message_id);
                }
                t => {
                    *by_type.entry(t).or_default() += 1;
                    *by_channel.entry(message.channel).or_default() += 1;
                    if matches!(
                        t,
                        MessageType::HelpRequest | MessageType::NeedClarification | MessageType::MeetingInvite
                    ) {
                        requests.insert(
                            message.message_id,
                            Req { mtype: t, channel: message.channel, sent: message.sent_step },
                        );
                    }
                }
            },
            EventPayload::MessageDelivered { message_id, thread_id, .. } if answers.contains(message_id) => {
                first_answer.entry(*thread_id).or_insert(e.step);
            }
            _ => {}
        }
    }

    let mut lat_type: BTreeMap<MessageType, (u64, u64)> = BTreeMap::new();
    let mut lat_channel: BTreeMap<Channel, (u64, u64)> = BTreeMap::new();
    for (id, r) in &requests {
        if let Some(&d) = first_answer.get(id) {
            let l = (d - r.sent) as u64;
            let t = lat_type.entry(r.mtype).or_default();
            t.0 += l;
            t.1 += 1;
            let c = lat_channel.entry(r.channel).or_default();
            c.0 += l;
            c.1 += 1;
        }
    }
    Distributions {
        type_shares: shares(&by_type),
        channel_shares: shares(&by_channel),
        latency_by_type: means(&lat_type),
        latency_by_channel: means(&lat_channel),
    }
}

/// Mean AF over every (agent, task) pair and every step from the pair's
/// initialization to the last step of the run. The value sampled at a
/// step is the one in force after that step's updates.
pub fn alignment_score(trace: &Trace) -> Option<f64> {
    let last = trace.events.iter().map(|e| e.step).max()?;
    let mut series: BTreeMap<(AgentId, TaskId), Vec<(u32, f64)>> = BTreeMap::new();
    for e in &trace.events {
        if let EventPayload::AfUpdate { agent, task, new_af, .. } = &e.payload {
            let s = series.entry((agent.clone(), task.clone())).or_default();
            match s.last_mut() {
                Some(l) if l.0 == e.step => l.1 = *new_af,
                _ => s.push((e.step, *new_af)),
            }
        }
    }
    // running mean keeps a constant series exactly constant
    let mut mean = 0.0;
    let mut n = 0u64;
    for points in series.values() {
        for (k, &(step, v)) in points.iter().enumerate() {
            let end = points.get(k + 1).map_or(last + 1, |p| p.0);
            let w = (end - step) as u64;
            if w == 0 {
                continue;
            }
            n += w;
            mean += (v - mean) * w as f64 / n as f64;
        }
    }
    (n > 0).then_some(mean)
}

pub fn communication_cost(trace: &Trace) -> f64 {
    trace
        .events
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::MessageSent { cost_hours, .. } => Some(*cost_hours),
            _ => None,
        })
        .fold(0.0, |a, c| a + c)
}

/// Step in which each root of `scenario` completed.
pub fn root_completions(trace: &Trace, scenario: &Scenario) -> BTreeMap<TaskId, u32> {
    let roots: BTreeSet<TaskId> = (1..=scenario.tasks.len()).map(|i| TaskId::new(format!("T{i}"))).collect();
    let mut out = BTreeMap::new();
    for e in &trace.events {
        if let EventPayload::TaskDone { task, .. } = &e.payload {
            if roots.contains(task) {
                out.entry(task.clone()).or_insert(e.step);
            }
        }
    }
    out
}

pub fn config_label(scenario: &Scenario) -> String {
    format!("{}:{}", scenario.policy_name, scenario.team_label())
}

pub fn compute_metrics(
    trace: &Trace,
    scenario: &Scenario,
    baseline_hours: Option<f64>,
) -> Result<MetricsReport, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let done = root_completions(trace, scenario);
    let total = scenario.tasks.len();
    let completion_rate = 100.0 * done.len() as f64 / total as f64;
    let times: Vec<f64> = done.values().map(|&s| (s + 1) as f64 * scenario.hours_per_step).collect();
    let avg = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
    let completed_hours: f64 = done
        .keys()
        .filter_map(|t| t.as_str()[1..].parse::<usize>().ok())
        .map(|i| scenario.tasks[i - 1].estimated_hours)
        .sum();
    let efficiency = avg.map_or(0.0, |a| completed_hours / a);
    let agents: Vec<AgentId> = scenario.team.iter().map(|a| a.agent_id.clone()).collect();
    Ok(MetricsReport {
        config: config_label(scenario),
        complexity: scenario.name.clone(),
        completion_rate,
        avg_completion_time: avg,
        communication_cost: communication_cost(trace),
        alignment_score: alignment_score(trace).unwrap_or(0.0),
        efficiency,
        speedup: match (baseline_hours, avg) {
            (Some(b), Some(a)) => speedup(b, a),
            _ => None,
        },
        heatmap: heatmap(trace, &agents),
        distributions: distributions(trace),
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    config: &'a str,
    complexity: &'a str,
    completion_rate: String,
    avg_time_h: String,
    comm_cost_h: String,
    alignment: String,
    efficiency: String,
    speedup: String,
}

fn opt(x: Option<f64>, prec: usize) -> String {
    x.map(|v| format!("{v:.prec$}")).unwrap_or_default()
}

/// CSV with the fixed column order, one row per report.
pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if reports.is_empty() {
        w.write_record([
            "config",
            "complexity",
            "completion_rate",
            "avg_time_h",
            "comm_cost_h",
            "alignment",
            "efficiency",
            "speedup",
        ])
        .expect("in-memory write");
    }
    for r in reports {
        w.serialize(CsvRow {
            config: &r.config,
            complexity: &r.complexity,
            completion_rate: format!("{:.1}", r.completion_rate),
            avg_time_h: opt(r.avg_completion_time, 2),
            comm_cost_h: format!("{:.2}", r.communication_cost),
            alignment: format!("{:.3}", r.alignment_score),
            efficiency: format!("{:.2}", r.efficiency),
            speedup: opt(r.speedup, 2),
        })
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Metric-by-configuration grid.
pub fn render_table(reports: &[MetricsReport]) -> String {
    type Cell = Box<dyn Fn(&MetricsReport) -> String>;
    let rows: [(&str, Cell); 6] = [
        ("Completion rate (%)", Box::new(|r| format!("{:.0}", r.completion_rate))),
        ("Avg completion time (h)", Box::new(|r| opt(r.avg_completion_time, 2))),
        ("Communication cost (h)", Box::new(|r| format!("{:.2}", r.communication_cost))),
        ("Alignment score", Box::new(|r| format!("{:.3}", r.alignment_score))),
        ("Efficiency", Box::new(|r| format!("{:.2}", r.efficiency))),
        ("Speedup", Box::new(|r| r.speedup.map_or("-".into(), |s| format!("{s:.2}")))),
    ];
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let col_w: Vec<usize> = reports.iter().map(|r| r.config.len().max(8)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:label_w$}", "");
    for (r, w) in reports.iter().zip(&col_w) {
        let _ = write!(out, "  {:>w$}", r.config);
    }
    out.push('\n');
    for (label, f) in &rows {
        let _ = write!(out, "{label:label_w$}");
        for (r, w) in reports.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$}", f(r));
        }
        out.push('\n');
    }
    out
}

/// Human-readable summary of one run.
pub fn render_report(r: &MetricsReport) -> String {
    let mut out = format!("{} ({})\n", r.config, r.complexity);
    out.push_str(&render_table(std::slice::from_ref(r)));
    out.push_str("\nMessages delivered (row = sender, column = recipient)\n");
    let w = r.heatmap.agents.iter().map(|a| a.as_str().len()).max().unwrap_or(2).max(3);
    let _ = write!(out, "{:w$}", "");
    for a in &r.heatmap.agents {
        let _ = write!(out, " {:>w$}", a.as_str());
    }
    out.push('\n');
    for (a, row) in r.heatmap.agents.iter().zip(&r.heatmap.counts) {
        let _ = write!(out, "{:w$}", a.as_str());
        for c in row {
            let _ = write!(out, " {c:>w$}");
        }
        out.push('\n');
    }
    let d = &r.distributions;
    if !d.type_shares.is_empty() {
        out.push_str("\nMessage types\n");
        for (t, s) in &d.type_shares {
            let lat = d.latency_by_type.get(t).map_or("-".into(), |l| format!("{l:.2}"));
            let _ = writeln!(out, "  {:<20} {:>6.3}  response steps {lat}", t.as_str(), s);
        }
        out.push_str("Channels\n");
        for (c, s) in &d.channel_shares {
            let lat = d.latency_by_channel.get(c).map_or("-".into(), |l| format!("{l:.2}"));
            let _ = writeln!(out, "  {:<20} {:>6.3}  response steps {lat}", c.to_string(), s);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::Message;

    #[allow(clippy::too_many_arguments)]
    fn sent(t: &mut Trace, id: u64, thread: u64, from: &str, to: &str, mt: MessageType, ch: Channel, step: u32) {
        let message = Message {
            message_id: MessageId(id),
            thread_id: MessageId(thread),
            from_agent: from.into(),
            to_agents: vec![to.into()],
            channel: ch,
            message_type: mt,
            about_task: None,
            content: String::new(),
            sent_step: step,
            delivery_step: step + 1,
            meeting_id: None,
            participants: vec![],
            in_reply_to: None,
            resolves: true,
        };
        t.push(step, EventPayload::MessageSent { message, cost_hours: 0.1, initiated_step: step });
    }

    fn delivered(t: &mut Trace, id: u64, thread: u64, from: &str, to: &str, mt: MessageType, step: u32) {
        t.push(
            step,
            EventPayload::MessageDelivered {
                message_id: MessageId(id),
                thread_id: MessageId(thread),
                from: from.into(),
                to: to.into(),
                message_type: mt,
                channel: Channel::Chat,
                sent_step: step - 1,
            },
        );
    }

    #[test]
    fn speedup_definition() {
        assert!((speedup(20.0, 13.0).unwrap() - 1.538).abs() < 1e-3);
        assert_eq!(speedup(20.0, 0.0), None);
    }

    #[test]
    fn shares_and_latency() {
        let mut t = Trace::new();
        sent(&mut t, 1, 1, "W1", "M1", MessageType::HelpRequest, Channel::Chat, 4);
        sent(&mut t, 2, 2, "W2", "M1", MessageType::HelpRequest, Channel::Chat, 4);
        sent(&mut t, 3, 3, "W3", "M1", MessageType::NeedClarification, Channel::Email, 5);
        sent(&mut t, 4, 1, "M1", "W1", MessageType::Response, Channel::Chat, 6);
        delivered(&mut t, 4, 1, "M1", "W1", MessageType::Response, 7);
        let d = distributions(&t);
        assert!((d.type_shares[&MessageType::HelpRequest] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.type_shares[&MessageType::NeedClarification] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(d.latency_by_type[&MessageType::HelpRequest], 3.0);
        assert!(!d.latency_by_type.contains_key(&MessageType::NeedClarification));
        assert_eq!(d.latency_by_channel[&Channel::Chat], 3.0);
    }

    #[test]
    fn heatmap_counts() {
        let mut t = Trace::new();
        for i in 0..3 {
            delivered(&mut t, i, i, "W1", "M1", MessageType::HelpRequest, 2);
        }
        let agents: Vec<AgentId> = vec!["W1".into(), "M1".into()];
        let h = heatmap(&t, &agents);
        assert_eq!(h.get(&"W1".into(), &"M1".into()), 3);
        assert_eq!(h.agents[0], AgentId::from("M1"));
        assert_eq!(h.total(), 3);
        assert_eq!(heatmap(&Trace::new(), &agents).total(), 0);
    }

    #[test]
    fn alignment_is_time_weighted() {
        let mut t = Trace::new();
        let up = |old: f64, new: f64, cause: &str| EventPayload::AfUpdate {
            agent: "W1".into(),
            task: "T1.1".into(),
            old_af: old,
            delta: new - old,
            new_af: new,
            cause: cause.into(),
        };
        t.push(0, up(0.3, 0.3, "init"));
        t.push(2, up(0.3, 0.5, "m1"));
        t.warn(3, "end");
        // steps 0,1 at 0.3; steps 2,3 at 0.5
        assert!((alignment_score(&t).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(alignment_score(&Trace::new()), None);
    }

    #[test]
    fn csv_header_order() {
        let text = to_csv(&[]);
        assert_eq!(
            text.trim(),
            "config,complexity,completion_rate,avg_time_h,comm_cost_h,alignment,efficiency,speedup"
        );
    }
}
