use super::{Decision, Intention, IntentionKind, Policy, PolicyContext};
use crate::model::HeuristicConfig;

/// Deterministic stand-in for model-driven decisions. Rules are checked in
/// order and the first match wins.
#[derive(Clone, Debug, Default)]
pub struct HeuristicPolicy {
    pub config: HeuristicConfig,
}

impl HeuristicPolicy {
    pub fn new(config: HeuristicConfig) -> Self {
        Self { config }
    }
}

impl Policy for HeuristicPolicy {
    fn name(&self) -> &str {
        "c2c_heuristic"
    }

    fn decide(&self, ctx: &PolicyContext) -> Decision {
        let cfg = &self.config;
        let say = |kind, task: Option<&crate::model::TaskId>, why: &str| -> Decision {
            Intention::new(kind, task.cloned(), why).into()
        };

        if ctx.has_pending_meeting() {
            return say(IntentionKind::CheckMessages, None, "meeting invite or start pending");
        }
        if ctx.has_unanswered_request() {
            return say(IntentionKind::CheckMessages, None, "unanswered request");
        }

        let waiting = !ctx.open_requests.is_empty();
        if let Some(a) = ctx.active() {
            let low = a.af < cfg.af_threshold;
            let worth_it = a.remaining_wall_hours() >= cfg.min_remaining_hours;
            if low && !waiting && worth_it {
                if a.work_steps_since_gain >= cfg.stuck_steps {
                    return say(IntentionKind::RequestHelp, Some(&a.task.task_id), "stuck at low alignment");
                }
                if a.hours_worked == 0.0 && a.clarifications_asked == 0 {
                    return say(
                        IntentionKind::NeedClarification,
                        Some(&a.task.task_id),
                        "low alignment before starting",
                    );
                }
            }
        }

        for a in ctx.assignments.iter().filter(|a| !a.task.is_done()) {
            if !a.meeting_called && a.blocked_collaborators.len() >= cfg.meeting_min_blocked {
                return say(IntentionKind::ScheduleMeeting, Some(&a.task.task_id), "dependants blocked");
            }
        }

        for a in &ctx.assignments {
            if a.task.estimated_hours < cfg.report_min_task_hours {
                continue;
            }
            let reached = cfg.report_milestones.iter().filter(|&&m| a.task.progress() >= m).count();
            if reached > a.milestones_reported {
                return say(IntentionKind::ReportProgress, Some(&a.task.task_id), "milestone crossed");
            }
        }

        say(IntentionKind::ContinueTask, ctx.active().map(|a| &a.task.task_id), "work")
    }
}
