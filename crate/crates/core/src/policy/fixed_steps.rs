use super::{Decision, Intention, IntentionKind, Policy, PolicyContext};

/// Steps between scheduled communication rounds.
pub const FIXED_PERIOD: u32 = 16;

/// Workers talk on a fixed cadence: every `FIXED_PERIOD` steps they report
/// progress to the manager and, on their next decision, ask for help on
/// their least aligned task. Otherwise they work and answer what arrives.
#[derive(Clone, Copy, Debug)]
pub struct FixedStepsPolicy {
    pub period: u32,
}

impl Default for FixedStepsPolicy {
    fn default() -> Self {
        Self { period: FIXED_PERIOD }
    }
}

impl Policy for FixedStepsPolicy {
    fn name(&self) -> &str {
        "fixed_steps"
    }

    fn decide(&self, ctx: &PolicyContext) -> Decision {
        let open: Vec<_> = ctx.assignments.iter().filter(|a| !a.task.is_done()).collect();
        if !ctx.is_manager() && !open.is_empty() {
            if ctx.step > 0 && ctx.step.is_multiple_of(self.period) {
                let t = open[0].task.task_id.clone();
                return Intention::new(IntentionKind::ReportProgress, Some(t), "scheduled report").into();
            }
            let just_reported =
                ctx.last_action.as_ref().is_some_and(|a| a.intention == Some(IntentionKind::ReportProgress));
            if just_reported {
                // lowest AF, ties to the lowest task id
                let target = open
                    .iter()
                    .fold(None::<&&crate::policy::AssignmentView>, |best, a| match best {
                        Some(b) if b.af <= a.af => Some(b),
                        _ => Some(a),
                    })
                    .map(|a| a.task.task_id.clone());
                return Intention::new(IntentionKind::RequestHelp, target, "scheduled help request").into();
            }
        }
        if !ctx.pending.is_empty() {
            return Intention::new(IntentionKind::CheckMessages, None, "inbox not empty").into();
        }
        let task = ctx.active().map(|a| a.task.task_id.clone());
        Intention::new(IntentionKind::ContinueTask, task, "work").into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::test_support::*;
    use crate::policy::LastAction;
    use crate::scheduler::ActionKind;

    #[test]
    fn reports_on_period() {
        let mut ctx = context(vec![assignment("T1.1", 6.0, &["api"])]);
        ctx.step = 16;
        assert_eq!(FixedStepsPolicy::default().decide(&ctx).intention.kind, IntentionKind::ReportProgress);
        ctx.step = 0;
        assert_eq!(FixedStepsPolicy::default().decide(&ctx).intention.kind, IntentionKind::ContinueTask);
        ctx.step = 15;
        assert_eq!(FixedStepsPolicy::default().decide(&ctx).intention.kind, IntentionKind::ContinueTask);
    }

    #[test]
    fn help_follows_report_on_lowest_af() {
        let mut a = assignment("T1.1", 6.0, &["api"]);
        a.af = 0.55;
        let b = assignment("T2.1", 6.0, &["api"]);
        let mut ctx = context(vec![a, b]);
        ctx.step = 17;
        ctx.last_action = Some(LastAction {
            kind: ActionKind::Communicate,
            target: "T1.1".into(),
            step: 16,
            intention: Some(IntentionKind::ReportProgress),
        });
        let d = FixedStepsPolicy::default().decide(&ctx);
        assert_eq!(d.intention.kind, IntentionKind::RequestHelp);
        assert_eq!(d.intention.about_task, Some("T2.1".into()));
    }

    #[test]
    fn manager_never_initiates() {
        let mut ctx = context(vec![]);
        ctx.agent.role = crate::model::Role::Manager;
        ctx.step = 32;
        assert_eq!(FixedStepsPolicy::default().decide(&ctx).intention.kind, IntentionKind::ContinueTask);
    }
}
