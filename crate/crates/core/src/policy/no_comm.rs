use super::{Decision, Intention, IntentionKind, Policy, PolicyContext};

/// Agents only ever work.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoCommPolicy;

impl Policy for NoCommPolicy {
    fn name(&self) -> &str {
        "no_comm"
    }

    fn decide(&self, ctx: &PolicyContext) -> Decision {
        let task = ctx.active().map(|a| a.task.task_id.clone());
        Intention::new(IntentionKind::ContinueTask, task, "no communication").into()
    }
}
