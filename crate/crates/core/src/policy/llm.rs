use std::sync::Arc;

use super::{
    compose_template, reply_template, Composed, Decision, HeuristicPolicy, Intention, IntentionKind, Policy,
    PolicyContext,
};
use crate::adapter::{extract_json_object, ChatMessage, ModelAdapter};
use crate::alignment::truncate;
use crate::comm::Message;
use crate::model::AgentId;
use crate::prompts::intention_prompt;

/// Delegates intentions and message text to an external model. Any
/// failure falls back to [`HeuristicPolicy`] for that decision.
pub struct LlmPolicy {
    adapter: Arc<dyn ModelAdapter>,
    fallback: HeuristicPolicy,
}

impl LlmPolicy {
    pub fn new(adapter: Arc<dyn ModelAdapter>, fallback: HeuristicPolicy) -> Self {
        Self { adapter, fallback }
    }

    fn ask(&self, prompt: String) -> Result<String, String> {
        self.adapter.complete(&[ChatMessage::user(prompt)]).map_err(|e| e.to_string())
    }
}

/// Parses `{"intention": ..., "reasoning": ...}`.
pub fn parse_intention(text: &str) -> Option<(IntentionKind, String)> {
    let v = extract_json_object(text)?;
    let kind = IntentionKind::parse(v.get("intention")?.as_str()?)?;
    let reasoning = v.get("reasoning").and_then(|r| r.as_str()).unwrap_or_default().to_string();
    Some((kind, reasoning))
}

impl Policy for LlmPolicy {
    fn name(&self) -> &str {
        "c2c_llm"
    }

    fn decide(&self, ctx: &PolicyContext) -> Decision {
        let fallback = |why: String| Decision { warning: Some(why), ..self.fallback.decide(ctx) };
        let text = match self.ask(intention_prompt(ctx)) {
            Ok(t) => t,
            Err(e) => return fallback(format!("intention adapter failure: {e}")),
        };
        let Some((kind, reasoning)) = parse_intention(&text) else {
            return fallback(format!("unusable intention response: {}", truncate(&text, 120)));
        };
        let task = match kind {
            IntentionKind::CheckMessages => None,
            _ => ctx
                .active()
                .or_else(|| ctx.assignments.iter().find(|a| !a.task.is_done()))
                .map(|a| a.task.task_id.clone()),
        };
        Intention::new(kind, task, reasoning).into()
    }

    fn compose(&self, ctx: &PolicyContext, intention: &Intention, recipients: &[AgentId]) -> Composed {
        let template = compose_template(ctx, intention, recipients);
        let task = intention
            .about_task
            .as_ref()
            .and_then(|t| ctx.assignment(t))
            .map(|a| format!("{} ({}), alignment {:.2}", a.task.task_id, a.task.description, a.af))
            .unwrap_or_else(|| "no specific task".into());
        let prompt = format!(
            "You are {}, a team member. Write the body of a {} message to {} about {}. \
             Be informative and actionable: state the difficulty, your current understanding and \
             exactly what you need. Return only the message text.\n\nDraft:\n{}",
            ctx.agent.name,
            intention.kind,
            recipients.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(", "),
            task,
            template
        );
        match self.ask(prompt) {
            Ok(text) if !text.trim().is_empty() => text.trim().to_string().into(),
            Ok(_) => Composed { text: template, warning: Some("empty composition".into()) },
            Err(e) => Composed { text: template, warning: Some(format!("composition failure: {e}")) },
        }
    }

    fn compose_reply(&self, ctx: &PolicyContext, request: &Message) -> Composed {
        let template = reply_template(ctx, request);
        let prompt = format!(
            "You are {} with skills {}. A teammate sent you this {} message:\n{}\n\n\
             Write a helpful, specific reply. Return only the message text.",
            ctx.agent.name,
            ctx.agent.skills.iter().cloned().collect::<Vec<_>>().join(", "),
            request.message_type,
            request.content
        );
        match self.ask(prompt) {
            Ok(text) if !text.trim().is_empty() => text.trim().to_string().into(),
            Ok(_) => Composed { text: template, warning: Some("empty reply composition".into()) },
            Err(e) => Composed { text: template, warning: Some(format!("reply composition failure: {e}")) },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterError;
    use crate::policy::test_support::*;

    struct Canned(Result<String, ()>);

    impl ModelAdapter for Canned {
        fn complete(&self, _: &[ChatMessage]) -> Result<String, AdapterError> {
            self.0.clone().map_err(|_| AdapterError::Transport("down".into()))
        }
    }

    fn policy(reply: Result<&str, ()>) -> LlmPolicy {
        LlmPolicy::new(Arc::new(Canned(reply.map(String::from))), HeuristicPolicy::default())
    }

    #[test]
    fn uses_model_intention() {
        let ctx = context(vec![assignment("T1.1", 6.0, &["api"])]);
        let d = policy(Ok(r#"{"intention": "SCHEDULE_MEETING", "reasoning": "sync"}"#)).decide(&ctx);
        assert_eq!(d.intention.kind, IntentionKind::ScheduleMeeting);
        assert_eq!(d.intention.about_task, Some("T1.1".into()));
        assert_eq!(d.intention.reasoning, "sync");
        assert!(d.warning.is_none());
    }

    #[test]
    fn unknown_intention_falls_back() {
        let ctx = context(vec![assignment("T1.1", 6.0, &["api"])]);
        let d = policy(Ok(r#"{"intention": "TAKE_NAP"}"#)).decide(&ctx);
        assert_eq!(d.intention.kind, IntentionKind::NeedClarification);
        assert!(d.warning.is_some());
        let d = policy(Err(())).decide(&ctx);
        assert_eq!(d.intention.kind, IntentionKind::NeedClarification);
        assert!(d.warning.unwrap().contains("adapter failure"));
    }

    #[test]
    fn composition_falls_back_to_template() {
        let ctx = context(vec![assignment("T1.1", 6.0, &["api"])]);
        let i = Intention::new(IntentionKind::RequestHelp, Some("T1.1".into()), "");
        let c = policy(Err(())).compose(&ctx, &i, &[]);
        assert_eq!(c.text, compose_template(&ctx, &i, &[]));
        assert!(c.warning.is_some());
        let c = policy(Ok("Need OAuth token refresh details.")).compose(&ctx, &i, &[]);
        assert_eq!(c.text, "Need OAuth token refresh details.");
    }
}
