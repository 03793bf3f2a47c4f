//! Text payloads sent to the external model. Placeholders are substituted
//! from simulation state; the surrounding text is fixed wire format.

use crate::comm::Message;
use crate::model::{AgentProfile, Role};
use crate::policy::PolicyContext;
use crate::task_graph::TaskNode;

fn role_value(role: Role) -> &'static str {
    match role {
        Role::Manager => "manager",
        Role::Worker => "worker",
    }
}

/// Python-style float rendering: always keeps a fractional part.
fn py_float(x: f64) -> String {
    if x.fract() == 0.0 && x.is_finite() {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

fn format_team(team: &[AgentProfile]) -> String {
    team.iter()
        .map(|a| {
            let skills: Vec<&str> = a.skills.iter().map(|s| s.as_str()).collect();
            format!("- {} ({}): {}", a.name, role_value(a.role), skills.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn decomposition_prompt(task: &TaskNode, team: &[AgentProfile], team_size: usize) -> String {
    let skills: Vec<&str> = task.required_skills.iter().map(|s| s.as_str()).collect();
    let manager_note = team
        .iter()
        .find(|a| a.role == Role::Manager)
        .map(|m| format!("Note: {} is the manager and coordinates the team.", m.name))
        .unwrap_or_default();
    format!(
        r#"Decompose this task into subtasks:

Task: {desc}
Estimated hours: {hours}
Required skills: {skills}

Team members:
{team}
{manager_note}
Create {team_size} subtasks that:
1. Can be worked on independently or with minimal dependencies
2. Match team members' skills
3. Are reasonably sized (total hours should be close to the original task's estimated hours)
4. Cover all aspects of the original task

Return JSON:
{{
    "subtasks": [
       {{
            "description": "Clear description of what needs to be done",
            "estimated_hours": number,
            "required_skills": ["skill1", "skill2"],
            "suggested_assignee": "team member_name (can be any team member including Manager)",
            "dependencies": []  // indices of subtasks this depends on
        }}
    ],
    "decomposition_rationale": "Brief explanation of your decomposition strategy"
}}"#,
        desc = task.description,
        hours = py_float(task.estimated_hours),
        skills = skills.join(", "),
        team = format_team(team),
    )
}

fn format_tasks(ctx: &PolicyContext) -> String {
    if ctx.assignments.is_empty() {
        return "- none assigned".into();
    }
    ctx.assignments
        .iter()
        .take(3)
        .map(|a| {
            let state = if a.task.is_done() {
                "done"
            } else if a.ready {
                "ready"
            } else {
                "blocked by dependencies"
            };
            format!(
                "- {}: {} | Progress: {:.1}/{:.1} hours ({:.0}%) | Alignment: {:.2} | Status: {}",
                a.task.task_id,
                a.task.description,
                a.task.accumulated_effective_hours.min(a.task.estimated_hours),
                a.task.estimated_hours,
                a.task.progress() * 100.0,
                a.af,
                state
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn message_info(ctx: &PolicyContext) -> String {
    if ctx.pending.is_empty() && ctx.inbox.is_empty() {
        return "Messages: none".into();
    }
    let mut lines = vec![format!("Messages ({} needing action):", ctx.pending.len())];
    for p in &ctx.pending {
        lines.push(format!(
            "- {} from {} about {}: {}",
            p.message.message_type,
            p.message.from_agent,
            p.message.about_task.as_ref().map(|t| t.as_str()).unwrap_or("-"),
            p.message.content
        ));
    }
    for m in ctx.inbox.iter().filter(|m| !ctx.pending.iter().any(|p| p.message.message_id == m.message_id)) {
        lines.push(format!("- (read) {} from {}: {}", m.message_type, m.from_agent, m.content));
    }
    lines.join("\n")
}

fn last_action_info(ctx: &PolicyContext) -> String {
    match &ctx.last_action {
        Some(a) => format!("Last action: {} on {} (step {})", a.kind, a.target, a.step),
        None => "Last action: none".into(),
    }
}

pub fn intention_prompt(ctx: &PolicyContext) -> String {
    format!(
        r#"You are {name}, a {role}.

Current situation:
Tasks:
{tasks}
Note: Alignment affects work efficiency.(max: 1.0)
{message_info}
{last_action_info}

Analyze your situation and choose your primary intention for this step:

1. CONTINUE_TASK - Continue working on current tasks
2. CHECK_MESSAGES - Check and potentially respond to messages
3. REQUEST_HELP - Ask for other agents' help
4. NEED_CLARIFICATION - Need clarification on task requirements
5. REPORT_PROGRESS - Report progress to manager
6. SCHEDULE_MEETING - Schedule a meeting

IMPORTANT Decision Factors:
- If has MEETING_START: Almost always CHECK_MESSAGES (meeting is starting!)
- If has MEETING_INVITE: Strongly consider CHECK_MESSAGES (need to RSVP)
- If stuck on task for long: Consider REQUEST_HELP or NEED_CLARIFICATION
- Balance responsiveness with productivity

Return JSON: {{"intention": "INTENTION_NAME", "reasoning": "explanation"}}"#,
        name = ctx.agent.name,
        role = role_value(ctx.agent.role),
        tasks = format_tasks(ctx),
        message_info = message_info(ctx),
        last_action_info = last_action_info(ctx),
    )
}

/// Payload asking the model how much `reply` changed the agent's grasp of
/// `task`.
pub fn evaluation_prompt(
    task: &TaskNode,
    current_alignment: f64,
    reply: &Message,
    original_request: Option<&Message>,
) -> String {
    let skills = if task.required_skills.is_empty() {
        "Not specified".to_string()
    } else {
        task.required_skills.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
    };
    let (request_header, request_body) = match original_request {
        Some(m) => ("Original Request (sent by me):", m.content.as_str()),
        None => ("Context:", "This is a proactive message or the original request is not available."),
    };
    format!(
        r#"You are evaluating how much a received message helps an worker understand their task better.

Task Information:
- Task ID: {task_id}
- Description: {desc}
- Required Skills: {skills}
- Current Progress: {actual:.1}/{est:.1} hours
- Current Alignment Factor: {af:.2} ({pct:.0}%)

Message Type: {mtype}
From Agent: {from}

{request_header}
{request_body}

Reply Received:
{content}

Alignment Factor Guidelines:
- Range: 0.01 (1% understanding) to 1.0 (100% understanding)
- Current value: {af:.2}
- Alignment can increase OR decrease based on communication quality
- Clear and helpful communication should improve understanding
- Confusing, contradictory, or misleading information may reduce understanding
- Consider the overall impact on task clarity and execution confidence

Consider:
1. How directly the reply addresses the original request/confusion
2. How actionable and specific the information is
3. Whether critical blockers were resolved
4. The completeness of the response
5. Diminishing returns (harder to improve as alignment approaches 1.0)

Return a JSON response:
{{
    "new_alignment_factor": <float between 0.01 and 1.0>,
    "change": <float, positive for increase, negative for decrease>,
    "reasoning": "<brief explanation of why this change in understanding>"
}}"#,
        task_id = task.task_id,
        desc = task.description,
        actual = task.accumulated_effective_hours,
        est = task.estimated_hours,
        af = current_alignment,
        pct = current_alignment * 100.0,
        mtype = reply.message_type,
        from = reply.from_agent,
        content = reply.content,
    )
}
