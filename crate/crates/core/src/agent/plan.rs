//! Plans and the plan step.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompts::{PromptKind, PLAN_EXPERIENCE_EXAMPLE, USER_QUESTION};
use super::{Agent, AgentError, AgentRunRecord};
use crate::llm::ChatMessage;
use crate::pool::PlanMatch;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("plan has no steps")]
    NoSteps { raw: String },
    #[error("plan step {index} is blank")]
    BlankStep { index: usize },
}

/// Ordered subtasks produced by the plan step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PlanRepr")]
pub struct Plan {
    steps: Vec<String>,
    raw_text: String,
}

#[derive(Deserialize)]
struct PlanRepr {
    steps: Vec<String>,
    raw_text: String,
}

impl TryFrom<PlanRepr> for Plan {
    type Error = PlanError;

    fn try_from(repr: PlanRepr) -> Result<Self, Self::Error> {
        Plan::new(repr.steps, &repr.raw_text)
    }
}

impl Plan {
    pub fn new(steps: Vec<String>, raw_text: &str) -> Result<Self, PlanError> {
        if steps.is_empty() {
            return Err(PlanError::NoSteps { raw: raw_text.to_string() });
        }
        let mut trimmed = Vec::with_capacity(steps.len());
        for (index, step) in steps.into_iter().enumerate() {
            let step = step.trim();
            if step.is_empty() {
                return Err(PlanError::BlankStep { index });
            }
            trimmed.push(step.to_string());
        }
        Ok(Self {
            steps: trimmed,
            raw_text: raw_text.to_string(),
        })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

// "1. x", "2) x", "Step 3: x", "**Step 4:** x", "- x", "* x", "• x"
static STEP_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:\*\*|__)?\s*(?:(?:step\s*)?\d+\s*[.):]|step\s*\d+\b|[-*+•](?:\s|$))\s*(?:\*\*|__)?\s*(?:[.):\-]\s*)?(.*)$")
        .unwrap()
});

fn strip_bold(text: &str) -> &str {
    let text = text.trim();
    let text = text.strip_prefix("**").unwrap_or(text);
    text.strip_suffix("**").unwrap_or(text).trim()
}

/// Splits model output into plan steps.
///
/// Enumerated or bulleted lines start steps; indented lines below a step are
/// joined onto it; anything else around the list is dropped. Output without
/// any markers is read one step per nonempty line.
pub fn parse_plan(raw: &str) -> Result<Plan, PlanError> {
    let mut steps: Vec<String> = Vec::new();
    let mut saw_marker = false;
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(caps) = STEP_MARKER.captures(line) {
            saw_marker = true;
            let body = strip_bold(&caps[1]);
            if !body.is_empty() {
                steps.push(body.to_string());
            }
            continue;
        }
        let indented = line.starts_with([' ', '\t']);
        if indented {
            if let Some(last) = steps.last_mut() {
                last.push(' ');
                last.push_str(strip_bold(line));
            }
        }
    }
    if !saw_marker {
        steps = raw
            .lines()
            .map(strip_bold)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
    }
    Plan::new(steps, raw)
}

/// Text bound to the plan prompt's experience placeholder.
pub fn format_plan_experience(plans: &[PlanMatch<'_>]) -> String {
    if plans.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nPlans that led to correct queries for similar questions:\n");
    for m in plans {
        let Some(plan) = &m.record.plan else { continue };
        out.push_str("\nQuestion: ");
        out.push_str(&m.record.question);
        out.push_str("\nPlan:\n");
        out.push_str(plan.raw_text().trim_end());
        out.push('\n');
    }
    out
}

impl Agent {
    /// Asks the model for a plan: exactly one LLM call. The plan is also
    /// stored on `record`.
    pub async fn plan_step(&self, experience: &[PlanMatch<'_>], record: &mut AgentRunRecord) -> Result<Plan, AgentError> {
        let examples = format_plan_experience(experience);
        let system = self.render(
            PromptKind::Plan,
            &record.language,
            &BTreeMap::from([(USER_QUESTION, record.question.as_str()), (PLAN_EXPERIENCE_EXAMPLE, examples.as_str())]),
            &mut record.diagnostics,
        )?;
        let messages = vec![ChatMessage::system(system), ChatMessage::user(record.question.clone())];
        let response = self.call_llm(&messages, false, &mut record.usage).await?;
        let plan = parse_plan(&response.message.content)?;
        record.plan = Some(plan.clone());
        Ok(plan)
    }
}
