//! The action step: one exchange per plan step, with tool calling.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::plan::Plan;
use super::prompts::{PromptKind, QUESTION_QUERY_EXAMPLE};
use super::{Agent, AgentError, AgentRunRecord};
use crate::llm::{estimate_tokens, ChatMessage, LlmError, Role};
use crate::pool::QueryExample;

static FENCED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_+-]*[ \t]*\r?\n?(.*?)```").unwrap());
static FORM_UPPER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(?:SELECT|ASK|CONSTRUCT|DESCRIBE)\b").unwrap());
static FORM_LINE_START: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\s*(?:select|ask|construct|describe)\b").unwrap());
static PROLOGUE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(?:PREFIX\s+[A-Za-z0-9_.-]*:|BASE\s*<)").unwrap());

/// Best-effort extraction of a SPARQL query from model output.
///
/// Takes the inside of the first code fence if there is one, then cuts
/// everything before the prologue or the first query form keyword.
/// Text without any keyword is returned trimmed.
pub fn sanitize_query(raw: &str) -> String {
    let unfenced = match FENCED.captures(raw) {
        Some(caps) => caps.get(1).map_or("", |m| m.as_str()),
        None => raw.trim_start_matches("```").trim_end_matches("```"),
    };
    let text = unfenced.trim();
    let form_at = FORM_UPPER
        .find(text)
        .map(|m| m.start())
        .or_else(|| FORM_LINE_START.find(text).map(|m| m.start() + (m.len() - m.as_str().trim_start().len())));
    let Some(form_at) = form_at else {
        return text.to_string();
    };
    let start = PROLOGUE
        .find(&text[..form_at])
        .map_or(form_at, |m| m.start());
    text[start..].trim().to_string()
}

fn message_tokens(message: &ChatMessage) -> u64 {
    estimate_tokens(&message.content)
        + message
            .tool_calls
            .iter()
            .map(|c| estimate_tokens(&serde_json::Value::Object(c.arguments.clone()).to_string()))
            .sum::<u64>()
}

/// The part of `history` sent to the model under an estimated token budget.
///
/// The system prompt always stays. Older exchanges are dropped whole, from
/// one user message up to the next, so assistant tool calls never lose their
/// tool results. The latest exchange is kept even if it alone is too large.
pub fn fit_context(history: &[ChatMessage], budget: u64) -> Vec<ChatMessage> {
    let mut total: u64 = history.iter().map(message_tokens).sum();
    if total <= budget {
        return history.to_vec();
    }
    let keep_head = usize::from(history.first().is_some_and(|m| m.role == Role::System));
    let (head, rest) = history.split_at(keep_head);
    let mut start = 0;
    for boundary in (1..rest.len()).filter(|&i| rest[i].role == Role::User) {
        if total <= budget {
            break;
        }
        total -= rest[start..boundary].iter().map(message_tokens).sum::<u64>();
        start = boundary;
    }
    head.iter().chain(&rest[start..]).cloned().collect()
}

/// Text bound to the action prompt's example placeholder.
pub fn format_query_examples(examples: &[QueryExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nExamples of similar questions and their correct SPARQL queries:\n");
    for e in examples {
        out.push_str("\nQuestion: ");
        out.push_str(&e.question);
        out.push_str("\nSPARQL: ");
        out.push_str(e.sparql.trim());
        out.push('\n');
        if let Some(failed) = &e.failed_attempt {
            out.push_str("An earlier incorrect attempt for this question: ");
            out.push_str(failed.trim());
            out.push('\n');
        }
    }
    out
}

fn step_message(question: &str, plan: &Plan, index: usize) -> String {
    let step = &plan.steps()[index];
    let n = plan.len();
    if index == 0 {
        format!("Question: {question}\n\nStep 1 of {n}: {step}")
    } else {
        format!("Step {} of {n}: {step}", index + 1)
    }
}

impl Agent {
    /// Runs the plan against the action prompt, appending to `record.history`.
    ///
    /// Each step gets one user message and one completion. Tool calls made in
    /// an intermediate step are executed right away and their results are
    /// read by the next step's completion. The final step keeps calling the
    /// model until it answers in text (bounded by `max_tool_rounds`).
    /// Returns the sanitized last assistant reply.
    pub async fn action_step(
        &self,
        plan: &Plan,
        experience: &[QueryExample],
        record: &mut AgentRunRecord,
    ) -> Result<String, AgentError> {
        let examples = format_query_examples(experience);
        let system = self.render(
            PromptKind::Action,
            &record.language,
            &BTreeMap::from([(QUESTION_QUERY_EXAMPLE, examples.as_str())]),
            &mut record.diagnostics,
        )?;
        record.history.push(ChatMessage::system(system));

        for index in 0..plan.len() {
            record.history.push(ChatMessage::user(step_message(&record.question, plan, index)));
            if index + 1 == plan.len() {
                self.answer_in_text(record).await?;
            } else {
                self.exchange(record, true).await?;
            }
        }
        Ok(last_answer(record))
    }

    /// Sends the history, appends the reply and the results of any tool calls.
    /// Returns whether the reply called tools.
    async fn exchange(&self, record: &mut AgentRunRecord, with_tools: bool) -> Result<bool, LlmError> {
        let context = fit_context(&record.history, self.settings.context_token_budget);
        if context.len() < record.history.len() {
            let note = "context budget exceeded; older exchanges left out of the prompt".to_string();
            if !record.diagnostics.contains(&note) {
                record.diagnostics.push(note);
            }
        }
        let response = self.call_llm(&context, with_tools, &mut record.usage).await?;
        let calls = response.message.tool_calls.clone();
        record.history.push(response.message);
        if calls.is_empty() {
            return Ok(false);
        }
        record.tool_calls += calls.len();
        let results = self.run_tools(&calls, &record.language, &mut record.diagnostics).await;
        record.history.extend(results);
        Ok(true)
    }

    /// Exchanges until the model replies without tool calls. After
    /// `max_tool_rounds` round trips the tools are withdrawn.
    pub(crate) async fn answer_in_text(&self, record: &mut AgentRunRecord) -> Result<(), LlmError> {
        let limit = self.settings.max_tool_rounds;
        let mut rounds = 0;
        loop {
            let forced = rounds >= limit;
            if forced && rounds > 0 {
                record
                    .diagnostics
                    .push(format!("tool-call limit of {limit} round trips reached; asking for a text answer"));
            }
            match self.exchange(record, !forced).await {
                Ok(true) if forced => return Ok(()),
                Ok(true) => rounds += 1,
                Ok(false) => return Ok(()),
                Err(LlmError::ToolProtocol { message, .. }) if forced => {
                    record.diagnostics.push(format!("model kept calling tools after the limit: {message}"));
                    return Ok(());
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// The sanitized content of the last assistant message.
pub(crate) fn last_answer(record: &AgentRunRecord) -> String {
    record
        .history
        .iter()
        .rev()
        .find(|m| m.role == Role::Assistant)
        .map(|m| sanitize_query(&m.content))
        .unwrap_or_default()
}
