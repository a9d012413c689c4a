//! The feedback step: show the model what its query returned.

use std::collections::BTreeMap;

use super::prompts::{render_prompt, PromptError, PromptKind, PromptTemplate, FEEDBACK, GENERATED_SPARQL, USER_QUESTION};
use super::{Agent, AgentRunRecord};
use crate::sparql::{parse_results, AnswerKind, RawResponse, SparqlError, SparqlQuery};

/// Stands in for a result set with no rows.
pub const EMPTY_RESULT_MARKER: &str = "EMPTY RESULT";

/// Cuts `text` to at most `budget` bytes on a character boundary, appending
/// a marker that says how much was left out.
pub fn truncate_response(text: &str, budget: usize) -> String {
    if text.len() <= budget {
        return text.to_string();
    }
    let mut cut = budget;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!(
        "{}\n[... truncated: showing {cut} of {} bytes]",
        &text[..cut],
        text.len()
    )
}

/// What the model is told about one execution of its query.
pub fn describe_response(query: &SparqlQuery, outcome: &Result<RawResponse, SparqlError>) -> String {
    match outcome {
        Ok(raw) => {
            if raw.body.trim().is_empty() || parse_results(&raw.body, query.form).kind == AnswerKind::Empty {
                EMPTY_RESULT_MARKER.to_string()
            } else {
                raw.body.clone()
            }
        }
        Err(err) => format!("Error: {err}"),
    }
}

/// Renders the feedback template, truncating the response to `byte_budget`.
pub fn feedback_prompt(
    template: &PromptTemplate,
    question: &str,
    query: &str,
    triplestore_response: &str,
    byte_budget: usize,
) -> Result<String, PromptError> {
    let response = if triplestore_response.trim().is_empty() {
        EMPTY_RESULT_MARKER.to_string()
    } else {
        truncate_response(triplestore_response, byte_budget)
    };
    render_prompt(
        template,
        &BTreeMap::from([(USER_QUESTION, question), (GENERATED_SPARQL, query), (FEEDBACK, response.as_str())]),
    )
}

impl Agent {
    pub(crate) fn render_feedback(
        &self,
        record: &mut AgentRunRecord,
        query: &str,
        triplestore_response: &str,
    ) -> Result<String, PromptError> {
        let response = if triplestore_response.trim().is_empty() {
            EMPTY_RESULT_MARKER.to_string()
        } else {
            truncate_response(triplestore_response, self.settings.feedback_byte_budget)
        };
        let question = record.question.clone();
        self.render(
            PromptKind::Feedback,
            &record.language.clone(),
            &BTreeMap::from([
                (USER_QUESTION, question.as_str()),
                (GENERATED_SPARQL, query),
                (FEEDBACK, response.as_str()),
            ]),
            &mut record.diagnostics,
        )
    }
}
