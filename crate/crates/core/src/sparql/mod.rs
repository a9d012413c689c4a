//! SPARQL execution over HTTP and normalized answer sets.

mod http;
mod mock;
mod results;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use http::{HttpTriplestore, DEFAULT_QUERY_TIMEOUT};
pub use mock::{MockReply, MockTriplestore, MockTriplestoreFile};
pub use results::{canonicalize_value, parse_results, CanonicalValue, RdfTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QueryForm {
    Select,
    Ask,
    Construct,
    Describe,
    Unknown,
}

static PROLOGUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)^(?:\s+|#[^\n]*(?:\n|$)|PREFIX\s+[^\s:]*:\s*<[^>]*>|BASE\s*<[^>]*>)*").unwrap()
});
static FORM_KEYWORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(SELECT|ASK|CONSTRUCT|DESCRIBE)\b").unwrap());

/// Detects the query form, skipping comments and PREFIX/BASE declarations.
pub fn classify_form(query: &str) -> QueryForm {
    let prologue_len = PROLOGUE.find(query).map_or(0, |m| m.end());
    let body = &query[prologue_len..];
    match FORM_KEYWORD
        .captures(body)
        .map(|c| c[1].to_ascii_uppercase())
        .as_deref()
    {
        Some("SELECT") => QueryForm::Select,
        Some("ASK") => QueryForm::Ask,
        Some("CONSTRUCT") => QueryForm::Construct,
        Some("DESCRIBE") => QueryForm::Describe,
        _ => QueryForm::Unknown,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparqlQuery {
    pub text: String,
    pub form: QueryForm,
}

impl SparqlQuery {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let form = classify_form(&text);
        Self { text, form }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SparqlError {
    #[error("empty query")]
    EmptyQuery,
    #[error("query timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("triplestore returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("triplestore unreachable: {0}")]
    Transport(String),
    #[error("malformed triplestore response: {0}")]
    Protocol(String),
}

#[async_trait::async_trait]
pub trait Triplestore: Send + Sync {
    async fn execute(&self, query: &SparqlQuery) -> Result<RawResponse, SparqlError>;
}

/// Executes and parses in one go; failures become an error answer set.
pub async fn fetch_answers(store: &dyn Triplestore, query: &str) -> AnswerSet {
    let query = SparqlQuery::new(query);
    match store.execute(&query).await {
        Ok(raw) => parse_results(&raw.body, query.form),
        Err(err) => AnswerSet::error(err.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Bindings,
    Boolean,
    Error,
    Empty,
}

/// One result row: variable name to canonical value.
pub type Row = BTreeMap<String, String>;

/// Element of the set compared by F1 scoring.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnswerKey {
    Boolean(bool),
    /// The row's canonical values with variable names dropped, sorted.
    Row(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub kind: AnswerKind,
    #[serde(default)]
    pub rows: BTreeSet<Row>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boolean_value: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_text: Option<String>,
}

impl AnswerSet {
    pub fn empty() -> Self {
        Self {
            kind: AnswerKind::Empty,
            rows: BTreeSet::new(),
            boolean_value: None,
            error_text: None,
        }
    }

    pub fn boolean(value: bool) -> Self {
        Self {
            kind: AnswerKind::Boolean,
            boolean_value: Some(value),
            ..Self::empty()
        }
    }

    pub fn error(text: impl Into<String>) -> Self {
        Self {
            kind: AnswerKind::Error,
            error_text: Some(text.into()),
            ..Self::empty()
        }
    }

    /// Builds a bindings set; no rows yields the empty kind.
    pub fn from_rows(rows: impl IntoIterator<Item = Row>) -> Self {
        let rows: BTreeSet<Row> = rows.into_iter().collect();
        if rows.is_empty() {
            Self::empty()
        } else {
            Self {
                kind: AnswerKind::Bindings,
                rows,
                ..Self::empty()
            }
        }
    }

    /// Convenience for single-variable results.
    pub fn single_column(var: &str, values: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self::from_rows(values.into_iter().map(|v| Row::from([(var.to_string(), v.into())])))
    }

    pub fn is_empty_like(&self) -> bool {
        matches!(self.kind, AnswerKind::Empty | AnswerKind::Error)
    }

    /// The set compared by F1: booleans are singletons, errors are empty.
    pub fn answer_keys(&self) -> BTreeSet<AnswerKey> {
        match self.kind {
            AnswerKind::Boolean => self.boolean_value.map(AnswerKey::Boolean).into_iter().collect(),
            AnswerKind::Bindings => self
                .rows
                .iter()
                .map(|row| {
                    let mut values: Vec<String> = row.values().cloned().collect();
                    values.sort();
                    AnswerKey::Row(values)
                })
                .collect(),
            AnswerKind::Empty | AnswerKind::Error => BTreeSet::new(),
        }
    }
}
