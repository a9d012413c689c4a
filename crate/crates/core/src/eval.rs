//! QALD datasets, answer-set scoring, benchmark runs and the optional
//! translate-to-English pre-step.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{Agent, AgentRunRecord};
use crate::cost::{aggregate_usage, UsageStats};
use crate::llm::RunUsage;
use crate::pool::ExperiencePool;
use crate::sparql::{classify_form, fetch_answers, parse_results, AnswerSet, Triplestore};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed dataset: {message}")]
    Parse { message: String },
    #[error("malformed question at index {index}: {message}")]
    Question { index: usize, message: String },
    #[error("invalid dataset: {0}")]
    Validation(String),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaldQuestion {
    pub id: String,
    /// Question text per language code.
    pub strings: BTreeMap<String, String>,
    pub gold_sparql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<AnswerSet>,
}

impl QaldQuestion {
    pub fn text(&self, language: &str) -> Option<&str> {
        self.strings.get(language).map(String::as_str).filter(|s| !s.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaldDataset {
    pub questions: Vec<QaldQuestion>,
    pub split: Split,
}

impl QaldDataset {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Deserialize)]
struct RawQuestion {
    id: Value,
    #[serde(default)]
    question: Vec<RawString>,
    query: RawQuery,
    #[serde(default)]
    answers: Vec<Value>,
}

#[derive(Deserialize)]
struct RawString {
    language: String,
    string: String,
}

#[derive(Deserialize)]
struct RawQuery {
    #[serde(default)]
    sparql: Option<String>,
}

fn convert(index: usize, raw: Value) -> Result<QaldQuestion, EvalError> {
    let bad = |message: String| EvalError::Question { index, message };
    let raw: RawQuestion = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
    let id = match raw.id {
        Value::String(s) => s,
        Value::Number(n) => n.to_string(),
        other => return Err(bad(format!("id must be a string or number, got {other}"))),
    };
    let mut strings = BTreeMap::new();
    for s in raw.question {
        strings.insert(s.language, s.string);
    }
    if strings.values().all(|s| s.trim().is_empty()) {
        return Err(bad(format!("question {id} has no text in any language")));
    }
    let gold_sparql = raw
        .query
        .sparql
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| bad(format!("question {id} has no gold SPARQL")))?;
    let gold_answers = raw
        .answers
        .first()
        .map(|payload| parse_results(&payload.to_string(), classify_form(&gold_sparql)));
    Ok(QaldQuestion {
        id,
        strings,
        gold_sparql,
        gold_answers,
    })
}

/// Parses the QALD JSON layout: a `questions` array whose entries carry
/// `id`, `question` (language/string pairs), `query.sparql` and optionally
/// `answers` in SPARQL results JSON.
pub fn parse_qald(text: &str, split: Split) -> Result<QaldDataset, EvalError> {
    let root: Value = serde_json::from_str(text).map_err(|e| EvalError::Parse { message: e.to_string() })?;
    let Some(Value::Array(items)) = root.get("questions") else {
        return Err(EvalError::Parse {
            message: "missing 'questions' array".into(),
        });
    };
    let mut questions = Vec::with_capacity(items.len());
    let mut seen = HashSet::new();
    for (index, item) in items.iter().enumerate() {
        let q = convert(index, item.clone())?;
        if !seen.insert(q.id.clone()) {
            return Err(EvalError::Validation(format!("duplicate question id '{}' at index {index}", q.id)));
        }
        questions.push(q);
    }
    Ok(QaldDataset { questions, split })
}

pub fn load_qald(path: impl AsRef<Path>, split: Split) -> Result<QaldDataset, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_qald(&text, split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    pub const PERFECT: Scores = Scores {
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
    };
    pub const ZERO: Scores = Scores {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// Set-based precision, recall and F1. Two empty sets score perfectly; an
/// empty side against a nonempty one scores zero. Error sets count as empty.
pub fn f1_score(gold: &AnswerSet, predicted: &AnswerSet) -> Scores {
    let g = gold.answer_keys();
    let p = predicted.answer_keys();
    match (g.is_empty(), p.is_empty()) {
        (true, true) => return Scores::PERFECT,
        (true, false) | (false, true) => return Scores::ZERO,
        _ => {}
    }
    let hits = g.intersection(&p).count() as f64;
    let precision = hits / p.len() as f64;
    let recall = hits / g.len() as f64;
    let f1 = if hits == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores { precision, recall, f1 }
}

/// Unweighted means over questions.
pub fn macro_f1(results: &[Scores]) -> Result<Scores, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Input("macro F1 of zero questions".into()));
    }
    let n = results.len() as f64;
    let (p, r, f) = results
        .iter()
        .fold((0.0, 0.0, 0.0), |(p, r, f), s| (p + s.precision, r + s.recall, f + s.f1));
    Ok(Scores {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    })
}

/// Scores predicted queries against a question's gold answers, executing
/// the gold query only when the dataset does not store its answers.
pub struct AnswerScorer {
    store: Arc<dyn Triplestore>,
}

impl std::fmt::Debug for AnswerScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnswerScorer").finish_non_exhaustive()
    }
}

impl AnswerScorer {
    pub fn new(store: Arc<dyn Triplestore>) -> Self {
        Self { store }
    }

    pub async fn gold_answers(&self, question: &QaldQuestion) -> AnswerSet {
        match &question.gold_answers {
            Some(answers) => answers.clone(),
            None => fetch_answers(self.store.as_ref(), &question.gold_sparql).await,
        }
    }

    /// An empty prediction scores zero even against an empty gold set.
    pub async fn score(&self, question: &QaldQuestion, predicted_query: &str) -> Scores {
        if predicted_query.trim().is_empty() {
            return Scores::ZERO;
        }
        let gold = self.gold_answers(question).await;
        let predicted = fetch_answers(self.store.as_ref(), predicted_query).await;
        f1_score(&gold, &predicted)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TranslateError {
    #[error("translation service: {0}")]
    Service(String),
}

/// Text-in, text-out machine translation into English.
#[async_trait::async_trait]
pub trait Translator: Send + Sync {
    async fn translate(&self, text: &str, source_language: &str) -> Result<String, TranslateError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

#[async_trait::async_trait]
impl Translator for IdentityTranslator {
    async fn translate(&self, text: &str, _source_language: &str) -> Result<String, TranslateError> {
        Ok(text.to_string())
    }
}

/// Fixed table of translations; unknown inputs are an error.
#[derive(Debug, Clone, Default)]
pub struct MapTranslator {
    table: HashMap<String, String>,
}

impl MapTranslator {
    pub fn new<K: Into<String>, V: Into<String>>(entries: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            table: entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

#[async_trait::async_trait]
impl Translator for MapTranslator {
    async fn translate(&self, text: &str, _source_language: &str) -> Result<String, TranslateError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| TranslateError::Service(format!("no translation for {text:?}")))
    }
}

/// POSTs `{"text", "source", "target": "en"}` and reads `translation`
/// from the JSON reply.
#[derive(Debug, Clone)]
pub struct HttpTranslator {
    client: reqwest::Client,
    url: String,
    timeout: Duration,
}

impl HttpTranslator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: reqwest::Client::new(),
            url: url.into(),
            timeout,
        }
    }
}

#[async_trait::async_trait]
impl Translator for HttpTranslator {
    async fn translate(&self, text: &str, source_language: &str) -> Result<String, TranslateError> {
        let response = self
            .client
            .post(&self.url)
            .timeout(self.timeout)
            .json(&serde_json::json!({"text": text, "source": source_language, "target": "en"}))
            .send()
            .await
            .map_err(|e| TranslateError::Service(e.to_string()))?;
        if !response.status().is_success() {
            return Err(TranslateError::Service(format!("HTTP {}", response.status())));
        }
        let body: Value = response.json().await.map_err(|e| TranslateError::Service(e.to_string()))?;
        body.get("translation")
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .map(str::to_string)
            .ok_or_else(|| TranslateError::Service("reply lacks a 'translation' string".into()))
    }
}

/// Translates, or keeps the original text and notes why.
pub async fn translate_or_keep(
    translator: &dyn Translator,
    text: &str,
    source_language: &str,
    diagnostics: &mut Vec<String>,
) -> String {
    match translator.translate(text, source_language).await {
        Ok(english) => english,
        Err(err) => {
            diagnostics.push(format!("translation failed, answering in the original language: {err}"));
            text.to_string()
        }
    }
}

/// Produces a run record for one question.
#[async_trait::async_trait]
pub trait QuestionRunner: Send + Sync {
    async fn run(&self, question: &str, language: &str) -> AgentRunRecord;
}

/// The online agent as a benchmark subject.
pub struct FullAgentRunner<'a> {
    pub agent: &'a Agent,
    pub pool: Option<&'a ExperiencePool>,
    pub store: &'a dyn Triplestore,
}

#[async_trait::async_trait]
impl QuestionRunner for FullAgentRunner<'_> {
    async fn run(&self, question: &str, language: &str) -> AgentRunRecord {
        self.agent.run_full(question, language, self.pool, self.store).await
    }
}

/// The offline agent (plan and act only) as a benchmark subject.
pub struct SimpleAgentRunner<'a>(pub &'a Agent);

#[async_trait::async_trait]
impl QuestionRunner for SimpleAgentRunner<'_> {
    async fn run(&self, question: &str, language: &str) -> AgentRunRecord {
        self.0.run_simple(question, language).await
    }
}

pub struct BenchmarkOptions {
    pub language: String,
    /// Label for the report; not used otherwise.
    pub model: String,
    pub parallelism: usize,
    /// When set, questions are translated and the agent works in English.
    pub translator: Option<Arc<dyn Translator>>,
}

impl BenchmarkOptions {
    pub fn new(language: impl Into<String>) -> Self {
        Self {
            language: language.into(),
            model: String::new(),
            parallelism: 1,
            translator: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    /// The text the agent saw, after translation if any.
    pub question: String,
    pub final_query: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub call_count: u64,
    pub usage: RunUsage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub language: String,
    pub model: String,
    pub machine_translation: bool,
    pub evaluated: usize,
    pub skipped: usize,
    /// Absent when nothing was evaluated.
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub mean_calls: Option<f64>,
    pub usage: Option<UsageStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: ReportSummary,
    pub per_question: Vec<QuestionResult>,
    pub skipped_ids: Vec<String>,
}

impl EvalReport {
    pub fn macro_scores(&self) -> Option<Scores> {
        Some(Scores {
            precision: self.summary.macro_precision?,
            recall: self.summary.macro_recall?,
            f1: self.summary.macro_f1?,
        })
    }
}

/// Runs every question that has text in the requested language, scores the
/// final queries and aggregates. Agent failures score zero; nothing aborts.
/// Questions run concurrently up to `parallelism` and are reported in
/// dataset order.
pub async fn run_benchmark(
    dataset: &QaldDataset,
    runner: &dyn QuestionRunner,
    scorer: &AnswerScorer,
    options: &BenchmarkOptions,
) -> EvalReport {
    let language = options.language.as_str();
    let mut skipped_ids = Vec::new();
    let mut work = Vec::new();
    for q in &dataset.questions {
        match q.text(language) {
            Some(text) => work.push((q, text)),
            None => {
                tracing::warn!(id = %q.id, language, "question has no text in this language; skipped");
                skipped_ids.push(q.id.clone());
            }
        }
    }

    let rows: Vec<(QuestionResult, AgentRunRecord)> = stream::iter(work)
        .map(|(q, text)| async move {
            let mut notes = Vec::new();
            let (seen, agent_language) = match &options.translator {
                Some(t) => (translate_or_keep(t.as_ref(), text, language, &mut notes).await, "en"),
                None => (text.to_string(), language),
            };
            let record = runner.run(&seen, agent_language).await;
            let scores = scorer.score(q, &record.final_query).await;
            notes.extend(record.diagnostics.iter().cloned());
            let result = QuestionResult {
                id: q.id.clone(),
                question: seen,
                final_query: record.final_query.clone(),
                precision: scores.precision,
                recall: scores.recall,
                f1: scores.f1,
                call_count: record.usage.calls,
                usage: record.usage,
                diagnostics: notes,
            };
            (result, record)
        })
        .buffered(options.parallelism.max(1))
        .collect()
        .await;

    let scores: Vec<Scores> = rows
        .iter()
        .map(|(r, _)| Scores {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        })
        .collect();
    let macros = macro_f1(&scores).ok();
    let records: Vec<AgentRunRecord> = rows.iter().map(|(_, rec)| rec.clone()).collect();
    let usage = aggregate_usage(&records).ok();
    let per_question: Vec<QuestionResult> = rows.into_iter().map(|(r, _)| r).collect();
    let mean_calls = (!per_question.is_empty())
        .then(|| per_question.iter().map(|r| r.call_count as f64).sum::<f64>() / per_question.len() as f64);

    EvalReport {
        summary: ReportSummary {
            language: language.to_string(),
            model: options.model.clone(),
            machine_translation: options.translator.is_some(),
            evaluated: per_question.len(),
            skipped: skipped_ids.len(),
            macro_precision: macros.map(|m| m.precision),
            macro_recall: macros.map(|m| m.recall),
            macro_f1: macros.map(|m| m.f1),
            mean_calls,
            usage,
        },
        per_question,
        skipped_ids,
    }
}
