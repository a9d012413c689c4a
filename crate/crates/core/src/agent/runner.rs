//! End-to-end compositions: the simple agent used offline, the full agent
//! used online, and experience pool construction.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::action::last_answer;
use super::feedback::describe_response;
use super::{Agent, AgentRunRecord};
use crate::eval::{AnswerScorer, QaldQuestion};
use crate::llm::ChatMessage;
use crate::pool::{ExperiencePool, ExperienceRecord, PlanMatch, PoolError, QueryExample, RetrievalOptions};
use crate::sparql::{SparqlQuery, Triplestore};

/// Shared view of a run in flight, so a caller with a deadline can fall
/// back to the best query produced so far.
#[derive(Debug, Default)]
pub struct RunProgress {
    best_query: Mutex<Option<String>>,
}

impl RunProgress {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best_query(&self) -> Option<String> {
        self.best_query.lock().expect("progress lock").clone()
    }

    fn offer(&self, query: &str) {
        if !query.trim().is_empty() {
            *self.best_query.lock().expect("progress lock") = Some(query.to_string());
        }
    }
}

impl Agent {
    /// Plan then act, without experience, feedback or triplestore.
    /// Failures end up in `diagnostics` with an empty final query.
    pub async fn run_simple(&self, question: &str, language: &str) -> AgentRunRecord {
        let mut record = AgentRunRecord::new(question, language);
        let plan = match self.plan_step(&[], &mut record).await {
            Ok(plan) => plan,
            Err(err) => {
                record.diagnostics.push(format!("plan step failed: {err}"));
                return record;
            }
        };
        match self.action_step(&plan, &[], &mut record).await {
            Ok(query) => record.final_query = query,
            Err(err) => record.diagnostics.push(format!("action step failed: {err}")),
        }
        record
    }

    /// The online run: retrieve experience, plan, act, execute the draft
    /// query once and refine it from the triplestore response.
    pub async fn run_full(
        &self,
        question: &str,
        language: &str,
        pool: Option<&ExperiencePool>,
        store: &dyn Triplestore,
    ) -> AgentRunRecord {
        self.run_full_tracked(question, language, pool, store, &RunProgress::new()).await
    }

    pub async fn run_full_tracked(
        &self,
        question: &str,
        language: &str,
        pool: Option<&ExperiencePool>,
        store: &dyn Triplestore,
        progress: &RunProgress,
    ) -> AgentRunRecord {
        let mut record = AgentRunRecord::new(question, language);
        let (plans, examples) = match pool {
            Some(pool) => self.retrieve(pool, &mut record).await,
            None => (Vec::new(), Vec::new()),
        };

        let plan = match self.plan_step(&plans, &mut record).await {
            Ok(plan) => plan,
            Err(err) => {
                record.diagnostics.push(format!("plan step failed: {err}"));
                return record;
            }
        };
        let draft = match self.action_step(&plan, &examples, &mut record).await {
            Ok(query) => query,
            Err(err) => {
                record.diagnostics.push(format!("action step failed: {err}"));
                return record;
            }
        };
        record.intermediate_query = Some(draft.clone());
        record.final_query = draft.clone();
        progress.offer(&draft);
        if draft.is_empty() {
            record.diagnostics.push("action step produced no query; feedback skipped".into());
            return record;
        }

        let query = SparqlQuery::new(draft.as_str());
        let outcome = store.execute(&query).await;
        record.triplestore_calls += 1;
        if let Err(err) = &outcome {
            record.diagnostics.push(format!("draft query execution failed: {err}"));
        }
        let response = describe_response(&query, &outcome);
        let prompt = match self.render_feedback(&mut record, &draft, &response) {
            Ok(prompt) => prompt,
            Err(err) => {
                record.diagnostics.push(format!("feedback prompt failed: {err}"));
                return record;
            }
        };
        record.history.push(ChatMessage::user(prompt));
        record.feedback_used = true;
        match self.answer_in_text(&mut record).await {
            Ok(()) => {
                record.final_query = last_answer(&record);
                progress.offer(&record.final_query);
            }
            Err(err) => record
                .diagnostics
                .push(format!("refinement failed, keeping the draft query: {err}")),
        }
        record
    }

    /// Similar plans and question/query pairs for the question. Any failure
    /// degrades to running without experience.
    async fn retrieve<'p>(
        &self,
        pool: &'p ExperiencePool,
        record: &mut AgentRunRecord,
    ) -> (Vec<PlanMatch<'p>>, Vec<QueryExample>) {
        let Some(embedder) = &self.embedder else {
            record.diagnostics.push("no embedder configured; running without experience".into());
            return (Vec::new(), Vec::new());
        };
        let vector = match embedder.embed(&record.question).await {
            Ok(v) => v,
            Err(err) => {
                record.diagnostics.push(format!("question embedding failed; running without experience: {err}"));
                return (Vec::new(), Vec::new());
            }
        };
        let options = RetrievalOptions {
            language: self.settings.same_language_only.then(|| record.language.clone()),
            include_failed_attempts: self.settings.include_failed_attempts,
        };
        let plans = pool.find_top_n_plans(&vector, self.settings.top_n_plans, &options);
        let queries = pool.find_top_n_queries(&vector, self.settings.top_n_queries, &options);
        match (plans, queries) {
            (Ok(plans), Ok(queries)) => (plans, queries),
            (Err(err), _) | (_, Err(err)) => {
                record.diagnostics.push(format!("experience retrieval failed; running without experience: {err}"));
                (Vec::new(), Vec::new())
            }
        }
    }
}

/// Outcome of an offline pool build besides the pool itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub attempted: usize,
    /// Ids of questions without text in the requested language.
    pub skipped: Vec<String>,
    /// Questions that could not be stored at all, with the reason.
    pub failures: Vec<String>,
    pub records: Vec<AgentRunRecord>,
}

/// Runs the simple agent over a training split and records every attempt,
/// successful or not, scored against the gold answers.
///
/// Only a missing embedder aborts; per-question problems are collected in
/// the summary.
pub async fn build_experience_pool(
    agent: &Agent,
    questions: &[QaldQuestion],
    language: &str,
    scorer: &AnswerScorer,
) -> Result<(ExperiencePool, BuildSummary), PoolError> {
    let embedder = agent
        .embedder()
        .ok_or_else(|| PoolError::Input("building a pool needs an embedder".into()))?
        .clone();
    let mut pool = ExperiencePool::new(embedder.dimension(), embedder.id());
    let mut summary = BuildSummary::default();

    for question in questions {
        let Some(text) = question.text(language) else {
            summary.skipped.push(question.id.clone());
            continue;
        };
        summary.attempted += 1;
        let mut run = agent.run_simple(text, language).await;
        let f1 = if run.final_query.trim().is_empty() {
            0.0
        } else {
            scorer.score(question, &run.final_query).await.f1
        };
        let vector = match embedder.embed(text).await {
            Ok(v) => v,
            Err(err) => {
                summary.failures.push(format!("{}: embedding failed: {err}", question.id));
                summary.records.push(run);
                continue;
            }
        };
        if run.plan.is_none() && run.diagnostics.is_empty() {
            run.diagnostics.push("no plan produced".into());
        }
        let record = ExperienceRecord {
            question: text.to_string(),
            language: language.to_string(),
            vector,
            gold_sparql: question.gold_sparql.clone(),
            generated_sparql: run.final_query.clone(),
            plan: run.plan.clone(),
            chat_history: run.history.clone(),
            f1,
            diagnostics: run.diagnostics.clone(),
        };
        if let Err(err) = pool.add_example(record) {
            summary.failures.push(format!("{}: {err}", question.id));
        }
        summary.records.push(run);
    }
    Ok((pool, summary))
}
