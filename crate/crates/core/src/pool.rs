//! The experience pool: past question/plan/query attempts with their F1,
//! retrieved by question-embedding similarity.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Plan;
use crate::embed::{cosine_similarity, EmbeddingVector};
use crate::llm::ChatMessage;

pub const POOL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TOP_N: usize = 3;
const PERFECT_F1_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("invalid record: {0}")]
    Input(String),
    #[error("pool file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("pool file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported pool format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceRecord {
    pub question: String,
    pub language: String,
    pub vector: EmbeddingVector,
    pub gold_sparql: String,
    pub generated_sparql: String,
    /// Absent when the run failed before a plan was parsed.
    pub plan: Option<Plan>,
    pub chat_history: Vec<ChatMessage>,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl ExperienceRecord {
    pub fn is_successful(&self) -> bool {
        (self.f1 - 1.0).abs() <= PERFECT_F1_TOLERANCE
    }
}

/// A retrieved plan example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanMatch<'a> {
    pub record: &'a ExperienceRecord,
    pub similarity: f64,
}

/// A retrieved question/query pair for in-context examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryExample {
    pub question: String,
    pub sparql: String,
    pub similarity: f64,
    /// The agent's own unsuccessful query, only when failed attempts are
    /// requested as negative examples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_attempt: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOptions {
    /// Restrict candidates to records of this language.
    #[serde(default)]
    pub language: Option<String>,
    /// Attach the generated query of records with F1 < 1 to query examples.
    #[serde(default)]
    pub include_failed_attempts: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolHeader {
    format_version: u32,
    dimension: usize,
    embedder_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperiencePool {
    dimension: usize,
    embedder_id: String,
    records: Vec<ExperienceRecord>,
}

impl ExperiencePool {
    pub fn new(dimension: usize, embedder_id: impl Into<String>) -> Self {
        assert!(dimension > 0, "pool dimension must be positive");
        Self {
            dimension,
            embedder_id: embedder_id.into(),
            records: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn records(&self) -> &[ExperienceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn successful_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_successful()).count()
    }

    /// Appends a record. Repeated questions are kept as separate records.
    pub fn add_example(&mut self, record: ExperienceRecord) -> Result<(), PoolError> {
        if record.vector.dimension() != self.dimension {
            return Err(PoolError::Input(format!(
                "vector dimension {} does not match pool dimension {}",
                record.vector.dimension(),
                self.dimension
            )));
        }
        if record.vector.is_zero() {
            return Err(PoolError::Input("zero question vector".into()));
        }
        if !(0.0..=1.0).contains(&record.f1) {
            return Err(PoolError::Input(format!("f1 {} outside [0, 1]", record.f1)));
        }
        if record.gold_sparql.trim().is_empty() {
            return Err(PoolError::Input("empty gold SPARQL".into()));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn find_by_question(&self, question: &str) -> impl Iterator<Item = &ExperienceRecord> {
        let question = question.to_string();
        self.records.iter().filter(move |r| r.question == question)
    }

    /// Scores every eligible record and keeps the `n` most similar. The sort
    /// is stable, so equal scores stay in insertion order.
    fn ranked<'a>(
        &'a self,
        query: &EmbeddingVector,
        n: usize,
        eligible: impl Fn(&ExperienceRecord) -> bool,
    ) -> Result<Vec<PlanMatch<'a>>, PoolError> {
        if query.dimension() != self.dimension {
            return Err(PoolError::Input(format!(
                "query dimension {} does not match pool dimension {}",
                query.dimension(),
                self.dimension
            )));
        }
        let mut scored = Vec::new();
        for record in self.records.iter().filter(|r| eligible(r)) {
            let similarity = cosine_similarity(query, &record.vector).map_err(|e| PoolError::Input(e.to_string()))?;
            scored.push(PlanMatch { record, similarity });
        }
        scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        scored.truncate(n);
        Ok(scored)
    }

    fn language_ok(record: &ExperienceRecord, options: &RetrievalOptions) -> bool {
        options.language.as_deref().is_none_or(|lang| record.language == lang)
    }

    /// Top-`n` similar records with F1 = 1 that carry a plan.
    pub fn find_top_n_plans(
        &self,
        query: &EmbeddingVector,
        n: usize,
        options: &RetrievalOptions,
    ) -> Result<Vec<PlanMatch<'_>>, PoolError> {
        self.ranked(query, n, |r| r.is_successful() && r.plan.is_some() && Self::language_ok(r, options))
    }

    /// Top-`n` similar records of any F1, returned as gold question/query pairs.
    pub fn find_top_n_queries(
        &self,
        query: &EmbeddingVector,
        n: usize,
        options: &RetrievalOptions,
    ) -> Result<Vec<QueryExample>, PoolError> {
        Ok(self
            .ranked(query, n, |r| Self::language_ok(r, options))?
            .into_iter()
            .map(|m| QueryExample {
                question: m.record.question.clone(),
                sparql: m.record.gold_sparql.clone(),
                similarity: m.similarity,
                failed_attempt: (options.include_failed_attempts
                    && !m.record.is_successful()
                    && !m.record.generated_sparql.trim().is_empty())
                .then(|| m.record.generated_sparql.clone()),
            })
            .collect())
    }

    /// Writes a header line followed by one JSON record per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PoolError> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = PoolHeader {
            format_version: POOL_FORMAT_VERSION,
            dimension: self.dimension,
            embedder_id: self.embedder_id.clone(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for record in &self.records {
            serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a pool file. Any bad line fails the whole load.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PoolError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let header_line = match lines.next() {
            Some((_, line)) => line?,
            None => {
                return Err(PoolError::Format {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        };
        let header: PoolHeader = serde_json::from_str(&header_line).map_err(|e| PoolError::Format {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format_version != POOL_FORMAT_VERSION {
            return Err(PoolError::Version {
                found: header.format_version,
                expected: POOL_FORMAT_VERSION,
            });
        }
        if header.dimension == 0 {
            return Err(PoolError::Format {
                line: 1,
                message: "dimension must be positive".into(),
            });
        }
        let mut pool = ExperiencePool::new(header.dimension, header.embedder_id);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ExperienceRecord = serde_json::from_str(&line).map_err(|e| PoolError::Format {
                line: idx + 1,
                message: e.to_string(),
            })?;
            pool.add_example(record).map_err(|e| PoolError::Format {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;

    fn record(embedder: &HashEmbedder, question: &str, f1: f64) -> ExperienceRecord {
        ExperienceRecord {
            question: question.into(),
            language: "en".into(),
            vector: embedder.embed_sync(question).unwrap(),
            gold_sparql: format!("SELECT ?x WHERE {{ ?x ?p \"{question}\" }}"),
            generated_sparql: "SELECT ?y WHERE { ?y ?p ?o }".into(),
            plan: Some(Plan::new(vec!["Link entities".into(), "Write SPARQL".into()], "1. Link entities\n2. Write SPARQL").unwrap()),
            chat_history: vec![ChatMessage::system("s"), ChatMessage::user("Link entities")],
            f1,
            diagnostics: vec![],
        }
    }

    fn embedder() -> HashEmbedder {
        HashEmbedder::new(16, 1).unwrap()
    }

    #[test]
    fn add_example_appends() {
        let e = embedder();
        let mut pool = ExperiencePool::new(16, e.id_string());
        pool.add_example(record(&e, "Who is Angela Merkel?", 1.0)).unwrap();
        assert_eq!(pool.len(), 1);
        pool.add_example(record(&e, "Who is Angela Merkel?", 1.0)).unwrap();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn stored_record_found_by_question() {
        let e = embedder();
        let mut pool = ExperiencePool::new(16, "x");
        pool.add_example(record(&e, "a", 1.0)).unwrap();
        pool.add_example(record(&e, "b", 0.5)).unwrap();
        let found: Vec<_> = pool.find_by_question("b").collect();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].f1, 0.5);
    }

    #[test]
    fn rejects_bad_records() {
        let e = embedder();
        let mut pool = ExperiencePool::new(8, "x");
        assert!(matches!(pool.add_example(record(&e, "a", 1.0)), Err(PoolError::Input(_))));
        let mut pool = ExperiencePool::new(16, "x");
        assert!(pool.add_example(record(&e, "a", 1.5)).is_err());
        let mut r = record(&e, "a", 1.0);
        r.gold_sparql = " ".into();
        assert!(pool.add_example(r).is_err());
    }

    #[test]
    fn no_successful_records_no_plans() {
        let e = embedder();
        let mut pool = ExperiencePool::new(16, "x");
        pool.add_example(record(&e, "a b", 0.0)).unwrap();
        pool.add_example(record(&e, "c d", 0.99)).unwrap();
        let q = e.embed_sync("a b").unwrap();
        assert!(pool.find_top_n_plans(&q, 3, &RetrievalOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn exact_question_ranks_first() {
        let e = embedder();
        let mut pool = ExperiencePool::new(16, "x");
        for q in ["What is the capital of France?", "Who is Angela Merkel?", "How tall is Everest?"] {
            pool.add_example(record(&e, q, 1.0)).unwrap();
        }
        let query = e.embed_sync("Who is Angela Merkel?").unwrap();
        let hits = pool.find_top_n_plans(&query, 3, &RetrievalOptions::default()).unwrap();
        assert_eq!(hits[0].record.question, "Who is Angela Merkel?");
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn query_retrieval_returns_gold_regardless_of_f1() {
        let e = embedder();
        let mut pool = ExperiencePool::new(16, "x");
        assert!(pool
            .find_top_n_queries(&e.embed_sync("q").unwrap(), 3, &RetrievalOptions::default())
            .unwrap()
            .is_empty());
        let r = record(&e, "only one", 0.0);
        let gold = r.gold_sparql.clone();
        pool.add_example(r).unwrap();
        let hits = pool
            .find_top_n_queries(&e.embed_sync("something else").unwrap(), 3, &RetrievalOptions::default())
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].sparql, gold);
        assert_eq!(hits[0].failed_attempt, None);

        let opts = RetrievalOptions {
            include_failed_attempts: true,
            ..Default::default()
        };
        let hits = pool.find_top_n_queries(&e.embed_sync("x").unwrap(), 3, &opts).unwrap();
        assert_eq!(hits[0].failed_attempt.as_deref(), Some("SELECT ?y WHERE { ?y ?p ?o }"));
    }

    #[test]
    fn language_filter() {
        let e = embedder();
        let mut pool = ExperiencePool::new(16, "x");
        let mut de = record(&e, "Wer ist Angela Merkel?", 1.0);
        de.language = "de".into();
        pool.add_example(de).unwrap();
        pool.add_example(record(&e, "Who is Angela Merkel?", 1.0)).unwrap();
        let q = e.embed_sync("Wer ist Angela Merkel?").unwrap();
        let opts = RetrievalOptions {
            language: Some("en".into()),
            ..Default::default()
        };
        let hits = pool.find_top_n_plans(&q, 5, &opts).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.language, "en");
    }

    #[test]
    fn ties_keep_insertion_order() {
        let e = embedder();
        let mut pool = ExperiencePool::new(16, "x");
        for i in 0..4 {
            let mut r = record(&e, "same question", 1.0);
            r.gold_sparql = format!("ASK {{ {i} }}");
            pool.add_example(r).unwrap();
        }
        let hits = pool
            .find_top_n_queries(&e.embed_sync("same question").unwrap(), 3, &RetrievalOptions::default())
            .unwrap();
        let order: Vec<_> = hits.iter().map(|h| h.sparql.as_str()).collect();
        assert_eq!(order, ["ASK { 0 }", "ASK { 1 }", "ASK { 2 }"]);
    }

    #[test]
    fn empty_pool_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let pool = ExperiencePool::new(16, "hash");
        pool.save(&path).unwrap();
        assert_eq!(ExperiencePool::load(&path).unwrap(), pool);
    }

    #[test]
    fn unknown_version_fails_closed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        std::fs::write(&path, "{\"format_version\":99,\"dimension\":4,\"embedder_id\":\"x\"}\n").unwrap();
        assert!(matches!(
            ExperiencePool::load(&path),
            Err(PoolError::Version { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn bad_record_line_fails_whole_load() {
        let e = embedder();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.jsonl");
        let mut pool = ExperiencePool::new(16, "x");
        pool.add_example(record(&e, "a", 1.0)).unwrap();
        pool.save(&path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        std::fs::write(&path, text).unwrap();
        match ExperiencePool::load(&path) {
            Err(PoolError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    impl HashEmbedder {
        fn id_string(&self) -> String {
            use crate::embed::Embedder;
            self.id()
        }
    }
}
