use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{RawResponse, SparqlError, SparqlQuery, Triplestore};

const EMPTY_BINDINGS: &str = r#"{"head":{"vars":[]},"results":{"bindings":[]}}"#;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockReply {
    pub status: u16,
    pub body: String,
    pub delay: Option<Duration>,
}

impl MockReply {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
            delay: None,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            body: body.into(),
            delay: None,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn boolean(value: bool) -> Self {
        Self::ok(format!(r#"{{"head":{{}},"boolean":{value}}}"#))
    }

    pub fn uris(var: &str, uris: &[&str]) -> Self {
        let bindings: Vec<Value> = uris
            .iter()
            .map(|u| serde_json::json!({ var: {"type": "uri", "value": u} }))
            .collect();
        Self::ok(serde_json::json!({"head": {"vars": [var]}, "results": {"bindings": bindings}}).to_string())
    }

    pub fn empty() -> Self {
        Self::ok(EMPTY_BINDINGS)
    }
}

/// In-process triplestore answering by exact (trimmed) query text.
#[derive(Debug)]
pub struct MockTriplestore {
    routes: HashMap<String, MockReply>,
    fallback: MockReply,
    timeout: Option<Duration>,
    hits: AtomicUsize,
    log: Mutex<Vec<String>>,
}

impl Default for MockTriplestore {
    fn default() -> Self {
        Self::new()
    }
}

impl MockTriplestore {
    pub fn new() -> Self {
        Self {
            routes: HashMap::new(),
            fallback: MockReply::empty(),
            timeout: None,
            hits: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with(mut self, query: &str, reply: MockReply) -> Self {
        self.routes.insert(query.trim().to_string(), reply);
        self
    }

    pub fn with_default(mut self, reply: MockReply) -> Self {
        self.fallback = reply;
        self
    }

    /// Replies slower than this fail with a timeout error.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn executed_queries(&self) -> Vec<String> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn from_file(file: MockTriplestoreFile) -> Self {
        let mut store = Self::new();
        for route in file.routes {
            store = store.with(&route.query, route.reply.into());
        }
        if let Some(default) = file.default {
            store = store.with_default(default.into());
        }
        store
    }
}

#[async_trait::async_trait]
impl Triplestore for MockTriplestore {
    async fn execute(&self, query: &SparqlQuery) -> Result<RawResponse, SparqlError> {
        if query.text.trim().is_empty() {
            return Err(SparqlError::EmptyQuery);
        }
        self.hits.fetch_add(1, Ordering::SeqCst);
        self.log.lock().expect("log lock").push(query.text.clone());
        let reply = self.routes.get(query.text.trim()).unwrap_or(&self.fallback).clone();
        if let Some(delay) = reply.delay {
            match self.timeout {
                Some(limit) if delay > limit => {
                    tokio::time::sleep(limit).await;
                    return Err(SparqlError::Timeout(limit));
                }
                _ => tokio::time::sleep(delay).await,
            }
        }
        if !(200..300).contains(&reply.status) {
            return Err(SparqlError::Status {
                status: reply.status,
                body: reply.body,
            });
        }
        Ok(RawResponse {
            status: reply.status,
            body: reply.body,
        })
    }
}

/// JSON description of a mock triplestore, used from configuration files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTriplestoreFile {
    #[serde(default)]
    pub routes: Vec<MockRoute>,
    #[serde(default)]
    pub default: Option<MockReplyFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRoute {
    pub query: String,
    #[serde(flatten)]
    pub reply: MockReplyFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockReplyFile {
    #[serde(default = "ok_status")]
    pub status: u16,
    /// A JSON payload, or a string sent verbatim.
    pub body: Value,
}

fn ok_status() -> u16 {
    200
}

impl From<MockReplyFile> for MockReply {
    fn from(file: MockReplyFile) -> Self {
        let body = match file.body {
            Value::String(s) => s,
            other => other.to_string(),
        };
        MockReply::status(file.status, body)
    }
}
