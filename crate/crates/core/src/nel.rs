//! Entity and relation linking tool.
//!
//! Each entity surface form goes to the entity lookup service and each
//! relation surface form to the relation linker. A mapping is stored only
//! when the service returns a URI. Results are cached per
//! `(kind, label, language)`.

use std::collections::{BTreeMap, HashMap};
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use lru::LruCache;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::agent::{Tool, ToolContext, ToolError};
use crate::llm::ToolSpec;

pub const TOOL_NAME: &str = "wikidata_el";
pub const DEFAULT_CACHE_CAPACITY: usize = 10_000;
pub const WIKIDATA_API: &str = "https://www.wikidata.org/w/api.php";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NelError {
    #[error("empty label")]
    EmptyLabel,
    #[error("lookup service unreachable: {0}")]
    Transport(String),
    #[error("malformed lookup payload: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCandidates {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub language: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkResult {
    pub linked_entities: BTreeMap<String, String>,
    pub linked_relations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkOutcome {
    pub result: LinkResult,
    /// Candidates skipped because their lookup failed.
    pub diagnostics: Vec<String>,
}

#[async_trait::async_trait]
pub trait EntityLookup: Send + Sync {
    /// Top-ranked concept URI for a label, if any.
    async fn lookup(&self, label: &str, language: &str) -> Result<Option<String>, NelError>;
}

#[async_trait::async_trait]
pub trait RelationLookup: Send + Sync {
    async fn lookup(&self, label: &str) -> Result<Option<String>, NelError>;
}

fn absolute_iri(uri: &str) -> Option<String> {
    let uri = uri.trim();
    let scheme_end = uri.find(':')?;
    let scheme = &uri[..scheme_end];
    let valid_scheme = !scheme.is_empty()
        && scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c));
    (valid_scheme && uri.len() > scheme_end + 1 && !uri.contains(char::is_whitespace)).then(|| uri.to_string())
}

/// Client for the MediaWiki `wbsearchentities` action.
#[derive(Debug, Clone)]
pub struct WikidataEntityLookup {
    client: reqwest::Client,
    endpoint: String,
    entity_type: String,
}

impl WikidataEntityLookup {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, NelError> {
        let client = reqwest::Client::builder()
            .user_agent(concat!("kgqa/", env!("CARGO_PKG_VERSION")))
            .timeout(timeout)
            .build()
            .map_err(|e| NelError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            entity_type: "item".into(),
        })
    }

    /// Parses a `wbsearchentities` response, taking the first hit.
    pub fn parse_response(payload: &Value) -> Result<Option<String>, NelError> {
        if let Some(err) = payload.get("error") {
            return Err(NelError::Protocol(format!("service error: {err}")));
        }
        let hits = payload
            .get("search")
            .and_then(Value::as_array)
            .ok_or_else(|| NelError::Protocol("missing 'search' array".into()))?;
        let Some(first) = hits.first() else {
            return Ok(None);
        };
        let uri = first
            .get("concepturi")
            .and_then(Value::as_str)
            .ok_or_else(|| NelError::Protocol("search hit without concepturi".into()))?;
        Ok(absolute_iri(uri))
    }
}

#[async_trait::async_trait]
impl EntityLookup for WikidataEntityLookup {
    async fn lookup(&self, label: &str, language: &str) -> Result<Option<String>, NelError> {
        let response = self
            .client
            .get(&self.endpoint)
            .query(&[
                ("action", "wbsearchentities"),
                ("search", label),
                ("language", language),
                ("uselang", language),
                ("type", self.entity_type.as_str()),
                ("format", "json"),
            ])
            .send()
            .await
            .map_err(|e| NelError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(NelError::Transport(format!("HTTP {status}")));
        }
        let payload: Value = response.json().await.map_err(|e| NelError::Protocol(e.to_string()))?;
        Self::parse_response(&payload)
    }
}

/// Client for a Falcon 2.0 style relation linker: POST `{"text": label}`,
/// ranked relation URIs in the response under `relations_field`.
#[derive(Debug, Clone)]
pub struct FalconRelationLookup {
    client: reqwest::Client,
    endpoint: String,
    relations_field: String,
}

impl FalconRelationLookup {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, NelError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| NelError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            relations_field: "relations_wikidata".into(),
        })
    }

    pub fn with_relations_field(mut self, field: impl Into<String>) -> Self {
        self.relations_field = field.into();
        self
    }

    /// Ranked entries may be URI strings, `[uri, label]` pairs or objects
    /// with a `uri`/`URI` key. The first usable one wins.
    pub fn parse_response(payload: &Value, field: &str) -> Result<Option<String>, NelError> {
        let ranked = match payload.get(field) {
            None | Some(Value::Null) => return Ok(None),
            Some(Value::Array(items)) => items,
            Some(other) => return Err(NelError::Protocol(format!("'{field}' is not an array: {other}"))),
        };
        let first = ranked.iter().find_map(|item| {
            let uri = match item {
                Value::String(s) => Some(s.as_str()),
                Value::Array(pair) => pair.first().and_then(Value::as_str),
                Value::Object(obj) => obj.get("uri").or_else(|| obj.get("URI")).and_then(Value::as_str),
                _ => None,
            }?;
            absolute_iri(uri.trim_matches(|c| c == '<' || c == '>'))
        });
        Ok(first)
    }
}

#[async_trait::async_trait]
impl RelationLookup for FalconRelationLookup {
    async fn lookup(&self, label: &str) -> Result<Option<String>, NelError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&json!({"text": label}))
            .send()
            .await
            .map_err(|e| NelError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(NelError::Transport(format!("HTTP {status}")));
        }
        let payload: Value = response.json().await.map_err(|e| NelError::Protocol(e.to_string()))?;
        Self::parse_response(&payload, &self.relations_field)
    }
}

/// Table-backed lookup for tests and offline runs. Counts service calls.
#[derive(Debug, Default)]
pub struct MockLookup {
    table: HashMap<String, String>,
    failing: Vec<String>,
    calls: AtomicUsize,
}

impl MockLookup {
    pub fn new<K: Into<String>, V: Into<String>>(entries: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            table: entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            failing: Vec::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Labels whose lookup fails with a transport error.
    pub fn failing_on(mut self, label: impl Into<String>) -> Self {
        self.failing.push(label.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn get(&self, label: &str) -> Result<Option<String>, NelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.failing.iter().any(|f| f == label) {
            return Err(NelError::Transport(format!("simulated failure for {label:?}")));
        }
        Ok(self.table.get(label).cloned())
    }
}

#[async_trait::async_trait]
impl EntityLookup for MockLookup {
    async fn lookup(&self, label: &str, _language: &str) -> Result<Option<String>, NelError> {
        self.get(label)
    }
}

#[async_trait::async_trait]
impl RelationLookup for MockLookup {
    async fn lookup(&self, label: &str) -> Result<Option<String>, NelError> {
        self.get(label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum LinkKind {
    Entity,
    Relation,
}

type CacheKey = (LinkKind, String, String);

pub struct Linker {
    entities: std::sync::Arc<dyn EntityLookup>,
    relations: std::sync::Arc<dyn RelationLookup>,
    cache: Option<Mutex<LruCache<CacheKey, Option<String>>>>,
}

impl std::fmt::Debug for Linker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Linker").field("cached", &self.cache.is_some()).finish()
    }
}

impl Linker {
    pub fn new(entities: std::sync::Arc<dyn EntityLookup>, relations: std::sync::Arc<dyn RelationLookup>) -> Self {
        Self {
            entities,
            relations,
            cache: None,
        }
    }

    pub fn with_cache(mut self, capacity: usize) -> Self {
        self.cache = NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c)));
        self
    }

    fn cached(&self, key: &CacheKey) -> Option<Option<String>> {
        self.cache.as_ref()?.lock().expect("cache lock").get(key).cloned()
    }

    fn remember(&self, key: CacheKey, value: &Option<String>) {
        if let Some(cache) = &self.cache {
            cache.lock().expect("cache lock").put(key, value.clone());
        }
    }

    pub async fn entity_lookup(&self, label: &str, language: &str) -> Result<Option<String>, NelError> {
        let label = label.trim();
        if label.is_empty() {
            return Err(NelError::EmptyLabel);
        }
        let key = (LinkKind::Entity, label.to_string(), language.to_string());
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let uri = self.entities.lookup(label, language).await?.and_then(|u| absolute_iri(&u));
        self.remember(key, &uri);
        Ok(uri)
    }

    pub async fn relation_lookup(&self, label: &str) -> Result<Option<String>, NelError> {
        let label = label.trim();
        if label.is_empty() {
            return Err(NelError::EmptyLabel);
        }
        let key = (LinkKind::Relation, label.to_string(), String::new());
        if let Some(hit) = self.cached(&key) {
            return Ok(hit);
        }
        let uri = self.relations.lookup(label).await?.and_then(|u| absolute_iri(&u));
        self.remember(key, &uri);
        Ok(uri)
    }

    /// Links every candidate in input order. Lookup failures skip the
    /// candidate and are reported in the diagnostics.
    pub async fn link(&self, candidates: &LinkCandidates) -> LinkOutcome {
        let mut outcome = LinkOutcome::default();
        for label in candidates.entities.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
            if outcome.result.linked_entities.contains_key(label) {
                continue;
            }
            match self.entity_lookup(label, &candidates.language).await {
                Ok(Some(uri)) => {
                    outcome.result.linked_entities.insert(label.to_string(), uri);
                }
                Ok(None) => {}
                Err(e) => outcome.diagnostics.push(format!("entity {label:?}: {e}")),
            }
        }
        for label in candidates.relations.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
            if outcome.result.linked_relations.contains_key(label) {
                continue;
            }
            match self.relation_lookup(label).await {
                Ok(Some(uri)) => {
                    outcome.result.linked_relations.insert(label.to_string(), uri);
                }
                Ok(None) => {}
                Err(e) => outcome.diagnostics.push(format!("relation {label:?}: {e}")),
            }
        }
        outcome
    }
}

/// The linker exposed to the model as the `wikidata_el` tool.
#[derive(Debug)]
pub struct NelTool {
    linker: Linker,
}

impl NelTool {
    pub fn new(linker: Linker) -> Self {
        Self { linker }
    }

    pub fn linker(&self) -> &Linker {
        &self.linker
    }

    fn candidates(arguments: &Map<String, Value>, language: &str) -> Result<LinkCandidates, ToolError> {
        let list = |key: &str| -> Result<Vec<String>, ToolError> {
            match arguments.get(key) {
                None | Some(Value::Null) => Ok(Vec::new()),
                Some(Value::String(s)) => Ok(vec![s.clone()]),
                Some(Value::Array(items)) => items
                    .iter()
                    .map(|v| {
                        v.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| ToolError::Arguments(format!("'{key}' must hold strings")))
                    })
                    .collect(),
                Some(other) => Err(ToolError::Arguments(format!("'{key}' must be a list of strings, got {other}"))),
            }
        };
        let mut entities = list("entities")?;
        entities.extend(list("label")?);
        Ok(LinkCandidates {
            entities,
            relations: list("relations")?,
            language: language.to_string(),
        })
    }
}

#[async_trait::async_trait]
impl Tool for NelTool {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: TOOL_NAME.into(),
            description: "Named entity and relation linking: maps surface forms (e.g. \"Person name\" or \
                          \"is child of\") to URIs in the Wikidata knowledge graph."
                .into(),
            parameters: json!({
                "type": "object",
                "properties": {
                    "entities": {
                        "type": "array",
                        "items": {"type": "string"},
                        "description": "Entity surface forms to link"
                    },
                    "relations": {
                        "type": "array",
                        "items": {"type": "string"},
                        "description": "Relation surface forms to link"
                    },
                    "label": {
                        "type": "string",
                        "description": "A single entity surface form"
                    }
                }
            }),
        }
    }

    async fn call(&self, arguments: &Map<String, Value>, context: &ToolContext) -> Result<String, ToolError> {
        let candidates = Self::candidates(arguments, &context.language)?;
        let outcome = self.linker.link(&candidates).await;
        for d in &outcome.diagnostics {
            tracing::warn!(diagnostic = %d, "linking skipped a candidate");
        }
        serde_json::to_string(&outcome.result).map_err(|e| ToolError::Execution(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    const Q567: &str = "http://www.wikidata.org/entity/Q567";

    fn linker(entities: Arc<MockLookup>, relations: Arc<MockLookup>) -> Linker {
        Linker::new(entities, relations)
    }

    fn cands(entities: &[&str], relations: &[&str]) -> LinkCandidates {
        LinkCandidates {
            entities: entities.iter().map(|s| s.to_string()).collect(),
            relations: relations.iter().map(|s| s.to_string()).collect(),
            language: "en".into(),
        }
    }

    #[tokio::test]
    async fn links_angela_merkel() {
        let ents = Arc::new(MockLookup::new([("Angela Merkel", Q567)]));
        let l = linker(ents, Arc::new(MockLookup::default()));
        let out = l.link(&cands(&["Angela Merkel"], &[])).await;
        assert_eq!(out.result.linked_entities.get("Angela Merkel").map(String::as_str), Some(Q567));
        assert!(out.result.linked_relations.is_empty());
    }

    #[tokio::test]
    async fn empty_lookup_omits_key() {
        let l = linker(Arc::new(MockLookup::default()), Arc::new(MockLookup::default()));
        let out = l.link(&cands(&["zzqxv-nonexistent-zzz"], &[])).await;
        assert_eq!(out.result, LinkResult::default());
    }

    #[tokio::test]
    async fn duplicates_collapse_and_cache_saves_calls() {
        let ents = Arc::new(MockLookup::new([("Berlin", "http://www.wikidata.org/entity/Q64")]));
        let l = linker(ents.clone(), Arc::new(MockLookup::default())).with_cache(16);
        let out = l.link(&cands(&["Berlin", "Berlin"], &[])).await;
        assert_eq!(out.result.linked_entities.len(), 1);
        assert_eq!(ents.calls(), 1);
    }

    #[tokio::test]
    async fn relations_land_in_relation_map() {
        let rels = Arc::new(MockLookup::new([("is child of", "http://www.wikidata.org/prop/direct/P40")]));
        let ents = Arc::new(MockLookup::new([("is child of", "http://wrong.example/entity")]));
        let l = linker(ents.clone(), rels.clone());
        let out = l.link(&cands(&[], &["is child of"])).await;
        assert_eq!(
            out.result.linked_relations.get("is child of").map(String::as_str),
            Some("http://www.wikidata.org/prop/direct/P40")
        );
        assert!(out.result.linked_entities.is_empty());
        assert_eq!(ents.calls(), 0);
        assert_eq!(rels.calls(), 1);
    }

    #[tokio::test]
    async fn trailing_space_is_trimmed() {
        let ents = Arc::new(MockLookup::new([("berlin", "http://www.wikidata.org/entity/Q64")]));
        let l = linker(ents, Arc::new(MockLookup::default()));
        assert_eq!(
            l.entity_lookup("berlin ", "en").await.unwrap(),
            l.entity_lookup("berlin", "en").await.unwrap()
        );
        assert!(l.entity_lookup("berlin", "en").await.unwrap().is_some());
        assert_eq!(l.entity_lookup("   ", "en").await, Err(NelError::EmptyLabel));
    }

    #[tokio::test]
    async fn failures_are_soft() {
        let ents = Arc::new(MockLookup::new([("Berlin", "http://www.wikidata.org/entity/Q64")]).failing_on("Paris"));
        let l = linker(ents, Arc::new(MockLookup::default()));
        let out = l.link(&cands(&["Paris", "Berlin"], &[])).await;
        assert_eq!(out.result.linked_entities.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.diagnostics[0].contains("Paris"));
    }

    #[tokio::test]
    async fn non_iri_results_are_dropped() {
        let ents = Arc::new(MockLookup::new([("x", "not a uri"), ("y", "")]));
        let l = linker(ents, Arc::new(MockLookup::default()));
        let out = l.link(&cands(&["x", "y"], &[])).await;
        assert!(out.result.linked_entities.is_empty());
    }

    #[test]
    fn wbsearchentities_first_hit() {
        let payload = json!({"searchinfo": {"search": "Angela Merkel"}, "search": [
            {"id": "Q567", "concepturi": Q567, "label": "Angela Merkel"},
            {"id": "Q1", "concepturi": "http://www.wikidata.org/entity/Q1"}
        ], "success": 1});
        assert_eq!(WikidataEntityLookup::parse_response(&payload).unwrap().as_deref(), Some(Q567));
        assert_eq!(WikidataEntityLookup::parse_response(&json!({"search": []})).unwrap(), None);
        assert!(WikidataEntityLookup::parse_response(&json!({"error": {"code": "x"}})).is_err());
        assert!(WikidataEntityLookup::parse_response(&json!({"nope": 1})).is_err());
    }

    #[test]
    fn falcon_ranked_relations_take_first() {
        let payload = json!({"relations_wikidata": [
            ["http://www.wikidata.org/entity/P40", "child"],
            ["http://www.wikidata.org/entity/P22", "father"],
            ["http://www.wikidata.org/entity/P25", "mother"]
        ]});
        assert_eq!(
            FalconRelationLookup::parse_response(&payload, "relations_wikidata").unwrap().as_deref(),
            Some("http://www.wikidata.org/entity/P40")
        );
        let objects = json!({"relations_wikidata": [{"URI": "<http://www.wikidata.org/entity/P40>"}]});
        assert!(FalconRelationLookup::parse_response(&objects, "relations_wikidata").unwrap().is_some());
        assert_eq!(FalconRelationLookup::parse_response(&json!({}), "relations_wikidata").unwrap(), None);
    }

    #[tokio::test]
    async fn tool_accepts_label_and_lists() {
        let ents = Arc::new(MockLookup::new([("Angela Merkel", Q567)]));
        let rels = Arc::new(MockLookup::new([("spouse", "http://www.wikidata.org/prop/direct/P26")]));
        let tool = NelTool::new(linker(ents, rels));
        let ctx = ToolContext { language: "en".into() };
        let out = tool
            .call(json!({"label": "Angela Merkel", "relations": ["spouse"]}).as_object().unwrap(), &ctx)
            .await
            .unwrap();
        let parsed: LinkResult = serde_json::from_str(&out).unwrap();
        assert_eq!(parsed.linked_entities["Angela Merkel"], Q567);
        assert_eq!(parsed.linked_relations.len(), 1);
        assert!(tool.call(json!({"entities": 5}).as_object().unwrap(), &ctx).await.is_err());
    }
}
