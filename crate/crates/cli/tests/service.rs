mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use http_body_util::BodyExt;
use kgqa_cli::service::{router, AnswerBody, DatasetRuntime, GatewayFactory, ServiceState};
use kgqa_core::agent::{Agent, PromptPolicy, ToolRegistry};
use kgqa_core::config::RunConfig;
use kgqa_core::llm::{LlmGateway, ScriptEntry, ScriptedBackend};
use kgqa_core::sparql::{MockReply, MockTriplestore};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    let response = app
        .clone()
        .oneshot(Request::builder().uri(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn encode(text: &str) -> String {
    text.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn app_from_config(fx: &Fixture) -> axum::Router {
    fx.config(&full_run_script(), &[(DRAFT, select_body("c", &[]))], json!({}));
    let config = RunConfig::load(fx.path("config.json")).unwrap();
    router(ServiceState::from_config(&config, PromptPolicy::EnglishOnly).unwrap())
}

#[tokio::test]
async fn answers_with_the_three_fields() {
    let fx = Fixture::new();
    let app = app_from_config(&fx);
    let (status, body) = get(&app, &format!("/?question={}&dataset=wikidata", encode(QUESTION))).await;
    assert_eq!(status, StatusCode::OK);
    let body: AnswerBody = serde_json::from_value(body).unwrap();
    assert_eq!(
        body,
        AnswerBody {
            dataset: "wikidata".into(),
            question: QUESTION.into(),
            query: FINAL.into(),
            diagnostics: vec![],
        }
    );
}

#[tokio::test]
async fn identical_requests_get_identical_bodies() {
    let fx = Fixture::new();
    let app = app_from_config(&fx);
    let uri = format!("/?question={}&dataset=wikidata", encode(QUESTION));
    let first = get(&app, &uri).await;
    let second = get(&app, &uri).await;
    assert_eq!(first.0, StatusCode::OK);
    assert_eq!(first, second);
}

#[tokio::test]
async fn unknown_dataset_and_missing_parameters() {
    let fx = Fixture::new();
    let app = app_from_config(&fx);
    let (status, body) = get(&app, &format!("/?question={}&dataset=nope", encode(QUESTION))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].as_str().unwrap().contains("nope"));

    let (status, body) = get(&app, "/?dataset=wikidata").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("question"));

    let (status, _) = get(&app, &format!("/?question={}", encode(QUESTION))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = get(&app, "/?question=%20&dataset=wikidata").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn agent_failure_is_still_ok_with_diagnostics() {
    let fx = Fixture::new();
    fx.config(&[text("1. Write the query")], &[], json!({}));
    let config = RunConfig::load(fx.path("config.json")).unwrap();
    let app = router(ServiceState::from_config(&config, PromptPolicy::EnglishOnly).unwrap());
    let (status, body) = get(&app, &format!("/?question={}&dataset=wikidata", encode(QUESTION))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["query"], "");
    assert!(!body["diagnostics"].as_array().unwrap().is_empty());
}

fn scripted_factory(entries: Vec<ScriptEntry>) -> GatewayFactory {
    Arc::new(move || {
        let backend = ScriptedBackend::from_entries(entries.clone())?;
        Ok(Arc::new(LlmGateway::new(Arc::new(backend))))
    })
}

fn entries(values: Vec<Value>) -> Vec<ScriptEntry> {
    values.into_iter().map(|v| serde_json::from_value(v).unwrap()).collect()
}

fn bare_agent() -> Agent {
    let placeholder = ScriptedBackend::new(vec![kgqa_core::llm::ScriptedReply::text("unused")]).unwrap();
    Agent::new(Arc::new(LlmGateway::new(Arc::new(placeholder))), ToolRegistry::new())
}

#[tokio::test]
async fn budget_exhaustion_returns_the_draft() {
    let script = vec![text("1. Write the query"), text(DRAFT), text(FINAL)];
    let store = MockTriplestore::new().with(DRAFT, MockReply::empty().with_delay(Duration::from_secs(30)));
    let datasets = BTreeMap::from([(
        "wikidata".to_string(),
        DatasetRuntime {
            store: Arc::new(store),
            pool: None,
        },
    )]);
    let state = ServiceState::new(bare_agent(), scripted_factory(entries(script)), datasets, Duration::from_millis(300), 2);
    let app = router(state);
    let started = std::time::Instant::now();
    let (status, body) = get(&app, &format!("/?question={}&dataset=wikidata", encode(QUESTION))).await;
    assert!(started.elapsed() < Duration::from_secs(5));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["query"], DRAFT);
    assert!(body["diagnostics"][0].as_str().unwrap().contains("budget"));
}

#[tokio::test]
async fn backend_setup_failure_is_a_server_error() {
    let failing: GatewayFactory = Arc::new(|| anyhow::bail!("connection refused"));
    let datasets = BTreeMap::from([(
        "wikidata".to_string(),
        DatasetRuntime {
            store: Arc::new(MockTriplestore::new()),
            pool: None,
        },
    )]);
    let app = router(ServiceState::new(bare_agent(), failing, datasets, Duration::from_secs(5), 1));
    let (status, body) = get(&app, "/?question=x&dataset=wikidata").await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert!(body["error"].as_str().unwrap().contains("connection refused"));
}

#[tokio::test]
async fn service_uses_english_prompts_for_other_languages() {
    let fx = Fixture::new();
    let app = app_from_config(&fx);
    let (status, body) = get(
        &app,
        &format!("/?question={}&dataset=wikidata&lang=de", encode("Was ist die Hauptstadt von Deutschland?")),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["query"], FINAL);
    // the English-only policy means no fallback note
    assert!(body.get("diagnostics").is_none(), "{body}");
}
