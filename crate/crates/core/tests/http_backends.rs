//! HTTP clients against throwaway local servers.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Form, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgqa_core::embed::{Embedder, HttpEmbedder};
use kgqa_core::eval::{HttpTranslator, Translator};
use kgqa_core::llm::{ChatMessage, LlmError, LlmGateway, OpenAiBackend, RetryPolicy, ToolSpec};
use kgqa_core::nel::{EntityLookup, FalconRelationLookup, RelationLookup, WikidataEntityLookup};
use kgqa_core::sparql::{HttpTriplestore, SparqlError, SparqlQuery};
use kgqa_core::Triplestore;
use serde_json::{json, Value};

async fn serve(router: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    format!("http://{addr}")
}

type Seen = Arc<Mutex<Vec<Value>>>;

#[tokio::test]
async fn openai_round_trip_with_tool_call() {
    let seen: Seen = Arc::default();
    let router = Router::new()
        .route(
            "/v1/chat/completions",
            post(|State(seen): State<Seen>, headers: HeaderMap, Json(body): Json<Value>| async move {
                assert_eq!(headers["authorization"], "Bearer sk-test");
                seen.lock().unwrap().push(body);
                Json(json!({
                    "choices": [{"message": {"role": "assistant", "content": null, "tool_calls": [{
                        "id": "call_a", "type": "function",
                        "function": {"name": "wikidata_el", "arguments": "{\"entities\": [\"Berlin\"]}"}
                    }]}}],
                    "usage": {"prompt_tokens": 31, "completion_tokens": 9}
                }))
            }),
        )
        .with_state(seen.clone());
    let base = serve(router).await;
    let backend = OpenAiBackend::new(&format!("{base}/v1"), "gpt-test", Some("sk-test".into()), Duration::from_secs(5)).unwrap();
    let gateway = LlmGateway::new(Arc::new(backend));
    let tools = [ToolSpec {
        name: "wikidata_el".into(),
        description: "link".into(),
        parameters: json!({"type": "object", "properties": {"entities": {"type": "array", "items": {"type": "string"}}}}),
    }];
    let reply = gateway
        .complete(&[ChatMessage::system("s"), ChatMessage::user("Where is Berlin?")], Some(&tools))
        .await
        .unwrap();
    assert_eq!(reply.message.tool_calls[0].tool_name, "wikidata_el");
    assert_eq!(reply.message.tool_calls[0].call_id, "call_a");
    assert_eq!(reply.message.tool_calls[0].arguments["entities"], json!(["Berlin"]));
    assert_eq!((reply.usage.input_tokens, reply.usage.output_tokens, reply.usage.estimated), (31, 9, false));

    let body = &seen.lock().unwrap()[0];
    assert_eq!(body["model"], "gpt-test");
    assert_eq!(body["messages"][1]["content"], "Where is Berlin?");
    assert_eq!(body["tools"][0]["function"]["name"], "wikidata_el");
}

#[tokio::test]
async fn openai_missing_usage_is_estimated_and_5xx_is_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let router = Router::new()
        .route(
            "/chat/completions",
            post(|State(hits): State<Arc<AtomicUsize>>| async move {
                if hits.fetch_add(1, Ordering::SeqCst) == 0 {
                    return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
                }
                (StatusCode::OK, Json(json!({"choices": [{"message": {"role": "assistant", "content": "ASK { ?s ?p ?o }"}}]})))
            }),
        )
        .with_state(hits.clone());
    let base = serve(router).await;
    let backend = OpenAiBackend::new(&format!("{base}/chat/completions"), "m", None, Duration::from_secs(5)).unwrap();
    let gateway = LlmGateway::new(Arc::new(backend)).with_retry(RetryPolicy::no_delay(3));
    let reply = gateway.complete(&[ChatMessage::system("s"), ChatMessage::user("one two three")], None).await.unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    assert!(reply.usage.estimated);
    assert_eq!(reply.message.content, "ASK { ?s ?p ?o }");
    assert_eq!(gateway.usage_snapshot().calls, 1);
}

#[tokio::test]
async fn openai_client_error_is_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let router = Router::new()
        .route(
            "/chat/completions",
            post(|State(hits): State<Arc<AtomicUsize>>| async move {
                hits.fetch_add(1, Ordering::SeqCst);
                (StatusCode::BAD_REQUEST, "bad model")
            }),
        )
        .with_state(hits.clone());
    let base = serve(router).await;
    let backend = OpenAiBackend::new(&base, "m", None, Duration::from_secs(5)).unwrap();
    let gateway = LlmGateway::new(Arc::new(backend)).with_retry(RetryPolicy::no_delay(3));
    let err = gateway.complete(&[ChatMessage::system("s"), ChatMessage::user("hi")], None).await.unwrap_err();
    assert!(matches!(err, LlmError::Protocol(_)), "{err}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

const SELECT_BODY: &str =
    r#"{"head":{"vars":["x"]},"results":{"bindings":[{"x":{"type":"uri","value":"http://www.wikidata.org/entity/Q64"}}]}}"#;

#[tokio::test]
async fn sparql_get_for_short_and_post_for_long_queries() {
    let methods: Arc<Mutex<Vec<(String, usize)>>> = Arc::default();
    let router = Router::new()
        .route(
            "/sparql",
            get(|State(m): State<Arc<Mutex<Vec<(String, usize)>>>>, headers: HeaderMap, Query(q): Query<HashMap<String, String>>| async move {
                assert_eq!(headers["accept"], "application/sparql-results+json");
                m.lock().unwrap().push(("GET".into(), q["query"].len()));
                SELECT_BODY
            })
            .post(|State(m): State<Arc<Mutex<Vec<(String, usize)>>>>, Form(q): Form<HashMap<String, String>>| async move {
                m.lock().unwrap().push(("POST".into(), q["query"].len()));
                SELECT_BODY
            }),
        )
        .with_state(methods.clone());
    let base = serve(router).await;
    let store = HttpTriplestore::new(format!("{base}/sparql"), Duration::from_secs(5)).unwrap();

    let short = SparqlQuery::new("SELECT ?x WHERE { wd:Q183 wdt:P36 ?x }");
    let response = store.execute(&short).await.unwrap();
    assert_eq!(response.status, 200);
    assert_eq!(response.body, SELECT_BODY);

    let long_text = format!("SELECT ?x WHERE {{ ?x ?p ?o . FILTER(?o != \"{}\") }}", "a".repeat(3000));
    store.execute(&SparqlQuery::new(long_text.clone())).await.unwrap();

    let seen = methods.lock().unwrap().clone();
    assert_eq!(seen, [("GET".to_string(), short.text.len()), ("POST".to_string(), long_text.len())]);
}

#[tokio::test]
async fn sparql_status_and_malformed_bodies_are_errors() {
    let router = Router::new()
        .route("/bad", get(|| async { (StatusCode::BAD_REQUEST, "Parse error: unexpected }") }))
        .route("/html", get(|| async { "<html>oops</html>" }));
    let base = serve(router).await;
    let store = HttpTriplestore::new(format!("{base}/bad"), Duration::from_secs(5)).unwrap();
    match store.execute(&SparqlQuery::new("SELECT ?x WHERE { }")).await {
        Err(SparqlError::Status { status, body }) => {
            assert_eq!(status, 400);
            assert!(body.contains("Parse error"));
        }
        other => panic!("{other:?}"),
    }
    let store = HttpTriplestore::new(format!("{base}/html"), Duration::from_secs(5)).unwrap();
    assert!(matches!(
        store.execute(&SparqlQuery::new("SELECT ?x WHERE { }")).await,
        Err(SparqlError::Protocol(_))
    ));
}

#[tokio::test]
async fn stalled_endpoint_times_out_on_schedule() {
    let router = Router::new().route(
        "/slow",
        get(|| async {
            tokio::time::sleep(Duration::from_secs(30)).await;
            SELECT_BODY
        }),
    );
    let base = serve(router).await;
    let store = HttpTriplestore::new(format!("{base}/slow"), Duration::from_secs(2)).unwrap();
    let started = Instant::now();
    let result = store.execute(&SparqlQuery::new("SELECT ?x WHERE { ?x ?p ?o }")).await;
    let elapsed = started.elapsed();
    assert!(matches!(result, Err(SparqlError::Timeout(_))), "{result:?}");
    assert!(elapsed >= Duration::from_secs(1) && elapsed <= Duration::from_secs(3), "{elapsed:?}");
}

#[tokio::test]
async fn wbsearchentities_request_and_parse() {
    let router = Router::new().route(
        "/w/api.php",
        get(|Query(q): Query<HashMap<String, String>>| async move {
            assert_eq!(q["action"], "wbsearchentities");
            assert_eq!(q["format"], "json");
            let hits = if q["search"] == "Berlin" {
                assert_eq!(q["language"], "de");
                json!([{"id": "Q64", "concepturi": "http://www.wikidata.org/entity/Q64"}, {"id": "Q821244"}])
            } else {
                json!([])
            };
            Json(json!({"search": hits}))
        }),
    );
    let base = serve(router).await;
    let lookup = WikidataEntityLookup::new(format!("{base}/w/api.php"), Duration::from_secs(5)).unwrap();
    assert_eq!(
        lookup.lookup("Berlin", "de").await.unwrap().as_deref(),
        Some("http://www.wikidata.org/entity/Q64")
    );
    assert_eq!(lookup.lookup("Nowhere", "de").await.unwrap(), None);
}

#[tokio::test]
async fn falcon_relations_request_and_parse() {
    let router = Router::new().route(
        "/falcon",
        post(|Json(body): Json<Value>| async move {
            assert_eq!(body["text"], "capital");
            Json(json!({"relations_wikidata": [["<http://www.wikidata.org/entity/P36>", "capital"]]}))
        }),
    );
    let base = serve(router).await;
    let lookup = FalconRelationLookup::new(format!("{base}/falcon"), Duration::from_secs(5)).unwrap();
    assert_eq!(
        lookup.lookup("capital").await.unwrap().as_deref(),
        Some("http://www.wikidata.org/entity/P36")
    );
}

#[tokio::test]
async fn embedding_service_round_trip_and_dimension_check() {
    let router = Router::new().route(
        "/embeddings",
        post(|Json(body): Json<Value>| async move {
            assert_eq!(body["model"], "e5");
            let input = body["input"][0].as_str().unwrap().to_string();
            assert!(input.starts_with("query: "));
            let dims = if input.contains("short") { 2 } else { 3 };
            Json(json!({"data": [{"embedding": vec![0.5; dims]}]}))
        }),
    );
    let base = serve(router).await;
    let embedder = HttpEmbedder::new(format!("{base}/embeddings"), "e5", 3, Duration::from_secs(5))
        .unwrap()
        .with_prefix("query: ");
    assert_eq!(embedder.embed("Wer ist Angela Merkel?").await.unwrap().values(), [0.5, 0.5, 0.5]);
    assert!(embedder.embed("short").await.is_err());
    assert_eq!(embedder.id(), "http:e5:3");
}

#[tokio::test]
async fn translator_service_contract() {
    let router = Router::new().route(
        "/translate",
        post(|Json(body): Json<Value>| async move {
            assert_eq!(body["target"], "en");
            match (body["source"].as_str(), body["text"].as_str()) {
                (Some("de"), Some("Wo liegt Berlin?")) => (StatusCode::OK, Json(json!({"translation": "Where is Berlin?"}))),
                _ => (StatusCode::OK, Json(json!({"nothing": true}))),
            }
        }),
    );
    let base = serve(router).await;
    let translator = HttpTranslator::new(format!("{base}/translate"), Duration::from_secs(5));
    assert_eq!(translator.translate("Wo liegt Berlin?", "de").await.unwrap(), "Where is Berlin?");
    assert!(translator.translate("Hola", "es").await.is_err());
}
