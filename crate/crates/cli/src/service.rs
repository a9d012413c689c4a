//! The challenge-style answering endpoint.
//!
//! `GET /?question=<text>&dataset=<name>[&lang=<code>]` runs the full agent
//! against the dataset's triplestore and pool and answers
//! `{"dataset", "question", "query"}`, plus `diagnostics` when the run had
//! trouble. The request shape lives only in this module.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use kgqa_core::agent::{Agent, PromptPolicy, RunProgress};
use kgqa_core::config::{LlmConfig, RunConfig};
use kgqa_core::llm::LlmGateway;
use kgqa_core::pool::ExperiencePool;
use kgqa_core::Triplestore;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

/// Makes the gateway for one request. Scripted backends are stateful, so
/// they are rebuilt per request; HTTP backends share one client.
pub type GatewayFactory = Arc<dyn Fn() -> anyhow::Result<Arc<LlmGateway>> + Send + Sync>;

pub struct DatasetRuntime {
    pub store: Arc<dyn Triplestore>,
    pub pool: Option<Arc<ExperiencePool>>,
}

#[derive(Clone)]
pub struct ServiceState {
    agent: Agent,
    gateways: GatewayFactory,
    datasets: Arc<BTreeMap<String, DatasetRuntime>>,
    budget: Duration,
    permits: Arc<Semaphore>,
}

impl ServiceState {
    pub fn new(
        agent: Agent,
        gateways: GatewayFactory,
        datasets: BTreeMap<String, DatasetRuntime>,
        budget: Duration,
        parallelism: usize,
    ) -> Self {
        Self {
            agent,
            gateways,
            datasets: Arc::new(datasets),
            budget,
            permits: Arc::new(Semaphore::new(parallelism.max(1))),
        }
    }

    /// Loads every dataset profile (triplestore and pool) once, up front.
    pub fn from_config(config: &RunConfig, policy: PromptPolicy) -> anyhow::Result<Self> {
        let mut settings = config.agent.clone();
        settings.prompt_policy = policy;
        let agent = config.agent()?.with_settings(settings);

        let gateways: GatewayFactory = match &config.llm {
            LlmConfig::Openai { temperature, .. } => {
                let backend = config.backend()?;
                let temperature = *temperature;
                Arc::new(move || Ok(Arc::new(LlmGateway::new(backend.clone()).with_temperature(temperature))))
            }
            LlmConfig::Scripted { .. } => {
                let config = config.clone();
                Arc::new(move || Ok(config.gateway()?))
            }
        };

        let mut datasets = BTreeMap::new();
        for name in config.datasets.keys() {
            let store = config.triplestore(name).with_context(|| format!("dataset '{name}'"))?;
            let pool = config.pool(name).with_context(|| format!("dataset '{name}'"))?.map(Arc::new);
            datasets.insert(name.clone(), DatasetRuntime { store, pool });
        }
        Ok(Self::new(
            agent,
            gateways,
            datasets,
            Duration::from_secs(config.timeouts.request_secs),
            config.parallelism,
        ))
    }
}

#[derive(Debug, Deserialize)]
struct AnswerParams {
    question: Option<String>,
    dataset: Option<String>,
    lang: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerBody {
    pub dataset: String,
    pub question: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

pub fn router(state: ServiceState) -> Router {
    Router::new().route("/", get(answer)).with_state(state)
}

async fn answer(State(state): State<ServiceState>, params: Result<Query<AnswerParams>, QueryRejection>) -> Response {
    let params = match params {
        Ok(Query(p)) => p,
        Err(rejection) => return error(StatusCode::UNPROCESSABLE_ENTITY, rejection.body_text()),
    };
    let Some(question) = params.question.filter(|q| !q.trim().is_empty()) else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "missing query parameter 'question'".into());
    };
    let Some(dataset) = params.dataset.filter(|d| !d.trim().is_empty()) else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "missing query parameter 'dataset'".into());
    };
    let Some(runtime) = state.datasets.get(&dataset) else {
        return error(StatusCode::NOT_FOUND, format!("unknown dataset '{dataset}'"));
    };
    let language = params.lang.unwrap_or_else(|| "en".into());

    let Ok(_permit) = state.permits.acquire().await else {
        return error(StatusCode::INTERNAL_SERVER_ERROR, "service is shutting down".into());
    };
    let gateway = match (state.gateways)() {
        Ok(g) => g,
        Err(err) => {
            tracing::error!(error = %err, "cannot set up the LLM backend");
            return error(StatusCode::INTERNAL_SERVER_ERROR, format!("LLM backend unavailable: {err:#}"));
        }
    };
    let agent = state.agent.clone().with_gateway(gateway);
    let progress = RunProgress::new();
    let run = agent.run_full_tracked(&question, &language, runtime.pool.as_deref(), runtime.store.as_ref(), &progress);

    let (query, diagnostics) = match tokio::time::timeout(state.budget, run).await {
        Ok(record) => (record.final_query, record.diagnostics),
        Err(_) => (
            progress.best_query().unwrap_or_default(),
            vec![format!(
                "request budget of {:.1} s exhausted; returning the best query so far",
                state.budget.as_secs_f64()
            )],
        ),
    };
    tracing::info!(%dataset, empty = query.is_empty(), "answered");
    Json(AnswerBody {
        dataset,
        question,
        query,
        diagnostics,
    })
    .into_response()
}
