use std::time::Duration;

use super::{QueryForm, RawResponse, SparqlError, SparqlQuery, Triplestore};

pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(60);
const RESULTS_JSON: &str = "application/sparql-results+json";
// longer queries go in a POST body to stay under URL length limits
const MAX_GET_QUERY_BYTES: usize = 2000;

/// SPARQL 1.1 protocol client.
#[derive(Debug, Clone)]
pub struct HttpTriplestore {
    client: reqwest::Client,
    endpoint: String,
    timeout: Duration,
}

impl HttpTriplestore {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, SparqlError> {
        let client = reqwest::Client::builder()
            .user_agent(concat!("kgqa/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| SparqlError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            timeout,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

#[async_trait::async_trait]
impl Triplestore for HttpTriplestore {
    async fn execute(&self, query: &SparqlQuery) -> Result<RawResponse, SparqlError> {
        if query.text.trim().is_empty() {
            return Err(SparqlError::EmptyQuery);
        }
        let request = if query.text.len() <= MAX_GET_QUERY_BYTES {
            self.client.get(&self.endpoint).query(&[("query", query.text.as_str())])
        } else {
            self.client.post(&self.endpoint).form(&[("query", query.text.as_str())])
        };
        let request = request.header(reqwest::header::ACCEPT, RESULTS_JSON).timeout(self.timeout);

        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                SparqlError::Timeout(self.timeout)
            } else {
                SparqlError::Transport(e.to_string())
            }
        };
        let response = request.send().await.map_err(map_err)?;
        let status = response.status().as_u16();
        let body = response.text().await.map_err(map_err)?;
        if !(200..300).contains(&status) {
            return Err(SparqlError::Status { status, body });
        }
        if matches!(query.form, QueryForm::Select | QueryForm::Ask) {
            serde_json::from_str::<serde_json::Value>(&body)
                .map_err(|e| SparqlError::Protocol(format!("expected results JSON: {e}")))?;
        }
        Ok(RawResponse { status, body })
    }
}
