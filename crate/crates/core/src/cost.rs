//! Token-based and GPU-time-based price estimates for answering questions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::AgentRunRecord;
use crate::llm::RunUsage;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("{0}")]
    Input(String),
    #[error("cannot read pricing {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed pricing file: {0}")]
    Format(String),
}

/// Averages describing a batch of runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    /// Number of questions.
    pub n_q: u64,
    /// Mean LLM calls per question.
    pub n_c: f64,
    /// Mean input tokens per call.
    pub n_i: f64,
    /// Mean output tokens per call.
    pub n_o: f64,
    /// Some token counts were estimated rather than reported by the backend.
    #[serde(default)]
    pub estimated: bool,
}

impl UsageStats {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [("n_c", self.n_c), ("n_i", self.n_i), ("n_o", self.n_o)] {
            if !v.is_finite() || v < 0.0 {
                return Err(CostError::Input(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenPricing {
    /// USD per input token.
    pub p_i: f64,
    /// USD per output token.
    pub p_o: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuPricing {
    pub tokens_per_second: f64,
    pub price_per_gpu_second: f64,
}

/// Token-based price: `(n_i * p_i + n_o * p_o) * n_c * n_q`.
pub fn tbp(usage: &UsageStats, pricing: &TokenPricing) -> f64 {
    (usage.n_i * pricing.p_i + usage.n_o * pricing.p_o) * usage.n_c * usage.n_q as f64
}

fn gpu_seconds(usage: &UsageStats, rate: f64) -> Result<f64, CostError> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(CostError::Input(format!("token rate must be positive, got {rate}")));
    }
    Ok(usage.n_q as f64 * usage.n_c * usage.n_o / rate)
}

/// GPU-time price: `(n_q * n_c * n_o / r) * p`. Input tokens do not enter.
pub fn gbp(usage: &UsageStats, pricing: &GpuPricing) -> Result<f64, CostError> {
    Ok(gpu_seconds(usage, pricing.tokens_per_second)? * pricing.price_per_gpu_second)
}

pub fn gpu_hours(usage: &UsageStats, tokens_per_second: f64) -> Result<f64, CostError> {
    Ok(gpu_seconds(usage, tokens_per_second)? / 3600.0)
}

/// Means over runs: calls per question and tokens per call.
pub fn aggregate_run_usage(runs: &[RunUsage]) -> Result<UsageStats, CostError> {
    if runs.is_empty() {
        return Err(CostError::Input("empty usage".into()));
    }
    let calls: u64 = runs.iter().map(|u| u.calls).sum();
    let input: u64 = runs.iter().map(|u| u.input_tokens).sum();
    let output: u64 = runs.iter().map(|u| u.output_tokens).sum();
    let per_call = |tokens: u64| if calls == 0 { 0.0 } else { tokens as f64 / calls as f64 };
    Ok(UsageStats {
        n_q: runs.len() as u64,
        n_c: calls as f64 / runs.len() as f64,
        n_i: per_call(input),
        n_o: per_call(output),
        estimated: runs.iter().any(|u| u.estimated),
    })
}

pub fn aggregate_usage(records: &[AgentRunRecord]) -> Result<UsageStats, CostError> {
    let runs: Vec<RunUsage> = records.iter().map(|r| r.usage).collect();
    aggregate_run_usage(&runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PricingKind {
    Token,
    Gpu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pricing {
    Token {
        model: String,
        #[serde(flatten)]
        pricing: TokenPricing,
    },
    Gpu {
        model: String,
        #[serde(flatten)]
        pricing: GpuPricing,
    },
}

impl Pricing {
    pub fn model(&self) -> &str {
        match self {
            Pricing::Token { model, .. } | Pricing::Gpu { model, .. } => model,
        }
    }

    pub fn kind(&self) -> PricingKind {
        match self {
            Pricing::Token { .. } => PricingKind::Token,
            Pricing::Gpu { .. } => PricingKind::Gpu,
        }
    }

    fn validate(&self) -> Result<(), CostError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match self {
            Pricing::Token { model, pricing } if !(ok(pricing.p_i) && ok(pricing.p_o)) => {
                Err(CostError::Format(format!("{model}: token prices must be nonnegative")))
            }
            Pricing::Gpu { model, pricing } if !(ok(pricing.price_per_gpu_second) && pricing.tokens_per_second > 0.0) => {
                Err(CostError::Format(format!("{model}: need a positive token rate and a nonnegative price")))
            }
            _ => Ok(()),
        }
    }

    /// Total price of the usage under this model.
    pub fn cost(&self, usage: &UsageStats) -> Result<f64, CostError> {
        usage.validate()?;
        match self {
            Pricing::Token { pricing, .. } => Ok(tbp(usage, pricing)),
            Pricing::Gpu { pricing, .. } => gbp(usage, pricing),
        }
    }

    /// Price scaled to 100 questions.
    pub fn cost_per_100(&self, usage: &UsageStats) -> Result<f64, CostError> {
        if usage.n_q == 0 {
            return Err(CostError::Input("empty usage".into()));
        }
        Ok(self.cost(usage)? * 100.0 / usage.n_q as f64)
    }
}

/// A pricing file: one entry, or `{"models": [...]}` with several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingTable {
    #[serde(default)]
    pub name: Option<String>,
    pub models: Vec<Pricing>,
}

impl PricingTable {
    pub fn parse(text: &str) -> Result<Self, CostError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CostError::Format(e.to_string()))?;
        let table = if value.get("models").is_some() {
            serde_json::from_value(value).map_err(|e| CostError::Format(e.to_string()))?
        } else {
            let single: Pricing = serde_json::from_value(value).map_err(|e| CostError::Format(e.to_string()))?;
            PricingTable {
                name: None,
                models: vec![single],
            }
        };
        for p in &table.models {
            p.validate()?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// The named model, or the only one when `model` is `None`.
    pub fn select(&self, model: Option<&str>) -> Result<&Pricing, CostError> {
        match model {
            Some(name) => self
                .models
                .iter()
                .find(|p| p.model() == name)
                .ok_or_else(|| CostError::Input(format!("no pricing for model '{name}'"))),
            None if self.models.len() == 1 => Ok(&self.models[0]),
            None => Err(CostError::Input(format!(
                "pricing file lists {} models; pick one of: {}",
                self.models.len(),
                self.models.iter().map(Pricing::model).collect::<Vec<_>>().join(", ")
            ))),
        }
    }
}

/// Rounds half-up to cents for display.
pub fn format_usd(amount: f64) -> String {
    let cents = (amount * 100.0).round();
    format!("USD {:.2}", cents / 100.0)
}
