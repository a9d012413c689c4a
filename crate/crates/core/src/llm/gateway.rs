use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::schema::validate_arguments;
use super::{ChatBackend, ChatMessage, ChatRequest, LlmError, LlmResponse, Role, RunUsage, TokenUsage, ToolSpec};

pub const DEFAULT_TEMPERATURE: f32 = 0.0;

/// Exponential backoff applied to transport failures only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
        }
    }
}

/// Rough token count for backends that do not report usage.
pub fn estimate_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as f64;
    (words * 1.3).ceil() as u64
}

fn estimate_input(messages: &[ChatMessage]) -> u64 {
    messages
        .iter()
        .map(|m| {
            let args: u64 = m
                .tool_calls
                .iter()
                .map(|c| estimate_tokens(&serde_json::Value::Object(c.arguments.clone()).to_string()))
                .sum();
            estimate_tokens(&m.content) + args
        })
        .sum()
}

pub struct LlmGateway {
    backend: Arc<dyn ChatBackend>,
    temperature: f32,
    retry: RetryPolicy,
    usage: Mutex<RunUsage>,
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("temperature", &self.temperature)
            .field("retry", &self.retry)
            .field("usage", &self.usage_snapshot())
            .finish()
    }
}

impl LlmGateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            temperature: DEFAULT_TEMPERATURE,
            retry: RetryPolicy::default(),
            usage: Mutex::new(RunUsage::default()),
        }
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn temperature(&self) -> f32 {
        self.temperature
    }

    /// Sends one completion request. Every accepted invocation counts as a call.
    pub async fn complete(
        &self,
        messages: &[ChatMessage],
        tools: Option<&[ToolSpec]>,
    ) -> Result<LlmResponse, LlmError> {
        check_request(messages, tools)?;

        let request = ChatRequest {
            messages,
            tools,
            temperature: self.temperature,
        };
        let mut attempt = 0;
        let outcome = loop {
            attempt += 1;
            match self.backend.chat(request).await {
                Err(err) if err.is_retryable() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.initial_backoff * 2u32.saturating_pow(attempt - 1);
                    tracing::warn!(attempt, ?delay, error = %err, "retrying chat completion");
                    if !delay.is_zero() {
                        tokio::time::sleep(delay).await;
                    }
                }
                Err(LlmError::Transport { message, .. }) => {
                    break Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                other => break other,
            }
        };

        let reply = match outcome {
            Ok(reply) => reply,
            Err(err) => {
                self.usage.lock().expect("usage lock").calls += 1;
                return Err(err);
            }
        };

        let checked = check_reply(&reply.message, tools);
        let usage = reply.usage.unwrap_or_else(|| TokenUsage {
            input_tokens: estimate_input(messages),
            output_tokens: estimate_input(std::slice::from_ref(&reply.message)),
            estimated: true,
        });
        {
            let mut total = self.usage.lock().expect("usage lock");
            match checked {
                Ok(()) => total.record(&usage),
                Err(_) => total.calls += 1,
            }
        }
        checked?;

        Ok(LlmResponse {
            message: reply.message,
            usage,
        })
    }

    pub fn usage_snapshot(&self) -> RunUsage {
        *self.usage.lock().expect("usage lock")
    }

    pub fn reset_usage(&self) {
        *self.usage.lock().expect("usage lock") = RunUsage::default();
    }
}

fn check_request(messages: &[ChatMessage], tools: Option<&[ToolSpec]>) -> Result<(), LlmError> {
    match messages.first() {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::System => {
            return Err(LlmError::InvalidRequest("first message must be the system prompt".into()))
        }
        _ => {}
    }
    for m in messages {
        m.validate()?;
    }
    if let Some(tools) = tools {
        let mut seen = HashSet::new();
        for t in tools {
            if t.name.trim().is_empty() || !seen.insert(t.name.as_str()) {
                return Err(LlmError::InvalidRequest(format!(
                    "tool names must be nonempty and unique (got {:?})",
                    t.name
                )));
            }
        }
    }
    Ok(())
}

fn check_reply(message: &ChatMessage, tools: Option<&[ToolSpec]>) -> Result<(), LlmError> {
    if message.role != Role::Assistant {
        return Err(LlmError::Protocol(format!(
            "expected an assistant reply, got role {}",
            message.role.as_str()
        )));
    }
    message.validate().map_err(|e| LlmError::Protocol(e.to_string()))?;
    for call in &message.tool_calls {
        let raw = serde_json::Value::Object(call.arguments.clone()).to_string();
        let spec = tools
            .unwrap_or_default()
            .iter()
            .find(|t| t.name == call.tool_name)
            .ok_or_else(|| LlmError::ToolProtocol {
                message: format!("call to unknown tool '{}'", call.tool_name),
                raw: raw.clone(),
            })?;
        validate_arguments(&call.arguments, &spec.parameters).map_err(|message| {
            LlmError::ToolProtocol {
                message: format!("invalid arguments for '{}': {message}", call.tool_name),
                raw,
            }
        })?;
    }
    Ok(())
}
