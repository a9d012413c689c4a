//! Chat-completion access with tool calling.
//!
//! All model traffic goes through [`LlmGateway`], which validates requests,
//! retries transport failures and keeps a running total of calls and tokens.
//! Backends implement [`ChatBackend`]: [`OpenAiBackend`] speaks the
//! OpenAI-compatible wire format, [`ScriptedBackend`] replays canned replies.

mod gateway;
mod openai;
mod schema;
mod scripted;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use gateway::{estimate_tokens, LlmGateway, RetryPolicy, DEFAULT_TEMPERATURE};
pub use openai::{decode_message, decode_response, encode_message, encode_request, OpenAiBackend};
pub use schema::validate_arguments;
pub use scripted::{CapturedCall, PromptExpectation, ScriptEntry, ScriptedBackend, ScriptedReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

/// A tool invocation requested by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub call_id: String,
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

/// One entry of a chat history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCallRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_calls(content: impl Into<String>, calls: Vec<ToolCallRequest>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::plain(Role::Assistant, content)
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    pub fn has_tool_calls(&self) -> bool {
        !self.tool_calls.is_empty()
    }

    /// Checks the role/field pairing rules of the chat protocol.
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.tool_call_id.is_some() != (self.role == Role::Tool) {
            return Err(LlmError::InvalidRequest(format!(
                "tool_call_id must be present exactly on tool messages (role {})",
                self.role.as_str()
            )));
        }
        if !self.tool_calls.is_empty() && self.role != Role::Assistant {
            return Err(LlmError::InvalidRequest(format!(
                "tool_calls on a {} message",
                self.role.as_str()
            )));
        }
        if self.tool_calls.iter().any(|c| c.tool_name.trim().is_empty()) {
            return Err(LlmError::InvalidRequest("tool call with empty name".into()));
        }
        Ok(())
    }
}

/// A tool definition bound to a completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// JSON-schema-like object describing the arguments.
    pub parameters: Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Counts were estimated locally because the backend returned none.
    #[serde(default)]
    pub estimated: bool,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
            estimated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub message: ChatMessage,
    pub usage: TokenUsage,
}

/// Call and token totals, either for one agent run or a whole gateway.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(default)]
    pub estimated: bool,
}

impl RunUsage {
    pub fn record(&mut self, usage: &TokenUsage) {
        self.calls += 1;
        self.input_tokens += usage.input_tokens;
        self.output_tokens += usage.output_tokens;
        self.estimated |= usage.estimated;
    }
}

impl std::ops::Add for RunUsage {
    type Output = RunUsage;

    fn add(self, rhs: RunUsage) -> RunUsage {
        RunUsage {
            calls: self.calls + rhs.calls,
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
            estimated: self.estimated || rhs.estimated,
        }
    }
}

/// What a backend hands back before the gateway fills in accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub message: ChatMessage,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub tools: Option<&'a [ToolSpec]>,
    pub temperature: f32,
}

#[async_trait::async_trait]
pub trait ChatBackend: Send + Sync {
    async fn chat(&self, request: ChatRequest<'_>) -> Result<BackendReply, LlmError>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed backend payload: {0}")]
    Protocol(String),
    #[error("tool protocol violation: {message}")]
    ToolProtocol { message: String, raw: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script exhausted after {consumed} response(s)")]
    ScriptUnderrun { consumed: usize },
    #[error("script mismatch at call {index}: expected {expectation}")]
    ScriptMismatch { index: usize, expectation: String },
    #[error("scripted backend used by more than one caller at once")]
    ConcurrentUse,
}

impl LlmError {
    pub fn transport(message: impl Into<String>) -> Self {
        LlmError::Transport {
            attempts: 1,
            message: message.into(),
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport { .. })
    }
}
