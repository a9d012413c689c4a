use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendReply, ChatBackend, ChatMessage, ChatRequest, LlmError, TokenUsage, ToolCallRequest};

/// Assertion a scripted reply makes about the prompt it answers.
#[derive(Clone)]
pub enum PromptExpectation {
    /// Some message of the request contains this text.
    Contains(String),
    Predicate {
        description: String,
        check: Arc<dyn Fn(&[ChatMessage]) -> bool + Send + Sync>,
    },
}

impl std::fmt::Debug for PromptExpectation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.describe())
    }
}

impl PromptExpectation {
    fn describe(&self) -> String {
        match self {
            PromptExpectation::Contains(text) => format!("prompt containing {text:?}"),
            PromptExpectation::Predicate { description, .. } => description.clone(),
        }
    }

    fn holds(&self, messages: &[ChatMessage]) -> bool {
        match self {
            PromptExpectation::Contains(text) => messages.iter().any(|m| m.content.contains(text.as_str())),
            PromptExpectation::Predicate { check, .. } => check(messages),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedReply {
    pub message: ChatMessage,
    pub usage: Option<TokenUsage>,
    pub expect: Option<PromptExpectation>,
}

impl ScriptedReply {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            message: ChatMessage::assistant(content),
            usage: None,
            expect: None,
        }
    }

    /// A reply requesting a single tool call. Call ids are filled in on replay.
    pub fn tool_call(tool_name: impl Into<String>, arguments: Value) -> Self {
        Self::tool_calls(vec![(tool_name.into(), arguments)])
    }

    pub fn tool_calls(calls: Vec<(String, Value)>) -> Self {
        let calls = calls
            .into_iter()
            .map(|(tool_name, arguments)| ToolCallRequest {
                call_id: String::new(),
                tool_name,
                arguments: match arguments {
                    Value::Object(map) => map,
                    other => panic!("tool arguments must be a JSON object, got {other}"),
                },
            })
            .collect();
        Self {
            message: ChatMessage::assistant_tool_calls("", calls),
            usage: None,
            expect: None,
        }
    }

    pub fn with_usage(mut self, input_tokens: u64, output_tokens: u64) -> Self {
        self.usage = Some(TokenUsage::new(input_tokens, output_tokens));
        self
    }

    pub fn expect_contains(mut self, text: impl Into<String>) -> Self {
        self.expect = Some(PromptExpectation::Contains(text.into()));
        self
    }

    pub fn expect_that(
        mut self,
        description: impl Into<String>,
        check: impl Fn(&[ChatMessage]) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.expect = Some(PromptExpectation::Predicate {
            description: description.into(),
            check: Arc::new(check),
        });
        self
    }
}

/// Serialized form of a scripted reply, used by script files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ScriptToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_contains: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

impl From<ScriptEntry> for ScriptedReply {
    fn from(entry: ScriptEntry) -> Self {
        let mut reply = if entry.tool_calls.is_empty() {
            ScriptedReply::text(entry.content.unwrap_or_default())
        } else {
            let mut r = ScriptedReply::tool_calls(
                entry
                    .tool_calls
                    .into_iter()
                    .map(|c| {
                        let args = if c.arguments.is_null() { Value::Object(Default::default()) } else { c.arguments };
                        (c.name, args)
                    })
                    .collect(),
            );
            r.message.content = entry.content.unwrap_or_default();
            r
        };
        reply.usage = entry.usage;
        reply.expect = entry.expect_contains.map(PromptExpectation::Contains);
        reply
    }
}

/// One request seen by the scripted backend.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedCall {
    pub messages: Vec<ChatMessage>,
    pub tool_names: Vec<String>,
}

/// Replays canned replies in FIFO order. Single consumer only.
#[derive(Debug)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<ScriptedReply>>,
    consumed: AtomicUsize,
    busy: AtomicBool,
    captured: Mutex<Vec<CapturedCall>>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<ScriptedReply>) -> Result<Self, LlmError> {
        if replies.is_empty() {
            return Err(LlmError::InvalidRequest("a script needs at least one response".into()));
        }
        Ok(Self {
            replies: Mutex::new(replies.into()),
            consumed: AtomicUsize::new(0),
            busy: AtomicBool::new(false),
            captured: Mutex::new(Vec::new()),
        })
    }

    pub fn from_entries(entries: Vec<ScriptEntry>) -> Result<Self, LlmError> {
        Self::new(entries.into_iter().map(ScriptedReply::from).collect())
    }

    /// Loads a JSON array of [`ScriptEntry`] values.
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| LlmError::InvalidRequest(format!("bad script: {e}")))?;
        Self::from_entries(entries)
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("script lock").len()
    }

    pub fn consumed(&self) -> usize {
        self.consumed.load(Ordering::SeqCst)
    }

    pub fn captured(&self) -> Vec<CapturedCall> {
        self.captured.lock().expect("capture lock").clone()
    }

    fn next_reply(&self, request: ChatRequest<'_>) -> Result<BackendReply, LlmError> {
        self.captured.lock().expect("capture lock").push(CapturedCall {
            messages: request.messages.to_vec(),
            tool_names: request.tools.unwrap_or_default().iter().map(|t| t.name.clone()).collect(),
        });
        let reply = self
            .replies
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(LlmError::ScriptUnderrun {
                consumed: self.consumed(),
            })?;
        let index = self.consumed.fetch_add(1, Ordering::SeqCst) + 1;
        if let Some(expect) = &reply.expect {
            if !expect.holds(request.messages) {
                return Err(LlmError::ScriptMismatch {
                    index,
                    expectation: expect.describe(),
                });
            }
        }
        let mut message = reply.message;
        for (k, call) in message.tool_calls.iter_mut().enumerate() {
            if call.call_id.is_empty() {
                call.call_id = format!("call_{index}_{k}");
            }
        }
        Ok(BackendReply {
            message,
            usage: reply.usage,
        })
    }
}

#[async_trait::async_trait]
impl ChatBackend for ScriptedBackend {
    async fn chat(&self, request: ChatRequest<'_>) -> Result<BackendReply, LlmError> {
        if self.busy.swap(true, Ordering::SeqCst) {
            return Err(LlmError::ConcurrentUse);
        }
        let result = self.next_reply(request);
        self.busy.store(false, Ordering::SeqCst);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(messages: &[ChatMessage]) -> ChatRequest<'_> {
        ChatRequest {
            messages,
            tools: None,
            temperature: 0.0,
        }
    }

    #[tokio::test]
    async fn replays_in_fifo_order() {
        let backend = ScriptedBackend::new(vec![ScriptedReply::text("A"), ScriptedReply::text("B")]).unwrap();
        let msgs = [ChatMessage::system("s")];
        assert_eq!(backend.chat(request(&msgs)).await.unwrap().message.content, "A");
        assert_eq!(backend.chat(request(&msgs)).await.unwrap().message.content, "B");
    }

    #[tokio::test]
    async fn exhaustion_is_an_underrun() {
        let backend = ScriptedBackend::new(vec![
            ScriptedReply::text("1"),
            ScriptedReply::text("2"),
            ScriptedReply::text("3"),
        ])
        .unwrap();
        let msgs = [ChatMessage::system("s")];
        for _ in 0..3 {
            backend.chat(request(&msgs)).await.unwrap();
        }
        assert_eq!(backend.remaining(), 0);
        assert_eq!(
            backend.chat(request(&msgs)).await.unwrap_err(),
            LlmError::ScriptUnderrun { consumed: 3 }
        );
    }

    #[test]
    fn empty_script_is_rejected() {
        assert!(ScriptedBackend::new(vec![]).is_err());
    }

    #[tokio::test]
    async fn expectation_passes_on_matching_prompt() {
        let backend =
            ScriptedBackend::new(vec![ScriptedReply::text("ok").expect_contains("capital of Germany")]).unwrap();
        let msgs = [ChatMessage::system("s"), ChatMessage::user("What is the capital of Germany?")];
        assert!(backend.chat(request(&msgs)).await.is_ok());
    }

    #[tokio::test]
    async fn mismatch_names_the_call_index() {
        let backend = ScriptedBackend::new(vec![
            ScriptedReply::text("first"),
            ScriptedReply::text("second").expect_contains("FEEDBACK"),
        ])
        .unwrap();
        let msgs = [ChatMessage::system("nothing relevant")];
        backend.chat(request(&msgs)).await.unwrap();
        match backend.chat(request(&msgs)).await.unwrap_err() {
            LlmError::ScriptMismatch { index, expectation } => {
                assert_eq!(index, 2);
                assert!(expectation.contains("FEEDBACK"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn concurrent_use_is_detected() {
        let backend = ScriptedBackend::new(vec![ScriptedReply::text("x")]).unwrap();
        backend.busy.store(true, Ordering::SeqCst);
        let msgs = [ChatMessage::system("s")];
        assert_eq!(backend.chat(request(&msgs)).await.unwrap_err(), LlmError::ConcurrentUse);
    }

    #[tokio::test]
    async fn same_script_same_responses() {
        let make = || {
            ScriptedBackend::new(vec![
                ScriptedReply::tool_call("wikidata_el", serde_json::json!({"label": "Berlin"})).with_usage(3, 4),
                ScriptedReply::text("SELECT ?x WHERE { ?x ?p ?o }"),
            ])
            .unwrap()
        };
        let msgs = [ChatMessage::system("s")];
        let (a, b) = (make(), make());
        for _ in 0..2 {
            assert_eq!(a.chat(request(&msgs)).await.unwrap(), b.chat(request(&msgs)).await.unwrap());
        }
    }

    #[test]
    fn script_file_entries_parse() {
        let backend = ScriptedBackend::from_json(
            r#"[{"content": "1. a"},
                {"tool_calls": [{"name": "wikidata_el", "arguments": {"entities": ["Berlin"]}}],
                 "usage": {"input_tokens": 5, "output_tokens": 6}},
                {"content": "SELECT 1", "expect_contains": "Berlin"}]"#,
        )
        .unwrap();
        assert_eq!(backend.remaining(), 3);
    }
}
