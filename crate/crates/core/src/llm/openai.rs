//! OpenAI-compatible `/chat/completions` wire format.

use std::time::Duration;

use serde_json::{json, Map, Value};

use super::{BackendReply, ChatBackend, ChatMessage, ChatRequest, LlmError, Role, TokenUsage, ToolCallRequest, ToolSpec};

#[derive(Debug, Clone)]
pub struct OpenAiBackend {
    client: reqwest::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl OpenAiBackend {
    /// `endpoint` is either the API base (`https://host/v1`) or the full
    /// chat-completions URL.
    pub fn new(endpoint: &str, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let endpoint = endpoint.trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            url,
            model: model.into(),
            api_key,
        })
    }
}

#[async_trait::async_trait]
impl ChatBackend for OpenAiBackend {
    async fn chat(&self, request: ChatRequest<'_>) -> Result<BackendReply, LlmError> {
        let body = encode_request(&self.model, request.temperature, request.messages, request.tools);
        let mut http = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let response = http.send().await.map_err(|e| LlmError::transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().await.map_err(|e| LlmError::transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LlmError::transport(format!("HTTP {status}: {text}")));
        }
        if !status.is_success() {
            return Err(LlmError::Protocol(format!("HTTP {status}: {text}")));
        }
        let payload: Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Protocol(format!("response is not JSON: {e}")))?;
        decode_response(&payload)
    }
}

pub fn encode_message(message: &ChatMessage) -> Value {
    let mut obj = Map::new();
    obj.insert("role".into(), json!(message.role.as_str()));
    if message.role == Role::Assistant && message.has_tool_calls() && message.content.is_empty() {
        obj.insert("content".into(), Value::Null);
    } else {
        obj.insert("content".into(), json!(message.content));
    }
    if message.has_tool_calls() {
        let calls: Vec<Value> = message
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.call_id,
                    "type": "function",
                    "function": {
                        "name": c.tool_name,
                        "arguments": Value::Object(c.arguments.clone()).to_string(),
                    }
                })
            })
            .collect();
        obj.insert("tool_calls".into(), Value::Array(calls));
    }
    if let Some(id) = &message.tool_call_id {
        obj.insert("tool_call_id".into(), json!(id));
    }
    Value::Object(obj)
}

pub fn encode_request(model: &str, temperature: f32, messages: &[ChatMessage], tools: Option<&[ToolSpec]>) -> Value {
    let mut body = json!({
        "model": model,
        "temperature": temperature,
        "messages": messages.iter().map(encode_message).collect::<Vec<_>>(),
    });
    if let Some(tools) = tools.filter(|t| !t.is_empty()) {
        body["tools"] = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters,
                    }
                })
            })
            .collect();
    }
    body
}

fn decode_tool_call(value: &Value) -> Result<ToolCallRequest, LlmError> {
    let id = value
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::Protocol(format!("tool call without id: {value}")))?;
    let function = value
        .get("function")
        .ok_or_else(|| LlmError::Protocol(format!("tool call without function: {value}")))?;
    let name = function
        .get("name")
        .and_then(Value::as_str)
        .filter(|n| !n.trim().is_empty())
        .ok_or_else(|| LlmError::Protocol(format!("tool call without name: {value}")))?;
    let arguments = match function.get("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::String(raw)) if raw.trim().is_empty() => Map::new(),
        Some(Value::String(raw)) => match serde_json::from_str::<Value>(raw) {
            Ok(Value::Object(map)) => map,
            _ => {
                return Err(LlmError::ToolProtocol {
                    message: format!("arguments for '{name}' are not a JSON object"),
                    raw: raw.clone(),
                })
            }
        },
        Some(Value::Object(map)) => map.clone(),
        Some(other) => {
            return Err(LlmError::ToolProtocol {
                message: format!("arguments for '{name}' are not a JSON object"),
                raw: other.to_string(),
            })
        }
    };
    Ok(ToolCallRequest {
        call_id: id.to_string(),
        tool_name: name.to_string(),
        arguments,
    })
}

pub fn decode_message(value: &Value) -> Result<ChatMessage, LlmError> {
    let role: Role = value
        .get("role")
        .cloned()
        .and_then(|r| serde_json::from_value(r).ok())
        .ok_or_else(|| LlmError::Protocol(format!("message without a known role: {value}")))?;
    let content = match value.get("content") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(LlmError::Protocol(format!("unsupported content: {other}"))),
    };
    let tool_calls = match value.get("tool_calls") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(calls)) => calls.iter().map(decode_tool_call).collect::<Result<_, _>>()?,
        Some(other) => return Err(LlmError::Protocol(format!("tool_calls is not an array: {other}"))),
    };
    let tool_call_id = value.get("tool_call_id").and_then(Value::as_str).map(str::to_string);
    Ok(ChatMessage {
        role,
        content,
        tool_calls,
        tool_call_id,
    })
}

pub fn decode_response(payload: &Value) -> Result<BackendReply, LlmError> {
    let message = payload
        .pointer("/choices/0/message")
        .ok_or_else(|| LlmError::Protocol("response has no choices[0].message".into()))?;
    let message = decode_message(message)?;
    let usage = payload.get("usage").and_then(|u| {
        Some(TokenUsage::new(
            u.get("prompt_tokens")?.as_u64()?,
            u.get("completion_tokens")?.as_u64()?,
        ))
    });
    Ok(BackendReply { message, usage })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tool_call_message_survives_encode_decode() {
        let call = ToolCallRequest {
            call_id: "call_1".into(),
            tool_name: "wikidata_el".into(),
            arguments: json!({"label": "Angela Merkel"}).as_object().unwrap().clone(),
        };
        let original = ChatMessage::assistant_tool_calls("", vec![call]);
        let wire = encode_message(&original);
        assert_eq!(wire["content"], Value::Null);
        assert_eq!(wire["tool_calls"][0]["function"]["arguments"], json!(r#"{"label":"Angela Merkel"}"#));
        let decoded = decode_message(&wire).unwrap();
        assert_eq!(decoded, original);
        assert_eq!(encode_message(&decoded), wire);
    }

    #[test]
    fn decodes_a_typical_completion() {
        let payload = json!({
            "id": "chatcmpl-1",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": "1. Link Berlin"},
                "finish_reason": "stop"
            }],
            "usage": {"prompt_tokens": 144, "completion_tokens": 199, "total_tokens": 343}
        });
        let reply = decode_response(&payload).unwrap();
        assert_eq!(reply.message.content, "1. Link Berlin");
        assert_eq!(reply.usage, Some(TokenUsage::new(144, 199)));
    }

    #[test]
    fn bad_arguments_are_a_tool_protocol_error() {
        let payload = json!({"choices": [{"message": {
            "role": "assistant",
            "content": null,
            "tool_calls": [{"id": "c", "type": "function",
                            "function": {"name": "wikidata_el", "arguments": "{not json"}}]
        }}]});
        match decode_response(&payload).unwrap_err() {
            LlmError::ToolProtocol { raw, .. } => assert_eq!(raw, "{not json"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_choices_is_a_protocol_error() {
        assert!(matches!(decode_response(&json!({"error": "x"})), Err(LlmError::Protocol(_))));
    }

    #[test]
    fn request_carries_tools_and_temperature() {
        let tools = [ToolSpec {
            name: "wikidata_el".into(),
            description: "d".into(),
            parameters: json!({"type": "object"}),
        }];
        let body = encode_request("gpt-4o", 0.0, &[ChatMessage::system("s")], Some(&tools));
        assert_eq!(body["temperature"], json!(0.0));
        assert_eq!(body["tools"][0]["function"]["name"], json!("wikidata_el"));
        let bare = encode_request("m", 0.0, &[ChatMessage::system("s")], None);
        assert!(bare.get("tools").is_none());
    }
}
