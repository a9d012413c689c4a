//! The plan / act / feedback agent.
//!
//! [`Agent`] bundles the shared resources of a run: the LLM gateway, the
//! prompt registry, the tools offered to the model, an optional embedder for
//! experience retrieval, and the settings. The step functions live in the
//! submodules; the compositions are in [`runner`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::embed::Embedder;
use crate::llm::{ChatMessage, LlmError, LlmGateway, LlmResponse, RunUsage, ToolCallRequest, ToolSpec};

pub mod action;
pub mod feedback;
pub mod plan;
pub mod prompts;
pub mod runner;

pub use action::{fit_context, sanitize_query};
pub use feedback::{feedback_prompt, EMPTY_RESULT_MARKER};
pub use plan::{parse_plan, Plan, PlanError};
pub use prompts::{render_prompt, PromptError, PromptKind, PromptPolicy, PromptRegistry, PromptTemplate};
pub use runner::{build_experience_pool, BuildSummary, RunProgress};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolContext {
    /// Language of the question, used for entity label lookups.
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("bad tool arguments: {0}")]
    Arguments(String),
    #[error("tool failed: {0}")]
    Execution(String),
}

/// A function the model may call during the action step.
#[async_trait::async_trait]
pub trait Tool: Send + Sync {
    fn spec(&self) -> ToolSpec;

    /// Runs the tool; the returned text becomes the tool message content.
    async fn call(&self, arguments: &Map<String, Value>, context: &ToolContext) -> Result<String, ToolError>;
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<Arc<dyn Tool>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.iter().map(|t| t.spec().name)).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tool; names must be unique.
    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), ToolError> {
        let name = tool.spec().name;
        if self.get(&name).is_some() {
            return Err(ToolError::Arguments(format!("tool '{name}' registered twice")));
        }
        self.tools.push(tool);
        Ok(())
    }

    pub fn with(mut self, tool: Arc<dyn Tool>) -> Result<Self, ToolError> {
        self.register(tool)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.iter().find(|t| t.spec().name == name)
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|t| t.spec()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSettings {
    /// Tool round trips allowed before a text answer is forced.
    pub max_tool_rounds: usize,
    /// Estimated tokens of context sent per call; older exchanges are dropped past it.
    pub context_token_budget: u64,
    /// Bytes of triplestore response shown to the model in the feedback prompt.
    pub feedback_byte_budget: usize,
    pub top_n_plans: usize,
    pub top_n_queries: usize,
    pub prompt_policy: PromptPolicy,
    /// Retrieve only experience recorded in the question's language.
    pub same_language_only: bool,
    /// Show the agent's own failed queries next to the gold ones.
    pub include_failed_attempts: bool,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            max_tool_rounds: 3,
            context_token_budget: 16_384,
            feedback_byte_budget: 4096,
            top_n_plans: crate::pool::DEFAULT_TOP_N,
            top_n_queries: crate::pool::DEFAULT_TOP_N,
            prompt_policy: PromptPolicy::Native,
            same_language_only: false,
            include_failed_attempts: false,
        }
    }
}

/// Everything one agent run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRunRecord {
    pub question: String,
    pub language: String,
    pub plan: Option<Plan>,
    /// The action conversation, including the feedback exchange if any.
    pub history: Vec<ChatMessage>,
    /// Query produced by the action step, before feedback.
    pub intermediate_query: Option<String>,
    pub final_query: String,
    pub feedback_used: bool,
    pub triplestore_calls: usize,
    pub tool_calls: usize,
    pub usage: RunUsage,
    pub diagnostics: Vec<String>,
}

impl AgentRunRecord {
    pub(crate) fn new(question: &str, language: &str) -> Self {
        Self {
            question: question.to_string(),
            language: language.to_string(),
            plan: None,
            history: Vec::new(),
            intermediate_query: None,
            final_query: String::new(),
            feedback_used: false,
            triplestore_calls: 0,
            tool_calls: 0,
            usage: RunUsage::default(),
            diagnostics: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Clone)]
pub struct Agent {
    gateway: Arc<LlmGateway>,
    prompts: Arc<PromptRegistry>,
    tools: ToolRegistry,
    embedder: Option<Arc<dyn Embedder>>,
    settings: AgentSettings,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("tools", &self.tools)
            .field("embedder", &self.embedder.as_ref().map(|e| e.id()))
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(gateway: Arc<LlmGateway>, tools: ToolRegistry) -> Self {
        Self {
            gateway,
            prompts: Arc::new(PromptRegistry::english()),
            tools,
            embedder: None,
            settings: AgentSettings::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: Arc<PromptRegistry>) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn with_settings(mut self, settings: AgentSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Same agent talking through another gateway, e.g. one per request so
    /// usage totals stay separate.
    pub fn with_gateway(mut self, gateway: Arc<LlmGateway>) -> Self {
        self.gateway = gateway;
        self
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    pub fn settings(&self) -> &AgentSettings {
        &self.settings
    }

    pub fn embedder(&self) -> Option<&Arc<dyn Embedder>> {
        self.embedder.as_ref()
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.tools
    }

    /// Renders the template of `kind` for the question's language under the
    /// configured policy, noting an English fallback in `diagnostics`.
    pub(crate) fn render(
        &self,
        kind: PromptKind,
        language: &str,
        bindings: &BTreeMap<&str, &str>,
        diagnostics: &mut Vec<String>,
    ) -> Result<String, PromptError> {
        let wanted = self.settings.prompt_policy.prompt_language(language);
        let (template, fell_back) = self.prompts.get(wanted, kind)?;
        if fell_back {
            let note = format!("no {kind:?} prompt for language '{wanted}', using English");
            if !diagnostics.contains(&note) {
                diagnostics.push(note);
            }
        }
        render_prompt(template, bindings)
    }

    /// One gateway call, accounted against the run.
    pub(crate) async fn call_llm(
        &self,
        messages: &[ChatMessage],
        with_tools: bool,
        usage: &mut RunUsage,
    ) -> Result<LlmResponse, LlmError> {
        let specs = self.tools.specs();
        let tools = (with_tools && !specs.is_empty()).then_some(specs.as_slice());
        match self.gateway.complete(messages, tools).await {
            Ok(response) => {
                usage.record(&response.usage);
                Ok(response)
            }
            Err(err) => {
                // the gateway counts every call it accepted, so do we
                if !matches!(err, LlmError::InvalidRequest(_)) {
                    usage.calls += 1;
                }
                Err(err)
            }
        }
    }

    /// Executes the tool calls of one assistant message, returning the tool
    /// messages in call order. Failures become tool messages the model can read.
    pub(crate) async fn run_tools(
        &self,
        calls: &[ToolCallRequest],
        language: &str,
        diagnostics: &mut Vec<String>,
    ) -> Vec<ChatMessage> {
        let context = ToolContext {
            language: language.to_string(),
        };
        let mut out = Vec::with_capacity(calls.len());
        for call in calls {
            let content = match self.tools.get(&call.tool_name) {
                None => {
                    diagnostics.push(format!("model called unknown tool '{}'", call.tool_name));
                    format!("error: unknown tool '{}'", call.tool_name)
                }
                Some(tool) => match tool.call(&call.arguments, &context).await {
                    Ok(text) => text,
                    Err(err) => {
                        diagnostics.push(format!("tool '{}': {err}", call.tool_name));
                        format!("error: {err}")
                    }
                },
            };
            out.push(ChatMessage::tool(call.call_id.clone(), content));
        }
        out
    }
}
