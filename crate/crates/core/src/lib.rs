//! Multilingual text-to-SPARQL agent engine.
//!
//! The agent decomposes a natural-language question into a step-by-step plan,
//! executes each step against a chat-completion model that may call the entity
//! linking tool, runs the draft query once against a triplestore and refines it
//! from the response. An experience pool built offline from a training split
//! supplies similar plans and question/query pairs as in-context examples.
//!
//! Module map:
//! - [`llm`]: chat messages, tool calling, gateway with usage accounting,
//!   OpenAI-compatible HTTP backend and a scripted backend for tests.
//! - [`embed`]: text embeddings and cosine similarity.
//! - [`pool`]: the experience pool, retrieval and JSON-lines persistence.
//! - [`nel`]: entity and relation linking tool.
//! - [`agent`]: prompts, plan / action / feedback steps and the runners.
//! - [`sparql`]: query classification, execution and answer-set parsing.
//! - [`eval`]: QALD loading, F1 scoring, benchmarks and translation.
//! - [`cost`]: token- and GPU-based cost models.
//! - [`config`]: run configuration and backend wiring.

pub mod agent;
pub mod config;
pub mod cost;
pub mod embed;
pub mod eval;
pub mod llm;
pub mod nel;
pub mod pool;
pub mod sparql;

pub use agent::{Agent, AgentRunRecord, AgentSettings, Plan};
pub use llm::{ChatMessage, LlmGateway, Role, RunUsage};
pub use pool::{ExperiencePool, ExperienceRecord};
pub use sparql::{AnswerSet, Triplestore};
