//! Run configuration: which backends to talk to and how the agent behaves.
//!
//! Loaded from JSON. Relative paths are resolved against the directory of
//! the configuration file, and every referenced file must exist. Secrets
//! can stay out of the file: the LLM API key is read from the environment
//! variable named by `llm.api_key_env` when `llm.api_key` is absent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentSettings, PromptRegistry, ToolRegistry};
use crate::embed::{Embedder, HashEmbedder, HttpEmbedder};
use crate::eval::{HttpTranslator, IdentityTranslator, MapTranslator, Translator};
use crate::llm::{ChatBackend, LlmGateway, OpenAiBackend, ScriptedBackend, DEFAULT_TEMPERATURE};
use crate::nel::{
    EntityLookup, FalconRelationLookup, Linker, MockLookup, NelTool, RelationLookup, WikidataEntityLookup,
    DEFAULT_CACHE_CAPACITY, WIKIDATA_API,
};
use crate::pool::ExperiencePool;
use crate::sparql::{HttpTriplestore, MockTriplestore, MockTriplestoreFile, Triplestore};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed configuration: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot build {component}: {message}")]
    Backend { component: &'static str, message: String },
}

fn backend_err(component: &'static str) -> impl Fn(String) -> ConfigError {
    move |message| ConfigError::Backend { component, message }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum LlmConfig {
    /// Any OpenAI-compatible chat completions endpoint.
    Openai {
        endpoint: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key: Option<String>,
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_llm_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_temperature")]
        temperature: f32,
    },
    /// Replays a JSON script of replies, for tests and demos.
    Scripted { script: PathBuf },
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

fn default_llm_timeout() -> u64 {
    120
}

fn default_temperature() -> f32 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum EmbeddingConfig {
    Hash {
        dimension: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        url: String,
        model: String,
        dimension: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prefix: Option<String>,
        #[serde(default = "default_service_timeout")]
        timeout_secs: u64,
    },
}

fn default_service_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum LookupConfig {
    Wikidata {
        #[serde(default = "default_wikidata")]
        endpoint: String,
    },
    Falcon {
        endpoint: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relations_field: Option<String>,
    },
    /// Fixed label to URI table.
    Mock { table: BTreeMap<String, String> },
}

fn default_wikidata() -> String {
    WIKIDATA_API.into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelConfig {
    pub entities: LookupConfig,
    pub relations: LookupConfig,
    #[serde(default = "default_cache")]
    pub cache_capacity: usize,
    #[serde(default = "default_service_timeout")]
    pub timeout_secs: u64,
}

fn default_cache() -> usize {
    DEFAULT_CACHE_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum TriplestoreConfig {
    Http { endpoint: String },
    /// A [`MockTriplestoreFile`] on disk.
    Mock { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub triplestore: TriplestoreConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum TranslatorConfig {
    Identity,
    Map { table: BTreeMap<String, String> },
    Http {
        url: String,
        #[serde(default = "default_service_timeout")]
        timeout_secs: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timeouts {
    pub query_secs: u64,
    /// End-to-end budget of one service request.
    pub request_secs: u64,
}

impl Default for Timeouts {
    fn default() -> Self {
        Self {
            query_secs: 60,
            request_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub llm: LlmConfig,
    pub embedding: EmbeddingConfig,
    pub nel: NelConfig,
    /// Triplestore and pool per dataset name.
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetProfile>,
    #[serde(default)]
    pub agent: AgentSettings,
    /// Directory with `<language>/<kind>.txt` prompt overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translator: Option<TranslatorConfig>,
    #[serde(default)]
    pub timeouts: Timeouts,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_parallelism() -> usize {
    1
}

impl RunConfig {
    /// Parses a configuration, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Format(e.to_string()))?;
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&read(path)?, base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let LlmConfig::Scripted { script } = &mut self.llm {
            fix(script);
        }
        for profile in self.datasets.values_mut() {
            if let TriplestoreConfig::Mock { file } = &mut profile.triplestore {
                fix(file);
            }
            if let Some(pool) = &mut profile.pool {
                fix(pool);
            }
        }
        if let Some(dir) = &mut self.prompt_dir {
            fix(dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{what} {} does not exist", p.display())))
            }
        };
        if let LlmConfig::Scripted { script } = &self.llm {
            must_exist("LLM script", script)?;
        }
        for (name, profile) in &self.datasets {
            if name.trim().is_empty() {
                return Err(ConfigError::Invalid("dataset names must be nonempty".into()));
            }
            if let TriplestoreConfig::Mock { file } = &profile.triplestore {
                must_exist(&format!("mock triplestore of dataset '{name}'"), file)?;
            }
            if let Some(pool) = &profile.pool {
                must_exist(&format!("pool of dataset '{name}'"), pool)?;
            }
        }
        if let Some(dir) = &self.prompt_dir {
            must_exist("prompt directory", dir)?;
        }
        let dimension = match self.embedding {
            EmbeddingConfig::Hash { dimension, .. } | EmbeddingConfig::Http { dimension, .. } => dimension,
        };
        if dimension == 0 {
            return Err(ConfigError::Invalid("embedding dimension must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    pub fn backend(&self) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        match &self.llm {
            LlmConfig::Openai {
                endpoint,
                model,
                api_key,
                api_key_env,
                timeout_secs,
                ..
            } => {
                let key = api_key.clone().or_else(|| std::env::var(api_key_env).ok()).filter(|k| !k.is_empty());
                let backend = OpenAiBackend::new(endpoint, model.clone(), key, Duration::from_secs(*timeout_secs))
                    .map_err(|e| backend_err("LLM backend")(e.to_string()))?;
                Ok(Arc::new(backend))
            }
            LlmConfig::Scripted { script } => {
                let backend =
                    ScriptedBackend::from_json(&read(script)?).map_err(|e| backend_err("LLM script")(e.to_string()))?;
                Ok(Arc::new(backend))
            }
        }
    }

    pub fn gateway(&self) -> Result<Arc<LlmGateway>, ConfigError> {
        let mut gateway = LlmGateway::new(self.backend()?);
        if let LlmConfig::Openai { temperature, .. } = &self.llm {
            gateway = gateway.with_temperature(*temperature);
        }
        Ok(Arc::new(gateway))
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        let err = backend_err("embedder");
        Ok(match &self.embedding {
            EmbeddingConfig::Hash { dimension, seed } => {
                Arc::new(HashEmbedder::new(*dimension, *seed).map_err(|e| err(e.to_string()))?)
            }
            EmbeddingConfig::Http {
                url,
                model,
                dimension,
                prefix,
                timeout_secs,
            } => {
                let mut e = HttpEmbedder::new(url.clone(), model.clone(), *dimension, Duration::from_secs(*timeout_secs))
                    .map_err(|e| err(e.to_string()))?;
                if let Some(prefix) = prefix {
                    e = e.with_prefix(prefix.clone());
                }
                Arc::new(e)
            }
        })
    }

    pub fn linker(&self) -> Result<Linker, ConfigError> {
        let timeout = Duration::from_secs(self.nel.timeout_secs);
        let err = backend_err("entity linker");
        let entities: Arc<dyn EntityLookup> = match &self.nel.entities {
            LookupConfig::Wikidata { endpoint } => {
                Arc::new(WikidataEntityLookup::new(endpoint.clone(), timeout).map_err(|e| err(e.to_string()))?)
            }
            LookupConfig::Mock { table } => Arc::new(MockLookup::new(table.clone())),
            LookupConfig::Falcon { .. } => {
                return Err(ConfigError::Invalid("the falcon backend links relations only".into()))
            }
        };
        let relations: Arc<dyn RelationLookup> = match &self.nel.relations {
            LookupConfig::Falcon {
                endpoint,
                relations_field,
            } => {
                let mut falcon = FalconRelationLookup::new(endpoint.clone(), timeout).map_err(|e| err(e.to_string()))?;
                if let Some(field) = relations_field {
                    falcon = falcon.with_relations_field(field.clone());
                }
                Arc::new(falcon)
            }
            LookupConfig::Mock { table } => Arc::new(MockLookup::new(table.clone())),
            LookupConfig::Wikidata { .. } => {
                return Err(ConfigError::Invalid("the wikidata backend links entities only".into()))
            }
        };
        Ok(Linker::new(entities, relations).with_cache(self.nel.cache_capacity))
    }

    pub fn tools(&self) -> Result<ToolRegistry, ConfigError> {
        ToolRegistry::new()
            .with(Arc::new(NelTool::new(self.linker()?)))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn prompts(&self) -> Result<PromptRegistry, ConfigError> {
        let registry = PromptRegistry::english();
        match &self.prompt_dir {
            Some(dir) => registry.load_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(registry),
        }
    }

    /// The agent with every backend wired in.
    pub fn agent(&self) -> Result<Agent, ConfigError> {
        Ok(Agent::new(self.gateway()?, self.tools()?)
            .with_prompts(Arc::new(self.prompts()?))
            .with_embedder(self.embedder()?)
            .with_settings(self.agent.clone()))
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetProfile, ConfigError> {
        self.datasets
            .get(name)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown dataset '{name}'")))
    }

    pub fn triplestore(&self, name: &str) -> Result<Arc<dyn Triplestore>, ConfigError> {
        let timeout = Duration::from_secs(self.timeouts.query_secs);
        Ok(match &self.dataset(name)?.triplestore {
            TriplestoreConfig::Http { endpoint } => Arc::new(
                HttpTriplestore::new(endpoint.clone(), timeout).map_err(|e| backend_err("triplestore")(e.to_string()))?,
            ),
            TriplestoreConfig::Mock { file } => {
                let spec: MockTriplestoreFile =
                    serde_json::from_str(&read(file)?).map_err(|e| ConfigError::Format(format!("{}: {e}", file.display())))?;
                Arc::new(MockTriplestore::from_file(spec).with_timeout(timeout))
            }
        })
    }

    /// The dataset's pool, if one is configured.
    pub fn pool(&self, name: &str) -> Result<Option<ExperiencePool>, ConfigError> {
        match &self.dataset(name)?.pool {
            None => Ok(None),
            Some(path) => ExperiencePool::load(path)
                .map(Some)
                .map_err(|e| ConfigError::Invalid(format!("pool {}: {e}", path.display()))),
        }
    }

    pub fn translator(&self) -> Option<Arc<dyn Translator>> {
        self.translator.as_ref().map(|t| -> Arc<dyn Translator> {
            match t {
                TranslatorConfig::Identity => Arc::new(IdentityTranslator),
                TranslatorConfig::Map { table } => Arc::new(MapTranslator::new(table.clone())),
                TranslatorConfig::Http { url, timeout_secs } => {
                    Arc::new(HttpTranslator::new(url.clone(), Duration::from_secs(*timeout_secs)))
                }
            }
        })
    }
}
