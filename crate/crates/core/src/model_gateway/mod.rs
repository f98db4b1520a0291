//! Uniform access to reasoning, vision-language and embedding backends.
//!
//! Every backend implements [`ChatModel`] and/or [`Embedder`]. Wrappers add
//! record/replay ([`Recorder`], [`Replay`]) and retries ([`Retrying`]);
//! [`build_chat`] and [`build_embedder`] compose them from a
//! [`BackendConfig`].

mod fixtures;
mod hash;
mod http;
mod retry;
mod stub;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use fixtures::{FixtureRecord, FixtureStore, Recorder, Replay};
pub use hash::{canonical_request, canonical_request_hash, embed_text_hash};
pub use http::{AuthStyle, HttpBackend, HttpConfig};
pub use retry::{RetryPolicy, Retrying};
pub use stub::{
    hash_projection, HashEmbedder, PaletteVision, Script, ScriptRule, ScriptedChat, ScriptedTurn,
    DEFAULT_STUB_DIM,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum ModelError {
    #[error("request blocked by the provider's content filter: {0}")]
    ContentFiltered(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no replay fixture for request {hash}")]
    FixtureMissing { hash: String },
    #[error("provider returned HTTP {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unparseable provider response: {0}")]
    BadResponse(String),
}

impl ModelError {
    /// Errors worth retrying with backoff.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ModelError::RateLimited { .. } | ModelError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message { role: Role::System, text: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Message { role: Role::Assistant, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub backend_id: String,
    pub role_messages: Vec<Message>,
    #[serde(default)]
    pub image_attachments: Vec<PathBuf>,
    /// Machine-readable action schema, a JSON array of tool descriptors.
    #[serde(default)]
    pub tool_schema: Option<serde_json::Value>,
    pub max_output_tokens: u32,
}

impl ModelRequest {
    pub fn new(backend_id: impl Into<String>, role_messages: Vec<Message>) -> Self {
        ModelRequest {
            backend_id: backend_id.into(),
            role_messages,
            image_attachments: Vec::new(),
            tool_schema: None,
            max_output_tokens: 2048,
        }
    }

    pub fn with_images(mut self, images: Vec<PathBuf>) -> Self {
        self.image_attachments = images;
        self
    }

    pub fn with_tools(mut self, schema: serde_json::Value) -> Self {
        self.tool_schema = Some(schema);
        self
    }

    /// All message text joined by newlines.
    pub fn transcript(&self) -> String {
        self.role_messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ToolCall,
    ContentFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    #[serde(default)]
    pub tool_call: Option<ToolCall>,
    #[serde(default)]
    pub usage: Usage,
    pub finish_reason: FinishReason,
}

impl ModelResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ModelResponse {
            text: text.into(),
            tool_call: None,
            usage: Usage::default(),
            finish_reason: FinishReason::Stop,
        }
    }

    pub fn tool(text: impl Into<String>, call: ToolCall) -> Self {
        ModelResponse {
            text: text.into(),
            tool_call: Some(call),
            usage: Usage::default(),
            finish_reason: FinishReason::ToolCall,
        }
    }
}

/// A text or vision-language completion backend.
pub trait ChatModel: Send + Sync {
    fn id(&self) -> &str;

    fn supports_vision(&self) -> bool {
        true
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError>;
}

/// A text embedding backend producing `dim()`-dimensional vectors.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ModelError>;
}

/// Reject requests that violate [`ModelRequest`]'s invariants.
pub fn check_request(model: &dyn ChatModel, req: &ModelRequest) -> Result<(), ModelError> {
    if req.role_messages.is_empty() {
        return Err(ModelError::InvalidRequest("role_messages is empty".into()));
    }
    if !req.image_attachments.is_empty() && !model.supports_vision() {
        return Err(ModelError::InvalidRequest(format!(
            "backend {} does not accept images",
            model.id()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Live,
    Record,
    Replay,
}

/// What sits behind a backend id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BackendKind {
    /// OpenAI-compatible HTTP chat/embedding endpoint.
    Http(HttpConfig),
    /// Offline hash-projection embedder.
    StubHash {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Offline vision stub that names dominant frame colours.
    StubPalette,
    /// Offline scripted reasoner.
    Scripted { script: PathBuf },
}

fn default_dim() -> usize {
    DEFAULT_STUB_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend_id: String,
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default)]
    pub mode: BackendMode,
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Embedding dimension reported in replay mode.
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

impl BackendConfig {
    pub fn new(backend_id: impl Into<String>, kind: BackendKind) -> Self {
        BackendConfig {
            backend_id: backend_id.into(),
            kind,
            mode: BackendMode::Live,
            fixture_dir: None,
            retry: RetryPolicy::default(),
            embedding_dim: None,
        }
    }

    fn fixture_store(&self) -> Result<Arc<FixtureStore>, ModelError> {
        match &self.fixture_dir {
            Some(dir) => Ok(Arc::new(FixtureStore::new(dir.clone()))),
            None => Err(ModelError::InvalidRequest(format!(
                "backend {}: {:?} mode requires fixture_dir",
                self.backend_id, self.mode
            ))),
        }
    }
}

fn base_chat(cfg: &BackendConfig) -> Result<Arc<dyn ChatModel>, ModelError> {
    Ok(match &cfg.kind {
        BackendKind::Http(http) => Arc::new(HttpBackend::new(&cfg.backend_id, http.clone())?),
        BackendKind::StubPalette => Arc::new(PaletteVision::new(&cfg.backend_id)),
        BackendKind::Scripted { script } => {
            Arc::new(ScriptedChat::from_file(&cfg.backend_id, script)?)
        }
        BackendKind::StubHash { .. } => {
            return Err(ModelError::InvalidRequest(format!(
                "backend {} is an embedder, not a chat model",
                cfg.backend_id
            )))
        }
    })
}

fn base_embedder(cfg: &BackendConfig) -> Result<Arc<dyn Embedder>, ModelError> {
    Ok(match &cfg.kind {
        BackendKind::Http(http) => Arc::new(HttpBackend::new(&cfg.backend_id, http.clone())?),
        BackendKind::StubHash { dim } => Arc::new(HashEmbedder::new(&cfg.backend_id, *dim)),
        _ => {
            return Err(ModelError::InvalidRequest(format!(
                "backend {} is not an embedder",
                cfg.backend_id
            )))
        }
    })
}

/// Compose a chat backend: base, then record/replay, then retries.
pub fn build_chat(cfg: &BackendConfig) -> Result<Arc<dyn ChatModel>, ModelError> {
    let inner: Arc<dyn ChatModel> = match cfg.mode {
        BackendMode::Live => base_chat(cfg)?,
        BackendMode::Record => Arc::new(Recorder::new(base_chat(cfg)?, cfg.fixture_store()?)),
        BackendMode::Replay => Arc::new(Replay::new(&cfg.backend_id, cfg.fixture_store()?, 0)),
    };
    Ok(Arc::new(Retrying::new(inner, cfg.retry)))
}

pub fn build_embedder(cfg: &BackendConfig) -> Result<Arc<dyn Embedder>, ModelError> {
    let inner: Arc<dyn Embedder> = match cfg.mode {
        BackendMode::Live => base_embedder(cfg)?,
        BackendMode::Record => Arc::new(Recorder::new(base_embedder(cfg)?, cfg.fixture_store()?)),
        BackendMode::Replay => {
            let dim = cfg.embedding_dim.or(match cfg.kind {
                BackendKind::StubHash { dim } => Some(dim),
                _ => None,
            });
            let dim = dim.ok_or_else(|| {
                ModelError::InvalidRequest(format!(
                    "backend {}: replay embedder needs embedding_dim",
                    cfg.backend_id
                ))
            })?;
            Arc::new(Replay::new(&cfg.backend_id, cfg.fixture_store()?, dim))
        }
    };
    Ok(Arc::new(Retrying::new(inner, cfg.retry)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_requires_fixture_dir() {
        let mut cfg = BackendConfig::new("v", BackendKind::StubPalette);
        cfg.mode = BackendMode::Replay;
        assert!(matches!(build_chat(&cfg), Err(ModelError::InvalidRequest(_))));
    }

    #[test]
    fn config_parses_from_toml_shape() {
        let cfg: BackendConfig = serde_json::from_value(serde_json::json!({
            "backend_id": "embed",
            "kind": "stub-hash",
            "dim": 64
        }))
        .unwrap();
        assert_eq!(cfg.kind, BackendKind::StubHash { dim: 64 });
        assert_eq!(cfg.mode, BackendMode::Live);
        let e = build_embedder(&cfg).unwrap();
        assert_eq!(e.dim(), 64);
    }

    #[test]
    fn vision_check() {
        struct TextOnly;
        impl ChatModel for TextOnly {
            fn id(&self) -> &str {
                "t"
            }
            fn supports_vision(&self) -> bool {
                false
            }
            fn complete(&self, _: &ModelRequest) -> Result<ModelResponse, ModelError> {
                Ok(ModelResponse::text("x"))
            }
        }
        let req = ModelRequest::new("t", vec![Message::user("hi")]).with_images(vec!["a.jpg".into()]);
        assert!(check_request(&TextOnly, &req).is_err());
        let empty = ModelRequest::new("t", vec![]);
        assert!(check_request(&TextOnly, &empty).is_err());
    }
}
