//! Search tools over a [`VideoDatabase`]: Global Browse, Clip Search and
//! Frame Inspect.

mod retrieve;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::model_gateway::{ChatModel, Embedder, Message, ModelError, ModelRequest};
use crate::video_store::{FrameRef, StoreError, SubjectRegistry, VideoDatabase};

pub use retrieve::{cosine_top_k, sample_uniform};

pub const EVENT_SUMMARY_PROMPT: &str = include_str!("../../prompts/event_summary_v1.txt");
pub const FRAME_INSPECT_PROMPT: &str = include_str!("../../prompts/frame_inspect_v1.txt");

/// Observation text standing in for output a provider refused to produce.
pub const BLOCKED_MARKER: &str = "[blocked]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    GlobalBrowse,
    ClipSearch,
    FrameInspect,
}

impl ToolKind {
    pub const ALL: [ToolKind; 3] = [ToolKind::GlobalBrowse, ToolKind::ClipSearch, ToolKind::FrameInspect];

    pub fn name(self) -> &'static str {
        match self {
            ToolKind::GlobalBrowse => "global_browse",
            ToolKind::ClipSearch => "clip_search",
            ToolKind::FrameInspect => "frame_inspect",
        }
    }

    /// Accepts the wire name or the CamelCase form.
    pub fn from_name(name: &str) -> Option<ToolKind> {
        let folded: String = name.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_lowercase();
        ToolKind::ALL
            .into_iter()
            .find(|t| t.name().replace('_', "") == folded)
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("tool {0} is disabled")]
    Disabled(ToolKind),
    #[error("k must be in [1, {max_k}], got {k}")]
    InvalidK { k: usize, max_k: usize },
    #[error("invalid range: t_s {t_s} > t_e {t_e}")]
    InvalidRange { t_s: f64, t_e: f64 },
    #[error("no stored frames in [{t_s}, {t_e}]")]
    EmptyRange { t_s: f64, t_e: f64 },
    #[error("row {row} has dimension {found}, query has {expected}")]
    DimensionMismatch { expected: usize, found: usize, row: usize },
    #[error("query embedding has zero norm")]
    ZeroNormQuery,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Backend(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ToolError {
    /// Stable short code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            ToolError::Disabled(_) => "tool-disabled",
            ToolError::Backend(_) => "backend-error",
            _ => "invalid-params",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolsetConfig {
    pub enabled: BTreeSet<ToolKind>,
    pub default_k: usize,
    pub max_k: usize,
    pub frame_cap: usize,
    pub event_summary_frames: usize,
}

impl Default for ToolsetConfig {
    fn default() -> Self {
        ToolsetConfig {
            enabled: ToolKind::ALL.into_iter().collect(),
            default_k: 16,
            max_k: 64,
            frame_cap: 50,
            event_summary_frames: 50,
        }
    }
}

impl ToolsetConfig {
    pub fn without(mut self, tool: ToolKind) -> Self {
        self.enabled.remove(&tool);
        self
    }

    pub fn is_enabled(&self, tool: ToolKind) -> bool {
        self.enabled.contains(&tool)
    }

    pub fn check(&self) -> Result<(), ToolError> {
        if self.default_k == 0 || self.default_k > self.max_k {
            return Err(ToolError::InvalidArgument(format!(
                "need 1 <= default_k <= max_k, got {} and {}",
                self.default_k, self.max_k
            )));
        }
        if self.frame_cap == 0 || self.event_summary_frames == 0 {
            return Err(ToolError::InvalidArgument("frame caps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub subject_summary: String,
    pub event_summary: String,
    /// Set when the event side was blocked and only subjects are reported.
    #[serde(default)]
    pub degraded: bool,
}

impl GlobalSummary {
    pub fn observation(&self) -> String {
        let events = if self.degraded {
            format!("{BLOCKED_MARKER} event summary unavailable")
        } else {
            self.event_summary.clone()
        };
        format!("Subjects:\n{}\n\nEvents:\n{}", self.subject_summary, events)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipHit {
    pub clip_index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub caption: String,
    pub score: f64,
}

pub fn clip_hits_observation(hits: &[ClipHit]) -> String {
    if hits.is_empty() {
        return "No clips found.".into();
    }
    hits.iter()
        .map(|h| format!("[{:.1}s-{:.1}s] (clip {}, score {:.3}) {}", h.start_s, h.end_s, h.clip_index, h.score, h.caption))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectResult {
    pub answer: String,
    pub frames_used: usize,
    pub range: (f64, f64),
    #[serde(default)]
    pub blocked: bool,
}

impl InspectResult {
    pub fn observation(&self) -> String {
        format!(
            "Inspected {} frames in [{:.1}s, {:.1}s]: {}",
            self.frames_used, self.range.0, self.range.1, self.answer
        )
    }
}

/// Plain-text rendering of the registry; depends on nothing else.
pub fn subject_summary(registry: &SubjectRegistry) -> String {
    if registry.subjects.is_empty() {
        return "(no subjects)".into();
    }
    registry
        .subjects
        .iter()
        .map(|s| {
            let spans: Vec<String> = s.time_spans.iter().map(|(a, b)| format!("{a:.1}-{b:.1}s")).collect();
            let mut line = format!("- {}", s.name);
            for (label, value) in [("appearance", &s.appearance), ("identity", &s.identity)] {
                if !value.is_empty() {
                    line.push_str(&format!("; {label}: {value}"));
                }
            }
            if !s.actions.is_empty() {
                line.push_str(&format!("; actions: {}", s.actions.join(", ")));
            }
            if !spans.is_empty() {
                line.push_str(&format!("; seen: {}", spans.join(", ")));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Tool descriptors (`name`, `description`, JSON-schema `parameters`).
pub fn tool_descriptor(tool: ToolKind, cfg: &ToolsetConfig) -> Value {
    match tool {
        ToolKind::GlobalBrowse => json!({
            "name": "global_browse",
            "description": "Global summaries of the whole video: the registry of subjects seen (names, appearance, identity, actions, time spans) and the events related to the question.",
            "parameters": {"type": "object", "properties": {}, "required": []}
        }),
        ToolKind::ClipSearch => json!({
            "name": "clip_search",
            "description": "Search clip captions by semantic similarity to a text query. Returns the top-k clips with time ranges and captions.",
            "parameters": {
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "Text describing the content to find."},
                    "k": {"type": "integer", "minimum": 1, "maximum": cfg.max_k, "default": cfg.default_k}
                },
                "required": ["query"]
            }
        }),
        ToolKind::FrameInspect => json!({
            "name": "frame_inspect",
            "description": format!("Ask a visual question about the raw frames in a time range [t_s, t_e] (seconds). At most {} frames are sampled uniformly from the range.", cfg.frame_cap),
            "parameters": {
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "Question about the frames."},
                    "t_s": {"type": "number", "description": "Range start, seconds."},
                    "t_e": {"type": "number", "description": "Range end, seconds."}
                },
                "required": ["query", "t_s", "t_e"]
            }
        }),
    }
}

/// Descriptors of the enabled tools, in canonical order.
pub fn tool_schema(cfg: &ToolsetConfig) -> Vec<Value> {
    ToolKind::ALL
        .into_iter()
        .filter(|t| cfg.is_enabled(*t))
        .map(|t| tool_descriptor(t, cfg))
        .collect()
}

/// The three tools bound to one database and its backends. Stateless and
/// shareable; per-episode state lives in [`ToolSession`].
pub struct Toolset {
    pub db: Arc<VideoDatabase>,
    pub cfg: ToolsetConfig,
    pub vlm: Arc<dyn ChatModel>,
    pub embedder: Arc<dyn Embedder>,
}

impl Toolset {
    pub fn new(
        db: Arc<VideoDatabase>,
        cfg: ToolsetConfig,
        vlm: Arc<dyn ChatModel>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, ToolError> {
        cfg.check()?;
        Ok(Toolset { db, cfg, vlm, embedder })
    }

    pub fn session(&self) -> ToolSession<'_> {
        ToolSession { tools: self, event_cache: HashMap::new() }
    }

    fn ensure(&self, tool: ToolKind) -> Result<(), ToolError> {
        if self.cfg.is_enabled(tool) {
            Ok(())
        } else {
            Err(ToolError::Disabled(tool))
        }
    }

    fn frame_paths(&self, frames: &[&FrameRef]) -> Result<Vec<std::path::PathBuf>, ToolError> {
        frames
            .iter()
            .map(|f| {
                self.db
                    .frame_path(f)
                    .ok_or_else(|| ToolError::InvalidArgument("database has no frame root".into()))
            })
            .collect()
    }

    fn vision_request(&self, prompt: &str, user: String, frames: &[&FrameRef]) -> Result<ModelRequest, ToolError> {
        let times: Vec<String> = frames.iter().map(|f| format!("{:.1}", f.timestamp_s)).collect();
        let user = format!("{user}\nFrame times (s): {}", times.join(", "));
        Ok(ModelRequest::new(self.vlm.id(), vec![Message::system(prompt), Message::user(user)])
            .with_images(self.frame_paths(frames)?))
    }

    /// Top-`k` clips for `query` (`default_k` when `None`).
    pub fn clip_search(&self, query: &str, k: Option<usize>) -> Result<Vec<ClipHit>, ToolError> {
        self.ensure(ToolKind::ClipSearch)?;
        let k = k.unwrap_or(self.cfg.default_k);
        if k == 0 || k > self.cfg.max_k {
            return Err(ToolError::InvalidK { k, max_k: self.cfg.max_k });
        }
        if query.trim().is_empty() {
            return Err(ToolError::InvalidArgument("empty query".into()));
        }
        let q = self
            .embedder
            .embed(&[query.to_string()])?
            .pop()
            .ok_or_else(|| ModelError::BadResponse("no embedding returned".into()))?;
        let ranked = cosine_top_k(&q, &self.db.embedding_matrix(), k)?;
        Ok(ranked
            .into_iter()
            .map(|(i, score)| {
                let c = &self.db.clips[i];
                ClipHit {
                    clip_index: c.interval.index,
                    start_s: c.interval.start_s,
                    end_s: c.interval.end_s,
                    caption: c.retrieval_text(),
                    score: score.max(-1.0),
                }
            })
            .collect())
    }

    /// Visual question over the stored frames of `[t_s, t_e]`, clamped to the video.
    pub fn frame_inspect(&self, query: &str, t_s: f64, t_e: f64) -> Result<InspectResult, ToolError> {
        self.ensure(ToolKind::FrameInspect)?;
        if !(t_s <= t_e) {
            return Err(ToolError::InvalidRange { t_s, t_e });
        }
        let duration = self.db.duration_s();
        let (s, e) = (t_s.clamp(0.0, duration), t_e.clamp(0.0, duration));
        let all = self.db.frames_in_range(s, e)?;
        if all.is_empty() {
            return Err(ToolError::EmptyRange { t_s: s, t_e: e });
        }
        let picked: Vec<&FrameRef> = sample_uniform(all.len(), self.cfg.frame_cap)?
            .into_iter()
            .map(|i| all[i])
            .collect();
        let user = format!("Time range: {s:.1}s to {e:.1}s\nQuestion: {query}");
        let req = self.vision_request(FRAME_INSPECT_PROMPT, user, &picked)?;
        let (answer, blocked) = match self.vlm.complete(&req) {
            Ok(r) => (r.text, false),
            Err(ModelError::ContentFiltered(_)) => (BLOCKED_MARKER.to_string(), true),
            Err(e) => return Err(e.into()),
        };
        Ok(InspectResult { answer, frames_used: picked.len(), range: (s, e), blocked })
    }
}

/// Tool access for one episode; caches Global Browse's event summary per query.
pub struct ToolSession<'a> {
    pub tools: &'a Toolset,
    event_cache: HashMap<String, String>,
}

impl ToolSession<'_> {
    pub fn global_browse(&mut self, user_query: &str) -> Result<GlobalSummary, ToolError> {
        let tools = self.tools;
        tools.ensure(ToolKind::GlobalBrowse)?;
        let subject_summary = subject_summary(&tools.db.registry);
        if let Some(ev) = self.event_cache.get(user_query) {
            return Ok(GlobalSummary { subject_summary, event_summary: ev.clone(), degraded: false });
        }
        let all = tools.db.all_frames();
        if all.is_empty() {
            return Err(ToolError::EmptyRange { t_s: 0.0, t_e: tools.db.duration_s() });
        }
        let picked: Vec<&FrameRef> = sample_uniform(all.len(), tools.cfg.event_summary_frames)?
            .into_iter()
            .map(|i| all[i])
            .collect();
        let req = tools.vision_request(EVENT_SUMMARY_PROMPT, format!("User question: {user_query}"), &picked)?;
        match tools.vlm.complete(&req) {
            Ok(r) => {
                self.event_cache.insert(user_query.to_string(), r.text.clone());
                Ok(GlobalSummary { subject_summary, event_summary: r.text, degraded: false })
            }
            Err(ModelError::ContentFiltered(_)) => {
                Ok(GlobalSummary { subject_summary, event_summary: String::new(), degraded: true })
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn clip_search(&self, query: &str, k: Option<usize>) -> Result<Vec<ClipHit>, ToolError> {
        self.tools.clip_search(query, k)
    }

    pub fn frame_inspect(&self, query: &str, t_s: f64, t_e: f64) -> Result<InspectResult, ToolError> {
        self.tools.frame_inspect(query, t_s, t_e)
    }
}
