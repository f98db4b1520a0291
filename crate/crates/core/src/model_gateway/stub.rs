//! Offline backends for tests and fixture generation.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_request, ChatModel, Embedder, ModelError, ModelRequest, ModelResponse, Role, ToolCall};

pub const DEFAULT_STUB_DIM: usize = 256;

/// Hash-projection embedding.
///
/// Tokens are whitespace-separated words with leading/trailing ASCII
/// punctuation stripped, lowercased; empty tokens are dropped. Each token's
/// SHA-256 digest picks a bucket (`u64::from_le_bytes(digest[0..8]) % dim`)
/// and a sign (`+1` if `digest[8]` is even, else `-1`). Bucket counts are
/// L2-normalized; text with no tokens maps to the zero vector.
pub fn hash_projection(text: &str, dim: usize) -> Vec<f32> {
    let mut counts = vec![0i64; dim];
    for raw in text.split_whitespace() {
        let token = raw.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase();
        if token.is_empty() {
            continue;
        }
        let digest = Sha256::digest(token.as_bytes());
        let head: [u8; 8] = digest[0..8].try_into().expect("digest is 32 bytes");
        let bucket = (u64::from_le_bytes(head) % dim as u64) as usize;
        counts[bucket] += if digest[8] % 2 == 0 { 1 } else { -1 };
    }
    let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dim];
    }
    counts.iter().map(|&c| (c as f64 / norm) as f32).collect()
}

pub struct HashEmbedder {
    id: String,
    dim: usize,
}

impl HashEmbedder {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { id: id.into(), dim }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ModelError> {
        if texts.is_empty() {
            return Err(ModelError::InvalidRequest("no texts to embed".into()));
        }
        Ok(texts.iter().map(|t| hash_projection(t, self.dim)).collect())
    }
}

/// One scripted model reply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub tool_call: Option<ToolCall>,
}

impl ScriptedTurn {
    pub fn text(text: impl Into<String>) -> Self {
        ScriptedTurn { text: text.into(), tool_call: None }
    }

    pub fn call(reasoning: impl Into<String>, name: &str, parameters: serde_json::Value) -> Self {
        ScriptedTurn {
            text: reasoning.into(),
            tool_call: Some(ToolCall { name: name.to_string(), parameters }),
        }
    }
}

/// Replies for conversations whose user messages contain `when_contains`
/// (any conversation when unset).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub when_contains: Option<String>,
    #[serde(default)]
    pub turns: Vec<ScriptedTurn>,
    /// Reply to answer-only requests (those without a tool schema).
    #[serde(default)]
    pub forced_answer: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
}

/// Scripted reasoner. Each rule's turns are served in order and the last turn
/// repeats once exhausted. Requests without a tool schema get the rule's
/// `forced_answer` and do not advance the cursor.
pub struct ScriptedChat {
    id: String,
    script: Script,
    cursors: Mutex<HashMap<usize, usize>>,
    calls: AtomicUsize,
    forced_calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(id: impl Into<String>, script: Script) -> Self {
        ScriptedChat {
            id: id.into(),
            script,
            cursors: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
            forced_calls: AtomicUsize::new(0),
        }
    }

    /// Always answers with `text`.
    pub fn fixed(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(
            id,
            Script {
                rules: vec![ScriptRule {
                    when_contains: None,
                    turns: vec![ScriptedTurn::text(text.clone())],
                    forced_answer: Some(text),
                }],
            },
        )
    }

    /// One rule matching everything.
    pub fn sequence(id: impl Into<String>, turns: Vec<ScriptedTurn>, forced_answer: &str) -> Self {
        Self::new(
            id,
            Script {
                rules: vec![ScriptRule {
                    when_contains: None,
                    turns,
                    forced_answer: Some(forced_answer.to_string()),
                }],
            },
        )
    }

    pub fn from_file(id: impl Into<String>, path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ModelError::InvalidRequest(format!("script {}: {e}", path.display())))?;
        let script: Script = serde_json::from_slice(&bytes)
            .map_err(|e| ModelError::InvalidRequest(format!("script {}: {e}", path.display())))?;
        Ok(Self::new(id, script))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn forced_calls(&self) -> usize {
        self.forced_calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.cursors.lock().unwrap_or_else(|e| e.into_inner()).clear();
        self.calls.store(0, Ordering::SeqCst);
        self.forced_calls.store(0, Ordering::SeqCst);
    }

    fn matching_rule(&self, req: &ModelRequest) -> Option<(usize, &ScriptRule)> {
        self.script.rules.iter().enumerate().find(|(_, rule)| match &rule.when_contains {
            None => true,
            Some(needle) => req
                .role_messages
                .iter()
                .any(|m| m.role == Role::User && m.text.contains(needle.as_str())),
        })
    }
}

impl ChatModel for ScriptedChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        check_request(self, req)?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let (idx, rule) = self
            .matching_rule(req)
            .ok_or_else(|| ModelError::InvalidRequest("no script rule matches the request".into()))?;

        if req.tool_schema.is_none() {
            self.forced_calls.fetch_add(1, Ordering::SeqCst);
            let text = rule
                .forced_answer
                .clone()
                .or_else(|| rule.turns.last().map(|t| t.text.clone()))
                .unwrap_or_default();
            return Ok(ModelResponse::text(text));
        }

        let turn = {
            let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
            let cursor = cursors.entry(idx).or_insert(0);
            let turn = rule
                .turns
                .get(*cursor)
                .or_else(|| rule.turns.last())
                .cloned()
                .unwrap_or_default();
            *cursor += 1;
            turn
        };
        Ok(match turn.tool_call {
            Some(call) => ModelResponse::tool(turn.text, call),
            None => ModelResponse::text(turn.text),
        })
    }
}

const PALETTE: [(&str, [u8; 3]); 12] = [
    ("black", [0, 0, 0]),
    ("white", [255, 255, 255]),
    ("gray", [128, 128, 128]),
    ("red", [220, 30, 30]),
    ("green", [30, 160, 60]),
    ("blue", [30, 60, 220]),
    ("yellow", [240, 220, 40]),
    ("orange", [240, 140, 20]),
    ("purple", [130, 40, 170]),
    ("cyan", [40, 200, 220]),
    ("magenta", [220, 40, 180]),
    ("brown", [120, 70, 30]),
];

fn nearest_colour(rgb: [f64; 3]) -> &'static str {
    PALETTE
        .iter()
        .map(|(name, c)| {
            let d: f64 = (0..3).map(|i| (rgb[i] - c[i] as f64).powi(2)).sum();
            (name, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(name, _)| *name)
        .expect("palette is non-empty")
}

fn mean_rgb(path: &Path) -> Result<[f64; 3], ModelError> {
    let img = image::open(path)
        .map_err(|e| ModelError::InvalidRequest(format!("image {}: {e}", path.display())))?
        .to_rgb8();
    let mut sum = [0f64; 3];
    for p in img.pixels() {
        for i in 0..3 {
            sum[i] += p.0[i] as f64;
        }
    }
    let n = (img.width() as f64 * img.height() as f64).max(1.0);
    Ok([sum[0] / n, sum[1] / n, sum[2] / n])
}

/// Runs of identical dominant colours: (colour, first frame, last frame), 1-based.
fn colour_runs(colours: &[&'static str]) -> Vec<(&'static str, usize, usize)> {
    let mut runs: Vec<(&'static str, usize, usize)> = Vec::new();
    for (i, &c) in colours.iter().enumerate() {
        match runs.last_mut() {
            Some(last) if last.0 == c => last.2 = i + 1,
            _ => runs.push((c, i + 1, i + 1)),
        }
    }
    runs
}

/// Names in the fenced `registry` JSON block of a caption prompt.
fn known_subject_names(prompt: &str) -> Vec<String> {
    let Some(start) = prompt.find("```registry\n") else {
        return Vec::new();
    };
    let body = &prompt[start + "```registry\n".len()..];
    let body = body.split("\n```").next().unwrap_or_default();
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v["subjects"].as_array().map(|xs| {
                xs.iter()
                    .filter_map(|s| s["name"].as_str().map(str::to_string))
                    .collect()
            })
        })
        .unwrap_or_default()
}

/// Vision stand-in that reports the dominant palette colour of each frame.
///
/// Caption prompts (those carrying a ```registry block) get a caption plus a
/// registry delta with one subject per colour; every other request gets a
/// plain description of colour runs.
pub struct PaletteVision {
    id: String,
}

impl PaletteVision {
    pub fn new(id: impl Into<String>) -> Self {
        PaletteVision { id: id.into() }
    }
}

impl ChatModel for PaletteVision {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        check_request(self, req)?;
        let prompt = req.transcript();
        let caption_mode = prompt.contains("```registry\n");
        if req.image_attachments.is_empty() {
            let text = if caption_mode { "empty scene" } else { "No frames were provided." };
            return Ok(ModelResponse::text(text));
        }
        let colours = req
            .image_attachments
            .iter()
            .map(|p| mean_rgb(p).map(nearest_colour))
            .collect::<Result<Vec<_>, _>>()?;
        let runs = colour_runs(&colours);

        if !caption_mode {
            let parts: Vec<String> = runs
                .iter()
                .map(|(c, a, b)| if a == b { format!("{c} (frame {a})") } else { format!("{c} (frames {a}-{b})") })
                .collect();
            return Ok(ModelResponse::text(format!(
                "Observed {} frames. Dominant colours in order: {}.",
                colours.len(),
                parts.join(", ")
            )));
        }

        let mut distinct: Vec<&str> = Vec::new();
        for (c, _, _) in &runs {
            if !distinct.contains(c) {
                distinct.push(c);
            }
        }
        let caption = match distinct.as_slice() {
            [only] => format!("The frames show a predominantly {only} scene; the {only} object stays in view."),
            [first, rest @ ..] => format!(
                "The frames show a {first} scene that changes to {}; the {first} object is replaced.",
                rest.join(" then ")
            ),
            [] => "empty scene".to_string(),
        };
        let known = known_subject_names(&prompt);
        let (mut new_subjects, mut updated_subjects) = (Vec::new(), Vec::new());
        for c in &distinct {
            let name = format!("{c} object");
            if known.contains(&name) {
                updated_subjects.push(serde_json::json!({ "name": name, "actions": ["reappears"] }));
            } else {
                new_subjects.push(serde_json::json!({
                    "name": name,
                    "appearance": format!("a {c} coloured region filling the frame"),
                    "identity": format!("unidentified {c} object"),
                    "actions": ["appears"],
                }));
            }
        }
        let delta = serde_json::json!({ "new_subjects": new_subjects, "updated_subjects": updated_subjects });
        Ok(ModelResponse::text(format!(
            "Caption: {caption}\n```registry_delta\n{delta}\n```"
        )))
    }
}
