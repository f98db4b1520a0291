//! Domain types and on-disk persistence for the multi-granular video database.
//!
//! A [`VideoDatabase`] holds the subject registry, one [`ClipRecord`] per
//! fixed-length clip (caption, embedding, decoded frame references) and a
//! manifest describing how it was built. Databases are immutable once loaded;
//! rebuild instead of mutating.

mod persist;
mod validate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use persist::{open, save, SCHEMA_VERSION};
pub(crate) use persist::{has_manifest, write_atomic as write_atomic_bytes};
pub use validate::{validate, ValidationReport, Violation};

/// Errors raised by the store.
#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("database not found at {0}")]
    NotFound(PathBuf),
    #[error("corrupt database layout: {0}")]
    CorruptLayout(String),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("database failed validation: {0}")]
    Validation(ValidationReport),
    #[error("time {time_s}s is outside the video [0, {duration_s})")]
    OutOfRange { time_s: f64, duration_s: f64 },
    #[error("invalid range: start {start_s}s > end {end_s}s")]
    InvalidRange { start_s: f64, end_s: f64 },
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Temporal extent of one clip: `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipInterval {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl ClipInterval {
    pub fn contains(&self, time_s: f64) -> bool {
        self.start_s <= time_s && time_s < self.end_s
    }

    pub fn len_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// True when `[start_s, end_s]` (closed) intersects this interval.
    pub fn intersects(&self, start_s: f64, end_s: f64) -> bool {
        self.start_s <= end_s && self.end_s > start_s
    }
}

/// A decoded frame retained in the frame store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub timestamp_s: f64,
    /// Path relative to the database root, `/`-separated.
    pub image_path: String,
    pub width_px: u32,
    pub height_px: u32,
}

/// Relative frame path for a clip index and timestamp.
pub fn frame_rel_path(clip_index: usize, timestamp_s: f64) -> String {
    format!("frames/{clip_index}/{}.jpg", (timestamp_s * 1000.0).round() as u64)
}

/// One clip: interval, caption, caption embedding and retained frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub interval: ClipInterval,
    pub caption: String,
    pub embedding: Vec<f32>,
    pub frame_refs: Vec<FrameRef>,
    pub transcript_text: Option<String>,
}

impl ClipRecord {
    /// Text that was embedded for this clip: caption, plus transcript when present.
    pub fn retrieval_text(&self) -> String {
        retrieval_text(&self.caption, self.transcript_text.as_deref())
    }
}

pub(crate) fn retrieval_text(caption: &str, transcript: Option<&str>) -> String {
    match transcript {
        Some(t) if !t.is_empty() => format!("{caption}\nTranscript: {t}"),
        _ => caption.to_string(),
    }
}

/// A subject tracked across the video.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub name: String,
    #[serde(default)]
    pub appearance: String,
    #[serde(default)]
    pub identity: String,
    #[serde(default)]
    pub actions: Vec<String>,
    #[serde(default)]
    pub time_spans: Vec<(f64, f64)>,
}

/// Progressive subject-centric representation built during captioning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectRegistry {
    pub subjects: Vec<SubjectEntry>,
    /// Number of clip steps applied so far.
    pub revision: u64,
}

impl SubjectRegistry {
    pub fn get(&self, name: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseManifest {
    pub video_id: String,
    pub source_path: String,
    pub duration_s: f64,
    pub clip_len_s: f64,
    pub decode_fps: f64,
    pub resize_shorter_side_px: u32,
    pub embedding_dim: usize,
    pub embedding_model_id: String,
    pub caption_model_id: String,
    pub schema_version: u32,
    /// Filled in by [`save`].
    #[serde(default)]
    pub clip_count: usize,
    /// Hex SHA-256 of `embeddings.f32`, filled in by [`save`].
    #[serde(default)]
    pub embeddings_sha256: String,
}

/// `D = {S, {f_i, c_i, e_i}}`.
///
/// `root` is the directory frame paths resolve against. It is not part of the
/// database's identity, so equality ignores it.
#[derive(Debug, Clone)]
pub struct VideoDatabase {
    pub manifest: DatabaseManifest,
    pub registry: SubjectRegistry,
    pub clips: Vec<ClipRecord>,
    pub root: Option<PathBuf>,
}

impl PartialEq for VideoDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest
            && self.registry == other.registry
            && self.clips == other.clips
    }
}

impl VideoDatabase {
    pub fn duration_s(&self) -> f64 {
        self.manifest.duration_s
    }

    /// Absolute path of a stored frame, if the database has a root.
    pub fn frame_path(&self, frame: &FrameRef) -> Option<PathBuf> {
        self.root.as_ref().map(|r| resolve(r, &frame.image_path))
    }

    /// Clip whose interval contains `time_s`.
    pub fn clip_at(&self, time_s: f64) -> Result<&ClipRecord, StoreError> {
        let duration_s = self.duration_s();
        if !(0.0..duration_s).contains(&time_s) || self.clips.is_empty() {
            return Err(StoreError::OutOfRange { time_s, duration_s });
        }
        let last = self.clips.len() - 1;
        let mut i = ((time_s / self.manifest.clip_len_s).floor() as usize).min(last);
        // floor of a rounded quotient can land one clip off at boundaries
        if self.clips[i].interval.start_s > time_s && i > 0 {
            i -= 1;
        } else if self.clips[i].interval.end_s <= time_s && i < last {
            i += 1;
        }
        Ok(&self.clips[i])
    }

    /// Clips intersecting `[start_s, end_s]` after clamping to `[0, duration]`.
    pub fn clips_in_range(&self, start_s: f64, end_s: f64) -> Result<Vec<&ClipRecord>, StoreError> {
        if start_s > end_s || start_s.is_nan() || end_s.is_nan() {
            return Err(StoreError::InvalidRange { start_s, end_s });
        }
        let duration = self.duration_s();
        let (s, e) = (start_s.clamp(0.0, duration), end_s.clamp(0.0, duration));
        Ok(self
            .clips
            .iter()
            .filter(|c| c.interval.intersects(s, e))
            .collect())
    }

    /// All stored frames in `[start_s, end_s]`, in time order.
    pub fn frames_in_range(&self, start_s: f64, end_s: f64) -> Result<Vec<&FrameRef>, StoreError> {
        Ok(self
            .clips_in_range(start_s, end_s)?
            .into_iter()
            .flat_map(|c| c.frame_refs.iter())
            .filter(|f| f.timestamp_s >= start_s.max(0.0) && f.timestamp_s <= end_s)
            .collect())
    }

    /// Every stored frame in time order.
    pub fn all_frames(&self) -> Vec<&FrameRef> {
        self.clips.iter().flat_map(|c| c.frame_refs.iter()).collect()
    }

    /// Row-major `N x d` view of the caption embeddings.
    pub fn embedding_matrix(&self) -> Vec<&[f32]> {
        self.clips.iter().map(|c| c.embedding.as_slice()).collect()
    }
}

pub(crate) fn resolve(root: &Path, rel: &str) -> PathBuf {
    rel.split('/').fold(root.to_path_buf(), |p, part| p.join(part))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Database with `n` tiled clips of length `t`, no frames, `dim`-d embeddings.
    pub fn tiled_db(duration_s: f64, clip_len_s: f64, dim: usize) -> VideoDatabase {
        let intervals = crate::ingest::segment(duration_s, clip_len_s).unwrap();
        let clips = intervals
            .into_iter()
            .map(|interval| {
                let mut embedding = vec![0.0f32; dim];
                embedding[interval.index % dim] = 1.0;
                ClipRecord {
                    interval,
                    caption: format!("clip {}", interval.index),
                    embedding,
                    frame_refs: Vec::new(),
                    transcript_text: None,
                }
            })
            .collect::<Vec<_>>();
        VideoDatabase {
            manifest: DatabaseManifest {
                video_id: "test".into(),
                source_path: "test.mp4".into(),
                duration_s,
                clip_len_s,
                decode_fps: 2.0,
                resize_shorter_side_px: 720,
                embedding_dim: dim,
                embedding_model_id: "stub-hash".into(),
                caption_model_id: "stub".into(),
                schema_version: SCHEMA_VERSION,
                clip_count: clips.len(),
                embeddings_sha256: String::new(),
            },
            registry: SubjectRegistry {
                subjects: Vec::new(),
                revision: clips.len() as u64,
            },
            clips,
            root: None,
        }
    }
}
