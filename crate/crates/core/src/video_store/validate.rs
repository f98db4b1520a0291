use std::collections::HashSet;
use std::fmt;

use super::VideoDatabase;

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Manifest(String),
    ClipCount { expected: usize, actual: usize },
    ClipIndex { position: usize, index: usize },
    EmptyInterval { clip: usize },
    IntervalMisaligned { clip: usize, start_s: f64, end_s: f64, expected_start_s: f64, expected_end_s: f64 },
    Overlap { first: usize, second: usize },
    Gap { first: usize, second: usize },
    EmptyCaption { clip: usize },
    EmbeddingDim { clip: usize, expected: usize, actual: usize },
    NonFiniteEmbedding { clip: usize },
    FrameOutsideInterval { clip: usize, image_path: String, timestamp_s: f64 },
    FrameOrder { clip: usize, image_path: String },
    FrameMissing { clip: usize, image_path: String },
    FrameTooLarge { clip: usize, image_path: String, width_px: u32, height_px: u32 },
    DuplicateSubject { name: String },
    SubjectSpan { name: String, start_s: f64, end_s: f64 },
    RegistryRevision { revision: u64, clips: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Manifest(m) => write!(f, "manifest: {m}"),
            Violation::ClipCount { expected, actual } => {
                write!(f, "expected {expected} clips, found {actual}")
            }
            Violation::ClipIndex { position, index } => {
                write!(f, "clip at position {position} has index {index}")
            }
            Violation::EmptyInterval { clip } => write!(f, "clip {clip} has an empty interval"),
            Violation::IntervalMisaligned { clip, start_s, end_s, expected_start_s, expected_end_s } => write!(
                f,
                "clip {clip} spans [{start_s}, {end_s}), expected [{expected_start_s}, {expected_end_s})"
            ),
            Violation::Overlap { first, second } => write!(f, "clips {first} and {second} overlap"),
            Violation::Gap { first, second } => {
                write!(f, "gap between clips {first} and {second}")
            }
            Violation::EmptyCaption { clip } => write!(f, "clip {clip} has an empty caption"),
            Violation::EmbeddingDim { clip, expected, actual } => {
                write!(f, "clip {clip} embedding has {actual} entries, expected {expected}")
            }
            Violation::NonFiniteEmbedding { clip } => {
                write!(f, "clip {clip} embedding has non-finite values")
            }
            Violation::FrameOutsideInterval { clip, image_path, timestamp_s } => write!(
                f,
                "frame {image_path} at {timestamp_s}s lies outside clip {clip}"
            ),
            Violation::FrameOrder { clip, image_path } => {
                write!(f, "frame {image_path} in clip {clip} is out of order")
            }
            Violation::FrameMissing { clip, image_path } => {
                write!(f, "frame {image_path} of clip {clip} is missing")
            }
            Violation::FrameTooLarge { clip, image_path, width_px, height_px } => write!(
                f,
                "frame {image_path} of clip {clip} is {width_px}x{height_px}, above the resize target"
            ),
            Violation::DuplicateSubject { name } => write!(f, "duplicate subject {name:?}"),
            Violation::SubjectSpan { name, start_s, end_s } => {
                write!(f, "subject {name:?} has invalid span [{start_s}, {end_s})")
            }
            Violation::RegistryRevision { revision, clips } => {
                write!(f, "registry revision {revision} exceeds {clips} clips")
            }
        }
    }
}

/// Every violation found; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Check every database invariant. Frame files are only checked when the
/// database has a root.
pub fn validate(db: &VideoDatabase) -> ValidationReport {
    let mut out = Vec::new();
    let m = &db.manifest;
    if !(m.clip_len_s > 0.0) {
        out.push(Violation::Manifest(format!("clip_len_s must be > 0, got {}", m.clip_len_s)));
    }
    if !(m.decode_fps > 0.0) {
        out.push(Violation::Manifest(format!("decode_fps must be > 0, got {}", m.decode_fps)));
    }
    if m.embedding_dim == 0 {
        out.push(Violation::Manifest("embedding_dim must be > 0".into()));
    }
    if !(m.duration_s > 0.0) {
        out.push(Violation::Manifest(format!("duration_s must be > 0, got {}", m.duration_s)));
    }
    if !out.is_empty() {
        return ValidationReport { violations: out };
    }

    match crate::ingest::segment(m.duration_s, m.clip_len_s) {
        Ok(expected) => {
            if expected.len() != db.clips.len() {
                out.push(Violation::ClipCount { expected: expected.len(), actual: db.clips.len() });
            }
            for (clip, want) in db.clips.iter().zip(&expected) {
                let iv = clip.interval;
                if iv.start_s != want.start_s || iv.end_s != want.end_s {
                    out.push(Violation::IntervalMisaligned {
                        clip: iv.index,
                        start_s: iv.start_s,
                        end_s: iv.end_s,
                        expected_start_s: want.start_s,
                        expected_end_s: want.end_s,
                    });
                }
            }
        }
        Err(e) => out.push(Violation::Manifest(e.to_string())),
    }

    for (pos, clip) in db.clips.iter().enumerate() {
        let iv = clip.interval;
        if iv.index != pos {
            out.push(Violation::ClipIndex { position: pos, index: iv.index });
        }
        if !(iv.end_s > iv.start_s) {
            out.push(Violation::EmptyInterval { clip: iv.index });
        }
        if clip.caption.trim().is_empty() {
            out.push(Violation::EmptyCaption { clip: iv.index });
        }
        if clip.embedding.len() != m.embedding_dim {
            out.push(Violation::EmbeddingDim {
                clip: iv.index,
                expected: m.embedding_dim,
                actual: clip.embedding.len(),
            });
        }
        if clip.embedding.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteEmbedding { clip: iv.index });
        }
        let mut prev: Option<f64> = None;
        for frame in &clip.frame_refs {
            if !iv.contains(frame.timestamp_s) {
                out.push(Violation::FrameOutsideInterval {
                    clip: iv.index,
                    image_path: frame.image_path.clone(),
                    timestamp_s: frame.timestamp_s,
                });
            }
            if prev.is_some_and(|p| frame.timestamp_s <= p) {
                out.push(Violation::FrameOrder { clip: iv.index, image_path: frame.image_path.clone() });
            }
            prev = Some(frame.timestamp_s);
            if frame.width_px.min(frame.height_px) > m.resize_shorter_side_px {
                out.push(Violation::FrameTooLarge {
                    clip: iv.index,
                    image_path: frame.image_path.clone(),
                    width_px: frame.width_px,
                    height_px: frame.height_px,
                });
            }
            if let Some(path) = db.frame_path(frame) {
                if !path.is_file() {
                    out.push(Violation::FrameMissing { clip: iv.index, image_path: frame.image_path.clone() });
                }
            }
        }
    }

    for pair in db.clips.windows(2) {
        let (a, b) = (pair[0].interval, pair[1].interval);
        if b.start_s < a.end_s {
            out.push(Violation::Overlap { first: a.index, second: b.index });
        } else if b.start_s > a.end_s {
            out.push(Violation::Gap { first: a.index, second: b.index });
        }
    }

    let mut names = HashSet::new();
    for subject in &db.registry.subjects {
        if !names.insert(subject.name.as_str()) {
            out.push(Violation::DuplicateSubject { name: subject.name.clone() });
        }
        for &(s, e) in &subject.time_spans {
            if !(s < e) || s < 0.0 || e > m.duration_s {
                out.push(Violation::SubjectSpan { name: subject.name.clone(), start_s: s, end_s: e });
            }
        }
    }
    if db.registry.revision > db.clips.len() as u64 {
        out.push(Violation::RegistryRevision { revision: db.registry.revision, clips: db.clips.len() });
    }

    ValidationReport { violations: out }
}
