use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::video_store::ClipInterval;

/// One timed transcript (ASR) segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

/// Load a JSON array of segments, sorted by start time.
pub fn load_transcript(path: &Path) -> Result<Vec<TranscriptSegment>, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let mut segs: Vec<TranscriptSegment> = serde_json::from_slice(&bytes)
        .map_err(|e| IngestError::InvalidArgument(format!("transcript {}: {e}", path.display())))?;
    for s in &segs {
        if !(s.start_s.is_finite() && s.end_s.is_finite() && s.start_s < s.end_s) {
            return Err(IngestError::InvalidArgument(format!(
                "transcript {}: bad segment [{}, {})",
                path.display(),
                s.start_s,
                s.end_s
            )));
        }
    }
    segs.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Ok(segs)
}

/// Text of every segment overlapping the clip, space-joined. `None` when
/// nothing overlaps.
pub fn merge_transcript(segments: &[TranscriptSegment], clip: &ClipInterval) -> Option<String> {
    let parts: Vec<&str> = segments
        .iter()
        .filter(|s| s.start_s < clip.end_s && s.end_s > clip.start_s)
        .map(|s| s.text.trim())
        .filter(|t| !t.is_empty())
        .collect();
    if parts.is_empty() {
        None
    } else {
        Some(parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: f64, b: f64, t: &str) -> TranscriptSegment {
        TranscriptSegment { start_s: a, end_s: b, text: t.into() }
    }

    #[test]
    fn overlap_is_strict() {
        let segs = vec![seg(0.0, 5.0, "hello"), seg(4.0, 6.0, "there"), seg(10.0, 11.0, "later")];
        let clip = ClipInterval { index: 1, start_s: 5.0, end_s: 10.0 };
        assert_eq!(merge_transcript(&segs, &clip).as_deref(), Some("there"));
        let first = ClipInterval { index: 0, start_s: 0.0, end_s: 5.0 };
        assert_eq!(merge_transcript(&segs, &first).as_deref(), Some("hello there"));
        let none = ClipInterval { index: 2, start_s: 6.0, end_s: 10.0 };
        assert_eq!(merge_transcript(&segs, &none), None);
    }

    #[test]
    fn load_sorts_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        fs::write(&p, r#"[{"start_s":3,"end_s":4,"text":"b"},{"start_s":0,"end_s":1,"text":"a"}]"#).unwrap();
        let segs = load_transcript(&p).unwrap();
        assert_eq!(segs[0].text, "a");
        fs::write(&p, r#"[{"start_s":3,"end_s":3,"text":"b"}]"#).unwrap();
        assert!(load_transcript(&p).is_err());
    }
}
