use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model_gateway::{ChatModel, Message, ModelRequest};
use crate::video_store::{resolve, ClipInterval, FrameRef, SubjectEntry, SubjectRegistry};

pub const CAPTION_PROMPT: &str = include_str!("../../prompts/caption_v1.txt");

/// Caption stored for a clip whose model output never parsed.
pub const CAPTION_FALLBACK: &str = "[caption unavailable]";

const DELTA_FENCE: &str = "```registry_delta";

/// Output of one captioning step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionStepResult {
    pub caption: String,
    pub new_subjects: Vec<SubjectEntry>,
    pub updated_subjects: Vec<SubjectEntry>,
}

impl CaptionStepResult {
    pub fn fallback() -> Self {
        CaptionStepResult { caption: CAPTION_FALLBACK.into(), ..Default::default() }
    }
}

#[derive(Debug, Default, Deserialize)]
struct RegistryDelta {
    #[serde(default)]
    new_subjects: Vec<SubjectEntry>,
    #[serde(default)]
    updated_subjects: Vec<SubjectEntry>,
}

/// Split model output into caption text and registry delta.
///
/// A missing delta block means "no registry change". An unterminated block,
/// invalid JSON, an empty caption, or a new subject whose name is empty or
/// already registered is malformed. Updates naming unknown subjects are
/// treated as new subjects.
pub fn parse_caption_output(text: &str, registry: &SubjectRegistry) -> Result<CaptionStepResult, String> {
    let (caption_part, delta) = match text.find(DELTA_FENCE) {
        None => (text, RegistryDelta::default()),
        Some(at) => {
            let body = &text[at + DELTA_FENCE.len()..];
            let end = body.find("```").ok_or("unterminated registry_delta block")?;
            let delta: RegistryDelta =
                serde_json::from_str(body[..end].trim()).map_err(|e| format!("registry_delta: {e}"))?;
            (&text[..at], delta)
        }
    };
    let mut caption = caption_part.trim();
    if caption.len() >= 8 && caption[..8].eq_ignore_ascii_case("caption:") {
        caption = caption[8..].trim();
    }
    if caption.is_empty() {
        return Err("empty caption".into());
    }

    let mut new_subjects: Vec<SubjectEntry> = Vec::new();
    let mut updated_subjects: Vec<SubjectEntry> = Vec::new();
    for s in delta.new_subjects {
        let name = s.name.trim();
        if name.is_empty() {
            return Err("new subject without a name".into());
        }
        if registry.contains(name) || new_subjects.iter().any(|n| n.name == name) {
            return Err(format!("new subject {name:?} already exists"));
        }
        new_subjects.push(SubjectEntry { name: name.to_string(), ..s });
    }
    for s in delta.updated_subjects {
        let name = s.name.trim().to_string();
        if name.is_empty() {
            continue;
        }
        if registry.contains(&name) {
            updated_subjects.push(SubjectEntry { name, ..s });
        } else if !new_subjects.iter().any(|n| n.name == name) {
            new_subjects.push(SubjectEntry { name, ..s });
        }
    }
    Ok(CaptionStepResult { caption: caption.to_string(), new_subjects, updated_subjects })
}

fn push_span(spans: &mut Vec<(f64, f64)>, interval: &ClipInterval) {
    match spans.last_mut() {
        Some(last) if last.1 == interval.start_s => last.1 = interval.end_s,
        Some(last) if last.1 >= interval.end_s => {}
        _ => spans.push((interval.start_s, interval.end_s)),
    }
}

/// `S_i` from `S_{i-1}` and one step's delta. Subjects are never removed;
/// every subject mentioned gets the clip's interval added to its spans.
pub fn apply_delta(registry: &SubjectRegistry, step: &CaptionStepResult, interval: &ClipInterval) -> SubjectRegistry {
    let mut next = registry.clone();
    for update in &step.updated_subjects {
        if let Some(entry) = next.subjects.iter_mut().find(|s| s.name == update.name) {
            if !update.appearance.trim().is_empty() {
                entry.appearance = update.appearance.clone();
            }
            if !update.identity.trim().is_empty() {
                entry.identity = update.identity.clone();
            }
            for action in &update.actions {
                if !entry.actions.contains(action) {
                    entry.actions.push(action.clone());
                }
            }
            push_span(&mut entry.time_spans, interval);
        }
    }
    for new in &step.new_subjects {
        if next.contains(&new.name) {
            continue;
        }
        next.subjects.push(SubjectEntry {
            time_spans: vec![(interval.start_s, interval.end_s)],
            ..new.clone()
        });
    }
    next.revision += 1;
    next
}

fn caption_request(
    backend_id: &str,
    frames: &[FrameRef],
    root: &Path,
    interval: &ClipInterval,
    registry: &SubjectRegistry,
) -> ModelRequest {
    let registry_json = serde_json::to_string(registry).expect("registry serializes");
    let user = format!(
        "Clip {}: {:.1}s to {:.1}s, {} frames.\nCurrent subject registry:\n```registry\n{registry_json}\n```",
        interval.index,
        interval.start_s,
        interval.end_s,
        frames.len()
    );
    let images = frames.iter().map(|f| resolve(root, &f.image_path)).collect();
    let mut req = ModelRequest::new(backend_id, vec![Message::system(CAPTION_PROMPT), Message::user(user)])
        .with_images(images);
    req.max_output_tokens = 1024;
    req
}

/// One `S_i, c_i = VLM(f_i, S_{i-1})` step. Unparseable output is retried up
/// to `retries` more times before surfacing as malformed.
pub fn caption_clip(
    frames: &[FrameRef],
    root: &Path,
    interval: &ClipInterval,
    registry: &SubjectRegistry,
    vlm: &dyn ChatModel,
    retries: u32,
) -> Result<CaptionStepResult, IngestError> {
    if frames.is_empty() {
        return Err(IngestError::InvalidArgument(format!("clip {} has no frames", interval.index)));
    }
    let req = caption_request(vlm.id(), frames, root, interval, registry);
    let attempts = retries + 1;
    let mut last_problem = String::new();
    for attempt in 1..=attempts {
        let response = vlm.complete(&req)?;
        match parse_caption_output(&response.text, registry) {
            Ok(step) => return Ok(step),
            Err(problem) => {
                tracing::debug!(clip = interval.index, attempt, %problem, "unparseable caption output");
                last_problem = problem;
            }
        }
    }
    Err(IngestError::MalformedOutput { attempts, detail: last_problem })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::ScriptedChat;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn iv(index: usize, start_s: f64, end_s: f64) -> ClipInterval {
        ClipInterval { index, start_s, end_s }
    }

    fn frame() -> FrameRef {
        FrameRef { timestamp_s: 0.0, image_path: "frames/0/0.jpg".into(), width_px: 4, height_px: 4 }
    }

    fn registry_with(names: &[&str]) -> SubjectRegistry {
        SubjectRegistry {
            subjects: names
                .iter()
                .map(|n| SubjectEntry { name: n.to_string(), time_spans: vec![(0.0, 5.0)], ..Default::default() })
                .collect(),
            revision: 1,
        }
    }

    #[test]
    fn plain_text_is_caption_without_delta() {
        let step = parse_caption_output("empty scene", &SubjectRegistry::default()).unwrap();
        assert_eq!(step.caption, "empty scene");
        assert!(step.new_subjects.is_empty() && step.updated_subjects.is_empty());
    }

    #[test]
    fn delta_block_is_parsed() {
        let text = "Caption: A man in a red coat walks in.\n```registry_delta\n{\"new_subjects\":[{\"name\":\"man in red\",\"appearance\":\"red coat\",\"identity\":\"adult\",\"actions\":[\"walks\"]}],\"updated_subjects\":[{\"name\":\"dog\",\"actions\":[\"barks\"]}]}\n```";
        let step = parse_caption_output(text, &registry_with(&["dog"])).unwrap();
        assert_eq!(step.caption, "A man in a red coat walks in.");
        assert_eq!(step.new_subjects[0].name, "man in red");
        assert_eq!(step.updated_subjects[0].actions, vec!["barks".to_string()]);
    }

    #[test]
    fn malformed_outputs() {
        let reg = registry_with(&["dog"]);
        assert!(parse_caption_output("Caption: x\n```registry_delta\n{not json}\n```", &reg).is_err());
        assert!(parse_caption_output("Caption: x\n```registry_delta\n{}", &reg).is_err());
        assert!(parse_caption_output("Caption:   \n```registry_delta\n{}\n```", &reg).is_err());
        assert!(parse_caption_output("x\n```registry_delta\n{\"new_subjects\":[{\"name\":\"dog\"}]}\n```", &reg).is_err());
    }

    #[test]
    fn unknown_update_becomes_new() {
        let step = parse_caption_output(
            "c\n```registry_delta\n{\"updated_subjects\":[{\"name\":\"cat\"}]}\n```",
            &registry_with(&["dog"]),
        )
        .unwrap();
        assert_eq!(step.new_subjects.len(), 1);
        assert!(step.updated_subjects.is_empty());
    }

    #[test]
    fn apply_delta_is_monotone_and_merges_spans() {
        let reg = registry_with(&["dog"]);
        let step = CaptionStepResult {
            caption: "c".into(),
            new_subjects: vec![SubjectEntry { name: "cat".into(), ..Default::default() }],
            updated_subjects: vec![SubjectEntry { name: "dog".into(), actions: vec!["sits".into()], ..Default::default() }],
        };
        let next = apply_delta(&reg, &step, &iv(1, 5.0, 10.0));
        assert_eq!(next.revision, 2);
        assert_eq!(next.subjects.len(), 2);
        assert_eq!(next.get("dog").unwrap().time_spans, vec![(0.0, 10.0)]);
        assert_eq!(next.get("cat").unwrap().time_spans, vec![(5.0, 10.0)]);
        let later = apply_delta(&next, &CaptionStepResult { caption: "c".into(), updated_subjects: vec![SubjectEntry { name: "cat".into(), ..Default::default() }], ..Default::default() }, &iv(3, 15.0, 20.0));
        assert_eq!(later.get("cat").unwrap().time_spans, vec![(5.0, 10.0), (15.0, 20.0)]);
    }

    #[test]
    fn stub_passthrough_caption() {
        let vlm = ScriptedChat::fixed("vlm", "empty scene");
        let step = caption_clip(&[frame()], Path::new("/tmp"), &iv(0, 0.0, 5.0), &SubjectRegistry::default(), &vlm, 2).unwrap();
        assert_eq!(step.caption, "empty scene");
        assert!(step.new_subjects.is_empty());
    }

    struct Counting {
        calls: AtomicU32,
    }
    impl ChatModel for Counting {
        fn id(&self) -> &str {
            "vlm"
        }
        fn complete(&self, _: &ModelRequest) -> Result<crate::model_gateway::ModelResponse, crate::model_gateway::ModelError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(crate::model_gateway::ModelResponse::text("x\n```registry_delta\n[[[\n```"))
        }
    }

    #[test]
    fn unparseable_delta_is_retried_then_surfaced() {
        let vlm = Counting { calls: AtomicU32::new(0) };
        let err = caption_clip(&[frame()], Path::new("/tmp"), &iv(0, 0.0, 5.0), &SubjectRegistry::default(), &vlm, 1).unwrap_err();
        assert!(matches!(err, IngestError::MalformedOutput { attempts: 2, .. }));
        assert_eq!(vlm.calls.load(Ordering::SeqCst), 2);
    }

    struct FlakyOnce {
        calls: AtomicU32,
    }
    impl ChatModel for FlakyOnce {
        fn id(&self) -> &str {
            "vlm"
        }
        fn complete(&self, _: &ModelRequest) -> Result<crate::model_gateway::ModelResponse, crate::model_gateway::ModelError> {
            let text = if self.calls.fetch_add(1, Ordering::SeqCst) == 0 { "```registry_delta\n{oops}\n```" } else { "Caption: fine" };
            Ok(crate::model_gateway::ModelResponse::text(text))
        }
    }

    #[test]
    fn recovers_on_retry() {
        let vlm = FlakyOnce { calls: AtomicU32::new(0) };
        let step = caption_clip(&[frame()], Path::new("/tmp"), &iv(0, 0.0, 5.0), &SubjectRegistry::default(), &vlm, 2).unwrap();
        assert_eq!(step.caption, "fine");
        assert_eq!(vlm.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn no_frames_is_invalid() {
        let vlm = ScriptedChat::fixed("vlm", "x");
        assert!(matches!(
            caption_clip(&[], Path::new("/tmp"), &iv(0, 0.0, 5.0), &SubjectRegistry::default(), &vlm, 2),
            Err(IngestError::InvalidArgument(_))
        ));
    }
}
