use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::caption::{apply_delta, caption_clip, CaptionStepResult};
use super::decoder::{decode_frames, FrameDecoder};
use super::transcript::{load_transcript, merge_transcript};
use super::{segment, IngestError};
use crate::model_gateway::{ChatModel, Embedder, ModelError};
use crate::video_store::{
    self, has_manifest, retrieval_text, ClipInterval, ClipRecord, DatabaseManifest, FrameRef,
    SubjectRegistry, VideoDatabase, SCHEMA_VERSION,
};

const CHECKPOINT_DIR: &str = ".checkpoint";
const EMBED_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub clip_len_s: f64,
    pub decode_fps: f64,
    pub resize_shorter_side_px: u32,
    pub transcript_path: Option<PathBuf>,
    pub caption_backend_id: String,
    pub embed_backend_id: String,
    /// Extra attempts after an unparseable caption before the fallback is used.
    pub caption_retries: u32,
    /// Defaults to the source file stem.
    pub video_id: Option<String>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            clip_len_s: 5.0,
            decode_fps: 2.0,
            resize_shorter_side_px: 720,
            transcript_path: None,
            caption_backend_id: "vlm".into(),
            embed_backend_id: "embed".into(),
            caption_retries: 2,
            video_id: None,
        }
    }
}

impl IngestConfig {
    fn check(&self) -> Result<(), IngestError> {
        if !(self.clip_len_s.is_finite() && self.clip_len_s > 0.0) {
            return Err(IngestError::InvalidArgument(format!("clip_len_s must be > 0, got {}", self.clip_len_s)));
        }
        if !(self.decode_fps.is_finite() && self.decode_fps > 0.0) {
            return Err(IngestError::InvalidArgument(format!("decode_fps must be > 0, got {}", self.decode_fps)));
        }
        Ok(())
    }
}

pub struct IngestBackends {
    pub decoder: Arc<dyn FrameDecoder>,
    pub vlm: Arc<dyn ChatModel>,
    pub embedder: Arc<dyn Embedder>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuildEvent {
    Started { clips: usize, resume_from: usize },
    Decoded { index: usize, frames: usize },
    Captioned { index: usize, fallback: bool },
    Embedded { clips: usize },
    Saved { root: PathBuf },
}

type EventSink = Box<dyn Fn(&BuildEvent) + Send + Sync>;

/// Embed one caption (plus transcript) into a `dim`-vector.
pub fn embed_caption(caption: &str, embedder: &dyn Embedder) -> Result<Vec<f32>, IngestError> {
    if caption.trim().is_empty() {
        return Err(IngestError::InvalidArgument("empty caption".into()));
    }
    let mut out = embedder.embed(&[caption.to_string()])?;
    let v = out.pop().ok_or_else(|| ModelError::BadResponse("no embedding returned".into()))?;
    check_vector(&v, embedder.dim())?;
    Ok(v)
}

fn check_vector(v: &[f32], dim: usize) -> Result<(), IngestError> {
    if v.len() != dim {
        return Err(ModelError::BadResponse(format!("embedding has {} entries, expected {dim}", v.len())).into());
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::BadResponse("embedding has non-finite entries".into()).into());
    }
    Ok(())
}

/// What a checkpoint was produced from; a mismatch discards it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    source_path: String,
    duration_s: f64,
    clip_len_s: f64,
    decode_fps: f64,
    resize_shorter_side_px: u32,
    caption_model_id: String,
}

/// One completed caption step.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProgressLine {
    index: usize,
    frames: Vec<FrameRef>,
    step: CaptionStepResult,
}

struct Checkpoint {
    dir: PathBuf,
}

impl Checkpoint {
    fn meta_path(&self) -> PathBuf {
        self.dir.join("meta.json")
    }

    fn progress_path(&self) -> PathBuf {
        self.dir.join("progress.jsonl")
    }

    /// Completed steps `0..k`, or nothing when the checkpoint is absent or stale.
    fn load(&self, meta: &CheckpointMeta) -> Vec<ProgressLine> {
        let stored: Option<CheckpointMeta> = fs::read(self.meta_path())
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        if stored.as_ref() != Some(meta) {
            return Vec::new();
        }
        let Ok(f) = fs::File::open(self.progress_path()) else {
            return Vec::new();
        };
        let mut lines = Vec::new();
        for line in BufReader::new(f).lines() {
            // a torn final line from a crash ends the usable prefix
            let Some(rec) = line.ok().and_then(|l| serde_json::from_str::<ProgressLine>(&l).ok()) else {
                break;
            };
            if rec.index != lines.len() {
                break;
            }
            lines.push(rec);
        }
        lines
    }

    fn reset(&self, meta: &CheckpointMeta, kept: &[ProgressLine]) -> Result<(), IngestError> {
        fs::create_dir_all(&self.dir).map_err(|e| IngestError::io(&self.dir, e))?;
        let meta_bytes = serde_json::to_vec_pretty(meta).expect("serializable");
        video_store::write_atomic_bytes(&self.meta_path(), &meta_bytes)?;
        let mut body = Vec::new();
        for line in kept {
            serde_json::to_writer(&mut body, line).expect("serializable");
            body.push(b'\n');
        }
        video_store::write_atomic_bytes(&self.progress_path(), &body)?;
        Ok(())
    }

    fn append(&self, line: &ProgressLine) -> Result<(), IngestError> {
        let path = self.progress_path();
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| IngestError::io(&path, e))?;
        let mut bytes = serde_json::to_vec(line).expect("serializable");
        bytes.push(b'\n');
        f.write_all(&bytes).map_err(|e| IngestError::io(&path, e))?;
        f.sync_data().map_err(|e| IngestError::io(&path, e))
    }

    fn remove(&self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

/// Runs the ingest pipeline into an output directory.
pub struct DatabaseBuilder {
    cfg: IngestConfig,
    backends: IngestBackends,
    events: Option<EventSink>,
    cancel: Arc<AtomicBool>,
}

impl DatabaseBuilder {
    pub fn new(cfg: IngestConfig, backends: IngestBackends) -> Self {
        DatabaseBuilder { cfg, backends, events: None, cancel: Arc::new(AtomicBool::new(false)) }
    }

    pub fn on_event(mut self, f: impl Fn(&BuildEvent) + Send + Sync + 'static) -> Self {
        self.events = Some(Box::new(f));
        self
    }

    /// Flag checked before every caption step; setting it stops the build with
    /// [`IngestError::Interrupted`], leaving the checkpoint for a rerun.
    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        self.cancel.clone()
    }

    pub fn with_cancel_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = flag;
        self
    }

    fn emit(&self, ev: BuildEvent) {
        if let Some(f) = &self.events {
            f(&ev);
        }
    }

    /// Build the database for `source` under `root`, resuming from a
    /// checkpoint there if one matches. An already complete database with the
    /// same settings is returned as is.
    pub fn build(&self, source: &Path, root: &Path) -> Result<VideoDatabase, IngestError> {
        self.cfg.check()?;
        let source_path = source.to_string_lossy().into_owned();
        if has_manifest(root) {
            let db = video_store::open(root)?;
            let m = &db.manifest;
            if m.source_path == source_path
                && m.clip_len_s == self.cfg.clip_len_s
                && m.decode_fps == self.cfg.decode_fps
                && m.resize_shorter_side_px == self.cfg.resize_shorter_side_px
            {
                return Ok(db);
            }
            return Err(IngestError::InvalidArgument(format!(
                "{} already holds a database built with different settings",
                root.display()
            )));
        }

        let transcript = match &self.cfg.transcript_path {
            Some(p) => Some(load_transcript(p)?),
            None => None,
        };
        let duration_s = self.backends.decoder.probe_duration(source)?;
        let intervals = segment(duration_s, self.cfg.clip_len_s)?;
        fs::create_dir_all(root).map_err(|e| IngestError::io(root, e))?;

        let meta = CheckpointMeta {
            source_path: source_path.clone(),
            duration_s,
            clip_len_s: self.cfg.clip_len_s,
            decode_fps: self.cfg.decode_fps,
            resize_shorter_side_px: self.cfg.resize_shorter_side_px,
            caption_model_id: self.backends.vlm.id().to_string(),
        };
        let checkpoint = Checkpoint { dir: root.join(CHECKPOINT_DIR) };
        let mut done = checkpoint.load(&meta);
        done.truncate(intervals.len());
        checkpoint.reset(&meta, &done)?;
        let resume_from = done.len();
        self.emit(BuildEvent::Started { clips: intervals.len(), resume_from });
        if resume_from > 0 {
            tracing::info!(resume_from, "resuming from checkpoint");
        }

        let remaining = &intervals[resume_from..];
        let decoded: Vec<Vec<FrameRef>> = remaining
            .par_iter()
            .map(|iv| {
                let frames = decode_frames(
                    self.backends.decoder.as_ref(),
                    source,
                    iv,
                    self.cfg.decode_fps,
                    self.cfg.resize_shorter_side_px,
                    root,
                )
                .map_err(|e| e.at_clip(iv.index))?;
                if frames.is_empty() {
                    return Err(IngestError::Decode("decoder produced no frames".into()).at_clip(iv.index));
                }
                self.emit(BuildEvent::Decoded { index: iv.index, frames: frames.len() });
                Ok(frames)
            })
            .collect::<Result<_, _>>()?;
        let _ = fs::remove_dir_all(root.join(".decode"));

        let mut registry = SubjectRegistry::default();
        for line in &done {
            registry = apply_delta(&registry, &line.step, &intervals[line.index]);
        }
        for (iv, frames) in remaining.iter().zip(decoded) {
            if self.cancel.load(Ordering::SeqCst) {
                return Err(IngestError::Interrupted { next_clip: iv.index });
            }
            let (step, fallback) = self.caption_step(&frames, root, iv, &registry)?;
            registry = apply_delta(&registry, &step, iv);
            let line = ProgressLine { index: iv.index, frames, step };
            checkpoint.append(&line)?;
            done.push(line);
            self.emit(BuildEvent::Captioned { index: iv.index, fallback });
        }

        let mut clips: Vec<ClipRecord> = done
            .into_iter()
            .map(|line| {
                let interval = intervals[line.index].clone();
                let transcript_text = transcript.as_deref().and_then(|t| merge_transcript(t, &interval));
                ClipRecord {
                    interval,
                    caption: line.step.caption,
                    embedding: Vec::new(),
                    frame_refs: line.frames,
                    transcript_text,
                }
            })
            .collect();
        self.embed_all(&mut clips)?;
        self.emit(BuildEvent::Embedded { clips: clips.len() });

        let video_id = self.cfg.video_id.clone().unwrap_or_else(|| {
            let name = source.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.split('.').next().unwrap_or_default().to_string()
        });
        let db = VideoDatabase {
            manifest: DatabaseManifest {
                video_id,
                source_path,
                duration_s,
                clip_len_s: self.cfg.clip_len_s,
                decode_fps: self.cfg.decode_fps,
                resize_shorter_side_px: self.cfg.resize_shorter_side_px,
                embedding_dim: self.backends.embedder.dim(),
                embedding_model_id: self.backends.embedder.id().to_string(),
                caption_model_id: self.backends.vlm.id().to_string(),
                schema_version: SCHEMA_VERSION,
                clip_count: intervals.len(),
                embeddings_sha256: String::new(),
            },
            registry,
            clips,
            root: Some(root.to_path_buf()),
        };
        video_store::save(&db, root)?;
        checkpoint.remove();
        self.emit(BuildEvent::Saved { root: root.to_path_buf() });
        Ok(video_store::open(root)?)
    }

    /// Caption one clip, substituting the fallback for malformed or blocked
    /// output so a single clip cannot abort the build.
    fn caption_step(
        &self,
        frames: &[FrameRef],
        root: &Path,
        iv: &ClipInterval,
        registry: &SubjectRegistry,
    ) -> Result<(CaptionStepResult, bool), IngestError> {
        match caption_clip(frames, root, iv, registry, self.backends.vlm.as_ref(), self.cfg.caption_retries) {
            Ok(step) => Ok((step, false)),
            Err(IngestError::MalformedOutput { attempts, detail }) => {
                tracing::warn!(clip = iv.index, attempts, %detail, "caption unusable, storing fallback");
                Ok((CaptionStepResult::fallback(), true))
            }
            Err(IngestError::Backend(ModelError::ContentFiltered(msg))) => {
                tracing::warn!(clip = iv.index, %msg, "caption request blocked, storing fallback");
                Ok((CaptionStepResult::fallback(), true))
            }
            Err(e) => Err(e.at_clip(iv.index)),
        }
    }

    fn embed_all(&self, clips: &mut [ClipRecord]) -> Result<(), IngestError> {
        let dim = self.backends.embedder.dim();
        let embedder = self.backends.embedder.as_ref();
        let vectors: Vec<Vec<Vec<f32>>> = clips
            .par_chunks(EMBED_BATCH)
            .map(|chunk| {
                let first = chunk[0].interval.index;
                let texts: Vec<String> = chunk
                    .iter()
                    .map(|c| retrieval_text(&c.caption, c.transcript_text.as_deref()))
                    .collect();
                let out = embedder.embed(&texts).map_err(|e| IngestError::from(e).at_clip(first))?;
                if out.len() != texts.len() {
                    let e = ModelError::BadResponse(format!("{} embeddings for {} texts", out.len(), texts.len()));
                    return Err(IngestError::from(e).at_clip(first));
                }
                for (c, v) in chunk.iter().zip(&out) {
                    check_vector(v, dim).map_err(|e| e.at_clip(c.interval.index))?;
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;
        for (clip, v) in clips.iter_mut().zip(vectors.into_iter().flatten()) {
            clip.embedding = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic::{SyntheticDecoder, SyntheticScene, SyntheticVideo};
    use crate::ingest::transcript::TranscriptSegment;
    use crate::model_gateway::{hash_projection, HashEmbedder, PaletteVision, ScriptedChat};
    use std::sync::atomic::AtomicUsize;

    fn video(dir: &Path, duration: f64) -> PathBuf {
        let v = SyntheticVideo::new(
            32,
            18,
            duration,
            vec![
                SyntheticScene::new(0.0, 20.0, [220, 30, 30], "red"),
                SyntheticScene::new(20.0, 40.0, [30, 60, 220], "blue"),
                SyntheticScene::new(40.0, 60.0, [30, 160, 60], "green"),
            ],
        );
        let p = dir.join("v.synthvid.json");
        fs::write(&p, serde_json::to_vec(&v).unwrap()).unwrap();
        p
    }

    fn backends() -> IngestBackends {
        IngestBackends {
            decoder: Arc::new(SyntheticDecoder),
            vlm: Arc::new(PaletteVision::new("palette")),
            embedder: Arc::new(HashEmbedder::new("hash", 32)),
        }
    }

    #[test]
    fn embed_caption_contract() {
        let e = HashEmbedder::new("hash", 8);
        assert_eq!(embed_caption("abc", &e).unwrap(), hash_projection("abc", 8));
        assert_eq!(embed_caption("same", &e).unwrap(), embed_caption("same", &e).unwrap());
        assert!(matches!(embed_caption("  ", &e), Err(IngestError::InvalidArgument(_))));
    }

    #[test]
    fn sixty_seconds_gives_twelve_clips() {
        let dir = tempfile::tempdir().unwrap();
        let src = video(dir.path(), 60.0);
        let out = dir.path().join("db");
        let db = DatabaseBuilder::new(IngestConfig::default(), backends()).build(&src, &out).unwrap();
        assert_eq!(db.clips.len(), 12);
        assert!(db.clips.iter().all(|c| !c.caption.is_empty() && c.embedding.len() == 32));
        assert_eq!(db.registry.revision, 12);
        assert!(video_store::validate(&db).is_empty());
        assert!(!out.join(CHECKPOINT_DIR).exists());
        let names: Vec<&str> = db.registry.subjects.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["red object", "blue object", "green object"]);
        assert_eq!(db.registry.get("red object").unwrap().time_spans, vec![(0.0, 20.0)]);
        let total: usize = db.clips.iter().map(|c| c.frame_refs.len()).sum();
        assert_eq!(total, 120);
        for c in &db.clips {
            for f in &c.frame_refs {
                assert_eq!(db.clip_at(f.timestamp_s).unwrap().interval.index, c.interval.index);
            }
        }
    }

    #[test]
    fn interrupted_build_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let src = video(dir.path(), 60.0);
        let full = dir.path().join("full");
        let reference = DatabaseBuilder::new(IngestConfig::default(), backends()).build(&src, &full).unwrap();

        let partial = dir.path().join("partial");
        let b = DatabaseBuilder::new(IngestConfig::default(), backends());
        let flag = b.cancel_flag();
        let b = b.on_event(move |ev| {
            if matches!(ev, BuildEvent::Captioned { index: 6, .. }) {
                flag.store(true, Ordering::SeqCst);
            }
        });
        let err = b.build(&src, &partial).unwrap_err();
        assert!(matches!(err, IngestError::Interrupted { next_clip: 7 }));

        let resumed_from = Arc::new(AtomicUsize::new(usize::MAX));
        let seen = resumed_from.clone();
        let db = DatabaseBuilder::new(IngestConfig::default(), backends())
            .on_event(move |ev| {
                if let BuildEvent::Started { resume_from, .. } = ev {
                    seen.store(*resume_from, Ordering::SeqCst);
                }
            })
            .build(&src, &partial)
            .unwrap();
        assert_eq!(resumed_from.load(Ordering::SeqCst), 7);
        assert_eq!(db, reference);
        for f in ["manifest.json", "registry.json", "captions.jsonl", "embeddings.f32"] {
            assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(partial.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn transcript_enriches_overlapped_clips() {
        let dir = tempfile::tempdir().unwrap();
        let src = video(dir.path(), 60.0);
        let tp = dir.path().join("t.json");
        let segs = vec![
            TranscriptSegment { start_s: 3.0, end_s: 7.0, text: "hello".into() },
            TranscriptSegment { start_s: 31.0, end_s: 32.0, text: "world".into() },
        ];
        fs::write(&tp, serde_json::to_vec(&segs).unwrap()).unwrap();
        let cfg = IngestConfig { transcript_path: Some(tp), ..Default::default() };
        let db = DatabaseBuilder::new(cfg, backends()).build(&src, &dir.path().join("db")).unwrap();
        let with: Vec<usize> = db.clips.iter().filter(|c| c.transcript_text.is_some()).map(|c| c.interval.index).collect();
        assert_eq!(with, vec![0, 1, 6]);
        let e = HashEmbedder::new("hash", 32);
        assert_eq!(db.clips[0].embedding, embed_caption(&db.clips[0].retrieval_text(), &e).unwrap());
    }

    #[test]
    fn malformed_captions_fall_back() {
        let dir = tempfile::tempdir().unwrap();
        let src = video(dir.path(), 12.0);
        let b = IngestBackends {
            vlm: Arc::new(ScriptedChat::fixed("bad", "```registry_delta\nnope\n```")),
            ..backends()
        };
        let db = DatabaseBuilder::new(IngestConfig::default(), b).build(&src, &dir.path().join("db")).unwrap();
        assert!(db.clips.iter().all(|c| c.caption == crate::ingest::CAPTION_FALLBACK));
        assert_eq!(db.registry.revision, 3);
    }

    #[test]
    fn decode_error_names_the_source() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("broken.synthvid.json");
        fs::write(&src, b"garbage").unwrap();
        let err = DatabaseBuilder::new(IngestConfig::default(), backends()).build(&src, &dir.path().join("db")).unwrap_err();
        assert!(matches!(err.root_cause(), IngestError::Decode(_)));
    }
}
