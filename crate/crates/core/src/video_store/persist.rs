use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    resolve, validate, ClipInterval, ClipRecord, DatabaseManifest, FrameRef, StoreError,
    SubjectRegistry, VideoDatabase,
};

pub const SCHEMA_VERSION: u32 = 1;

pub(crate) const MANIFEST_FILE: &str = "manifest.json";
const REGISTRY_FILE: &str = "registry.json";
const CAPTIONS_FILE: &str = "captions.jsonl";
const EMBEDDINGS_FILE: &str = "embeddings.f32";

/// One line of `captions.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct CaptionLine {
    index: usize,
    start_s: f64,
    end_s: f64,
    caption: String,
    transcript_text: Option<String>,
    frames: Vec<FrameRef>,
}

/// Write `bytes` to `path` via a sibling temp file and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
    f.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}

pub(crate) fn encode_embeddings(clips: &[ClipRecord]) -> Vec<u8> {
    clips
        .iter()
        .flat_map(|c| c.embedding.iter())
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Persist `db` under `root`. Frames are copied from `db.root` when it differs.
///
/// The manifest is written last, so a crash mid-save leaves either the old
/// manifest or none.
pub fn save(db: &VideoDatabase, root: &Path) -> Result<(), StoreError> {
    let report = validate(db);
    if !report.is_empty() {
        return Err(StoreError::Validation(report));
    }
    fs::create_dir_all(root).map_err(|e| StoreError::io(root, e))?;

    if let Some(src_root) = db.root.as_deref().filter(|src| !same_dir(src, root)) {
        for frame in db.all_frames() {
            let src = resolve(src_root, &frame.image_path);
            let dst = resolve(root, &frame.image_path);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
            }
            let bytes = fs::read(&src).map_err(|e| StoreError::io(&src, e))?;
            write_atomic(&dst, &bytes)?;
        }
    }

    let embeddings = encode_embeddings(&db.clips);
    let checksum = hex::encode(Sha256::digest(&embeddings));
    write_atomic(&root.join(EMBEDDINGS_FILE), &embeddings)?;

    let mut captions = Vec::new();
    for clip in &db.clips {
        let line = CaptionLine {
            index: clip.interval.index,
            start_s: clip.interval.start_s,
            end_s: clip.interval.end_s,
            caption: clip.caption.clone(),
            transcript_text: clip.transcript_text.clone(),
            frames: clip.frame_refs.clone(),
        };
        serde_json::to_writer(&mut captions, &line).expect("serializable");
        captions.push(b'\n');
    }
    write_atomic(&root.join(CAPTIONS_FILE), &captions)?;
    write_atomic(&root.join(REGISTRY_FILE), &to_json_pretty(&db.registry))?;

    let manifest = DatabaseManifest {
        clip_count: db.clips.len(),
        embeddings_sha256: checksum,
        ..db.manifest.clone()
    };
    write_atomic(&root.join(MANIFEST_FILE), &to_json_pretty(&manifest))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            StoreError::CorruptLayout(format!("missing {}", path.display()))
        }
        _ => StoreError::io(path, e),
    })?;
    serde_json::from_slice(&bytes)
        .map_err(|e| StoreError::CorruptLayout(format!("{}: {e}", path.display())))
}

/// True when `root` holds a manifest (a complete, committed database).
pub(crate) fn has_manifest(root: &Path) -> bool {
    root.join(MANIFEST_FILE).is_file()
}

/// Load the database saved under `root`.
pub fn open(root: &Path) -> Result<VideoDatabase, StoreError> {
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(StoreError::NotFound(root.to_path_buf()));
    }
    let manifest: DatabaseManifest = read_json(&manifest_path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(StoreError::SchemaVersionMismatch {
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let registry: SubjectRegistry = read_json(&root.join(REGISTRY_FILE))?;

    let captions_path = root.join(CAPTIONS_FILE);
    let file = fs::File::open(&captions_path)
        .map_err(|_| StoreError::CorruptLayout(format!("missing {}", captions_path.display())))?;
    let mut lines = Vec::with_capacity(manifest.clip_count);
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(&captions_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CaptionLine = serde_json::from_str(&line).map_err(|e| {
            StoreError::CorruptLayout(format!("{CAPTIONS_FILE} line {}: {e}", n + 1))
        })?;
        lines.push(parsed);
    }
    if lines.len() != manifest.clip_count {
        return Err(StoreError::CorruptLayout(format!(
            "{CAPTIONS_FILE} has {} records, manifest says {}",
            lines.len(),
            manifest.clip_count
        )));
    }

    let emb_path = root.join(EMBEDDINGS_FILE);
    let bytes = fs::read(&emb_path)
        .map_err(|_| StoreError::CorruptLayout(format!("missing {}", emb_path.display())))?;
    let d = manifest.embedding_dim;
    if bytes.len() != manifest.clip_count * d * 4 {
        return Err(StoreError::CorruptLayout(format!(
            "{EMBEDDINGS_FILE} is {} bytes, expected {} x {} x 4",
            bytes.len(),
            manifest.clip_count,
            d
        )));
    }
    let checksum = hex::encode(Sha256::digest(&bytes));
    if checksum != manifest.embeddings_sha256 {
        return Err(StoreError::CorruptLayout(format!(
            "{EMBEDDINGS_FILE} checksum mismatch"
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let clips = lines
        .into_iter()
        .zip(floats.chunks_exact(d.max(1)))
        .map(|(line, row)| ClipRecord {
            interval: ClipInterval {
                index: line.index,
                start_s: line.start_s,
                end_s: line.end_s,
            },
            caption: line.caption,
            embedding: row.to_vec(),
            frame_refs: line.frames,
            transcript_text: line.transcript_text,
        })
        .collect();

    Ok(VideoDatabase {
        manifest,
        registry,
        clips,
        root: Some(root.to_path_buf()),
    })
}

#[cfg(test)]
fn layout_files(root: &Path) -> [std::path::PathBuf; 4] {
    [
        root.join(MANIFEST_FILE),
        root.join(REGISTRY_FILE),
        root.join(CAPTIONS_FILE),
        root.join(EMBEDDINGS_FILE),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video_store::testutil::tiled_db;
    use crate::video_store::{SubjectEntry, Violation};

    fn sample_db() -> VideoDatabase {
        let mut db = tiled_db(60.0, 5.0, 16);
        db.clips[3].embedding[5] = -0.123_456_78;
        db.clips[4].embedding[0] = f32::MIN_POSITIVE;
        db.clips[2].transcript_text = Some("hello".into());
        db.registry.subjects.push(SubjectEntry {
            name: "red car".into(),
            appearance: "red".into(),
            identity: "vehicle".into(),
            actions: vec!["drives".into()],
            time_spans: vec![(0.0, 10.0)],
        });
        db
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let db = sample_db();
        save(&db, dir.path()).unwrap();
        let back = open(dir.path()).unwrap();
        assert_eq!(back, {
            let mut expected = db.clone();
            expected.manifest.clip_count = 12;
            expected.manifest.embeddings_sha256 = back.manifest.embeddings_sha256.clone();
            expected
        });
        for (a, b) in db.clips.iter().zip(&back.clips) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.embedding), bits(&b.embedding));
        }
    }

    #[test]
    fn save_twice_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let db = sample_db();
        save(&db, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = layout_files(dir.path()).iter().map(|p| fs::read(p).unwrap()).collect();
        let reopened = open(dir.path()).unwrap();
        save(&reopened, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = layout_files(dir.path()).iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        // no temp files left behind
        assert!(fs::read_dir(dir.path())
            .unwrap()
            .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
    }

    #[test]
    fn wrong_embedding_length_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = sample_db();
        db.clips[1].embedding.pop();
        match save(&db, dir.path()) {
            Err(StoreError::Validation(report)) => assert!(report
                .violations
                .iter()
                .any(|v| matches!(v, Violation::EmbeddingDim { clip: 1, .. }))),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn open_empty_dir_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(open(dir.path()), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn open_detects_caption_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save(&sample_db(), dir.path()).unwrap();
        let path = dir.path().join(CAPTIONS_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(11).map(|l| format!("{l}\n")).collect();
        fs::write(&path, truncated).unwrap();
        assert!(matches!(open(dir.path()), Err(StoreError::CorruptLayout(_))));
    }

    #[test]
    fn open_detects_checksum_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save(&sample_db(), dir.path()).unwrap();
        let path = dir.path().join(EMBEDDINGS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[7] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(open(dir.path()), Err(StoreError::CorruptLayout(_))));
    }

    #[test]
    fn open_rejects_unknown_schema() {
        let dir = tempfile::tempdir().unwrap();
        save(&sample_db(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        manifest["schema_version"] = 2.into();
        fs::write(&path, serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(
            open(dir.path()),
            Err(StoreError::SchemaVersionMismatch { found: 2, expected: 1 })
        ));
    }
}
