use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::hash::{canonical_request, canonical_request_hash, embed_text_hash};
use super::{check_request, ChatModel, Embedder, ModelError, ModelRequest, ModelResponse};

/// One recorded request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixtureRecord {
    Chat {
        hash: String,
        request: serde_json::Value,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response: Option<ModelResponse>,
        /// Only deterministic provider refusals (content filter) are recorded.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<ModelError>,
    },
    Embed {
        hash: String,
        backend_id: String,
        text: String,
        vector: Vec<f32>,
    },
}

/// Directory of `<hash>.json` fixture files.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureStore {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn load(&self, hash: &str) -> Result<FixtureRecord, ModelError> {
        let path = self.path(hash);
        let bytes = std::fs::read(&path).map_err(|_| ModelError::FixtureMissing {
            hash: hash.to_string(),
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| ModelError::BadResponse(format!("fixture {}: {e}", path.display())))
    }

    pub fn store(&self, hash: &str, record: &FixtureRecord) -> Result<(), ModelError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| ModelError::Transport(format!("fixture dir: {e}")))?;
        let mut bytes = serde_json::to_vec_pretty(record).expect("fixture serializes");
        bytes.push(b'\n');
        std::fs::write(self.path(hash), bytes)
            .map_err(|e| ModelError::Transport(format!("fixture write: {e}")))
    }
}

/// Passes requests to a live backend and persists each outcome by hash.
pub struct Recorder<T: ?Sized> {
    inner: Arc<T>,
    store: Arc<FixtureStore>,
}

impl<T: ?Sized> Recorder<T> {
    pub fn new(inner: Arc<T>, store: Arc<FixtureStore>) -> Self {
        Recorder { inner, store }
    }
}

impl ChatModel for Recorder<dyn ChatModel> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn supports_vision(&self) -> bool {
        self.inner.supports_vision()
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        let hash = canonical_request_hash(req);
        let outcome = self.inner.complete(req);
        let (response, error) = match &outcome {
            Ok(r) => (Some(r.clone()), None),
            Err(e @ ModelError::ContentFiltered(_)) => (None, Some(e.clone())),
            Err(_) => return outcome,
        };
        let record = FixtureRecord::Chat {
            hash: hash.clone(),
            request: canonical_request(req),
            response,
            error,
        };
        self.store.store(&hash, &record)?;
        outcome
    }
}

impl Embedder for Recorder<dyn Embedder> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ModelError> {
        let vectors = self.inner.embed(texts)?;
        for (text, vector) in texts.iter().zip(&vectors) {
            let hash = embed_text_hash(self.inner.id(), text);
            let record = FixtureRecord::Embed {
                hash: hash.clone(),
                backend_id: self.inner.id().to_string(),
                text: text.clone(),
                vector: vector.clone(),
            };
            self.store.store(&hash, &record)?;
        }
        Ok(vectors)
    }
}

/// Serves recorded fixtures; never touches the network.
pub struct Replay {
    id: String,
    store: Arc<FixtureStore>,
    dim: usize,
}

impl Replay {
    pub fn new(id: impl Into<String>, store: Arc<FixtureStore>, dim: usize) -> Self {
        Replay {
            id: id.into(),
            store,
            dim,
        }
    }
}

impl ChatModel for Replay {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        check_request(self, req)?;
        let hash = canonical_request_hash(req);
        match self.store.load(&hash)? {
            FixtureRecord::Chat { response: Some(r), .. } => Ok(r),
            FixtureRecord::Chat { error: Some(e), .. } => Err(e),
            _ => Err(ModelError::BadResponse(format!("fixture {hash} holds no chat outcome"))),
        }
    }
}

impl Embedder for Replay {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ModelError> {
        texts
            .iter()
            .map(|text| {
                let hash = embed_text_hash(&self.id, text);
                match self.store.load(&hash)? {
                    FixtureRecord::Embed { vector, .. } => Ok(vector),
                    _ => Err(ModelError::BadResponse(format!("fixture {hash} is not an embedding"))),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::{HashEmbedder, Message, ScriptedChat};

    struct Blocking;
    impl ChatModel for Blocking {
        fn id(&self) -> &str {
            "llm"
        }
        fn complete(&self, _: &ModelRequest) -> Result<ModelResponse, ModelError> {
            Err(ModelError::ContentFiltered("policy".into()))
        }
    }

    fn request(text: &str) -> ModelRequest {
        ModelRequest::new("llm", vec![Message::user(text)])
    }

    #[test]
    fn replay_serves_recorded_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::new(dir.path()));
        let hash = canonical_request_hash(&request("Q"));
        store
            .store(
                &hash,
                &FixtureRecord::Chat {
                    hash: hash.clone(),
                    request: canonical_request(&request("Q")),
                    response: Some(ModelResponse::text("Answer: B")),
                    error: None,
                },
            )
            .unwrap();
        let replay = Replay::new("llm", store, 0);
        assert_eq!(replay.complete(&request("Q")).unwrap().text, "Answer: B");
        assert_eq!(replay.complete(&request("Q")).unwrap(), replay.complete(&request("Q")).unwrap());
        assert!(matches!(
            replay.complete(&request("other")),
            Err(ModelError::FixtureMissing { .. })
        ));
    }

    #[test]
    fn record_then_replay_chat() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::new(dir.path()));
        let live: Arc<dyn ChatModel> = Arc::new(ScriptedChat::fixed("llm", "hello"));
        let rec = Recorder::new(live, store.clone());
        assert_eq!(rec.complete(&request("Q")).unwrap().text, "hello");
        let replay = Replay::new("llm", store, 0);
        assert_eq!(replay.complete(&request("Q")).unwrap().text, "hello");
    }

    #[test]
    fn content_filter_is_recorded_and_replayed() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::new(dir.path()));
        let live: Arc<dyn ChatModel> = Arc::new(Blocking);
        let rec = Recorder::new(live, store.clone());
        assert!(matches!(rec.complete(&request("Q")), Err(ModelError::ContentFiltered(_))));
        let replay = Replay::new("llm", store, 0);
        assert!(matches!(replay.complete(&request("Q")), Err(ModelError::ContentFiltered(_))));
    }

    #[test]
    fn embedding_batch_equals_singletons() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::new(dir.path()));
        let live: Arc<dyn Embedder> = Arc::new(HashEmbedder::new("emb", 32));
        let texts: Vec<String> = ["a red car", "blue sky", "a dog runs"].map(String::from).to_vec();
        Recorder::new(live, store.clone()).embed(&texts).unwrap();

        let replay = Replay::new("emb", store, 32);
        let batch = replay.embed(&texts).unwrap();
        let singles: Vec<Vec<f32>> = texts
            .iter()
            .flat_map(|t| replay.embed(std::slice::from_ref(t)).unwrap())
            .collect();
        assert_eq!(batch, singles);
        assert_eq!(batch.len(), 3);
        assert!(batch.iter().all(|v| v.len() == 32));
    }

    #[test]
    fn fixtures_are_human_readable_json() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(FixtureStore::new(dir.path()));
        let live: Arc<dyn ChatModel> = Arc::new(ScriptedChat::fixed("llm", "hi"));
        Recorder::new(live, store).complete(&request("Q")).unwrap();
        let entry = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap();
        let text = std::fs::read_to_string(entry.path()).unwrap();
        assert!(text.contains("\"kind\": \"chat\""));
        assert!(text.contains("\"text\": \"Q\""));
    }
}
