//! Regenerate the recorded fixtures under `fixtures/`.
//!
//! Builds `db60/` from the synthetic video, records every vision and
//! embedding call into `replay/`, records the scripted agent run for the
//! golden episode, and writes the expected service responses.
//!
//!     cargo run -p dvd-cli --example make_fixtures [fixtures-dir]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dvd_cli::service::Service;
use dvd_core::agent::{run_episode, AgentConfig};
use dvd_core::ingest::synthetic::SyntheticDecoder;
use dvd_core::ingest::{DatabaseBuilder, IngestBackends, IngestConfig};
use dvd_core::model_gateway::{
    ChatModel, Embedder, FixtureStore, HashEmbedder, PaletteVision, Recorder, ScriptedChat, DEFAULT_STUB_DIM,
};
use dvd_core::toolset::{Toolset, ToolsetConfig};
use dvd_core::video_store;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    });
    // relative paths keep the committed manifest machine-independent
    std::env::set_current_dir(&dir)?;
    for stale in ["db60", "replay"] {
        if Path::new(stale).exists() {
            fs::remove_dir_all(stale)?;
        }
    }

    let store = Arc::new(FixtureStore::new("replay"));
    let vlm: Arc<dyn ChatModel> = Arc::new(Recorder::new(
        Arc::new(PaletteVision::new("vlm")) as Arc<dyn ChatModel>,
        store.clone(),
    ));
    let embedder: Arc<dyn Embedder> = Arc::new(Recorder::new(
        Arc::new(HashEmbedder::new("embed", DEFAULT_STUB_DIM)) as Arc<dyn Embedder>,
        store.clone(),
    ));

    let cfg = IngestConfig { transcript_path: Some("transcript60.json".into()), ..IngestConfig::default() };
    let backends = IngestBackends { decoder: Arc::new(SyntheticDecoder), vlm: vlm.clone(), embedder: embedder.clone() };
    let db = DatabaseBuilder::new(cfg, backends).build(Path::new("video60.synthvid.json"), Path::new("db60"))?;
    println!("db60: {} clips, {} subjects", db.clips.len(), db.registry.subjects.len());

    let db = Arc::new(video_store::open(Path::new("db60"))?);
    let tools = Toolset::new(db.clone(), ToolsetConfig::default(), vlm, embedder)?;
    let llm: Arc<dyn ChatModel> = Arc::new(ScriptedChat::from_file("llm", Path::new("asa_golden/script.json"))?);
    let llm = Recorder::new(llm, store);
    let question = fs::read_to_string("asa_golden/question.txt")?;
    let episode = run_episode(question.trim_end(), &tools, &llm, &AgentConfig::default())?;
    let mut bytes = serde_json::to_vec_pretty(&episode.without_timing())?;
    bytes.push(b'\n');
    fs::write("asa_golden/episode.json", bytes)?;
    println!("golden episode: {} steps, answer {:?}", episode.steps.len(), episode.final_answer);

    let live = Toolset::new(
        db,
        ToolsetConfig::default(),
        Arc::new(PaletteVision::new("vlm")),
        Arc::new(HashEmbedder::new("embed", DEFAULT_STUB_DIM)),
    )?;
    let svc = Service::new(vec![live], None)?;
    let mut expected = String::new();
    for line in fs::read_to_string("service/requests.jsonl")?.lines() {
        if let Some(resp) = svc.handle_line(line) {
            expected.push_str(&serde_json::to_string(&resp)?);
            expected.push('\n');
        }
    }
    fs::write("service/expected.jsonl", expected)?;
    println!("service session recorded");
    Ok(())
}
