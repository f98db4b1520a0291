use std::path::Path;
use std::sync::Arc;

use dvd_core::agent::{run_episode, AgentConfig, Termination};
use dvd_core::ingest::synthetic::{SyntheticDecoder, SyntheticScene, SyntheticVideo};
use dvd_core::ingest::{DatabaseBuilder, IngestBackends, IngestConfig};
use dvd_core::model_gateway::{
    ChatModel, Embedder, FixtureStore, HashEmbedder, PaletteVision, Recorder, Replay, ScriptedChat, ScriptedTurn,
};
use dvd_core::toolset::{Toolset, ToolsetConfig};
use dvd_core::video_store;
use serde_json::json;

fn write_video(dir: &Path) -> std::path::PathBuf {
    let video = SyntheticVideo::new(
        64,
        36,
        20.0,
        vec![
            SyntheticScene::new(0.0, 10.0, [30, 160, 60], "field"),
            SyntheticScene::new(10.0, 20.0, [130, 40, 170], "stage"),
        ],
    );
    let path = dir.join("two.synthvid.json");
    std::fs::write(&path, serde_json::to_vec(&video).unwrap()).unwrap();
    path
}

#[test]
fn recorded_build_and_episode_replay_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let src = write_video(tmp.path());
    let store = Arc::new(FixtureStore::new(tmp.path().join("fx")));
    let vlm: Arc<dyn ChatModel> =
        Arc::new(Recorder::new(Arc::new(PaletteVision::new("vlm")) as Arc<dyn ChatModel>, store.clone()));
    let embed: Arc<dyn Embedder> =
        Arc::new(Recorder::new(Arc::new(HashEmbedder::new("embed", 64)) as Arc<dyn Embedder>, store.clone()));
    let backends = IngestBackends { decoder: Arc::new(SyntheticDecoder), vlm: vlm.clone(), embedder: embed.clone() };
    let db = DatabaseBuilder::new(IngestConfig::default(), backends).build(&src, &tmp.path().join("db")).unwrap();
    assert_eq!(db.clips.len(), 4);
    assert_eq!(db.registry.subjects.len(), 2);

    let replay_vlm: Arc<dyn ChatModel> = Arc::new(Replay::new("vlm", store.clone(), 0));
    let replay_embed: Arc<dyn Embedder> = Arc::new(Replay::new("embed", store.clone(), 64));
    let backends = IngestBackends { decoder: Arc::new(SyntheticDecoder), vlm: replay_vlm.clone(), embedder: replay_embed.clone() };
    let again = DatabaseBuilder::new(IngestConfig::default(), backends).build(&src, &tmp.path().join("db2")).unwrap();
    assert_eq!(again, db);

    let opened = Arc::new(video_store::open(&tmp.path().join("db")).unwrap());
    let plan = vec![
        ScriptedTurn::call("find the stage", "clip_search", json!({"query": "purple object", "k": 2})),
        ScriptedTurn::call("done", "answer", json!({"answer": "purple"})),
    ];
    let live = Toolset::new(opened.clone(), ToolsetConfig::default(), vlm, embed).unwrap();
    let recorded_llm = Recorder::new(Arc::new(ScriptedChat::sequence("llm", plan, "purple")) as Arc<dyn ChatModel>, store.clone());
    let first = run_episode("What colour is the stage?", &live, &recorded_llm, &AgentConfig::default()).unwrap();
    assert_eq!(first.terminated_by, Termination::AnswerAction);
    assert!(first.steps[0].observation.contains("clip 2") || first.steps[0].observation.contains("clip 3"));

    let replayed = Toolset::new(opened, ToolsetConfig::default(), replay_vlm, replay_embed).unwrap();
    let llm = Replay::new("llm", store, 0);
    let second = run_episode("What colour is the stage?", &replayed, &llm, &AgentConfig::default()).unwrap();
    assert_eq!(second.without_timing(), first.without_timing());
}
