use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use dvd_core::agent::{run_episode, AgentConfig, Episode};
use dvd_core::eval_behavior::{
    aggregate, evaluate, load_episodes, load_questions, score_question, AbstainPolicy, AccuracyTable,
    BehaviorReport, DatasetManifest,
};
use dvd_core::ingest::{BuildEvent, DatabaseBuilder, IngestBackends};
use dvd_core::model_gateway::ChatModel;
use dvd_core::toolset::Toolset;
use dvd_core::video_store::{self, VideoDatabase};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cli::{AgentArgs, AnalyzeArgs, AskArgs, BuildArgs, EvalArgs};
use crate::config::{RoleName, Settings};
use crate::error::{CliError, CliResult};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn progress_line(ev: &BuildEvent) -> String {
    match ev {
        BuildEvent::Started { clips, resume_from: 0 } => format!("building {clips} clips"),
        BuildEvent::Started { clips, resume_from } => format!("resuming at clip {resume_from} of {clips}"),
        BuildEvent::Decoded { index, frames } => format!("decoded clip {index} ({frames} frames)"),
        BuildEvent::Captioned { index, fallback: false } => format!("captioned clip {index}"),
        BuildEvent::Captioned { index, fallback: true } => format!("captioned clip {index} (fallback caption)"),
        BuildEvent::Embedded { clips } => format!("embedded {clips} captions"),
        BuildEvent::Saved { root } => format!("saved {}", root.display()),
    }
}

pub fn build(s: &Settings, a: &BuildArgs, cancel: Option<Arc<AtomicBool>>) -> CliResult<VideoDatabase> {
    if !a.source.is_file() {
        return Err(CliError::data(format!("source not found: {}", a.source.display())));
    }
    let vlm = s.chat(RoleName::Vlm)?;
    let embedder = s.embedder()?;
    let mut cfg = s.ingest_config();
    cfg.clip_len_s = a.clip_len.unwrap_or(cfg.clip_len_s);
    cfg.decode_fps = a.fps.unwrap_or(cfg.decode_fps);
    cfg.resize_shorter_side_px = a.resize.unwrap_or(cfg.resize_shorter_side_px);
    cfg.transcript_path = a.transcript.clone();
    cfg.video_id = a.video_id.clone();
    cfg.caption_backend_id = vlm.id().to_string();
    cfg.embed_backend_id = embedder.id().to_string();

    let decoder = s.decoder(a.decoder.as_deref(), &a.source)?;
    let mut builder = DatabaseBuilder::new(cfg, IngestBackends { decoder, vlm, embedder });
    if !a.quiet {
        builder = builder.on_event(|ev| eprintln!("{}", progress_line(ev)));
    }
    if let Some(flag) = cancel {
        builder = builder.with_cancel_flag(flag);
    }
    Ok(builder.build(&a.source, &a.out)?)
}

/// A database's tools plus the reasoner and agent settings.
pub struct AgentSetup {
    pub llm: Arc<dyn ChatModel>,
    pub cfg: AgentConfig,
}

impl AgentSetup {
    pub fn new(s: &Settings, a: &AgentArgs) -> CliResult<AgentSetup> {
        let llm = s.chat(RoleName::Llm)?;
        let mut cfg = s.agent_config(a.max_steps);
        cfg.llm_backend_id = llm.id().to_string();
        Ok(AgentSetup { llm, cfg })
    }
}

pub fn open_toolset(s: &Settings, root: &Path, a: &AgentArgs) -> CliResult<Toolset> {
    let tools_cfg = s.toolset_config(a.k, &a.disable_tool)?;
    let db = video_store::open(root)?;
    Ok(Toolset::new(Arc::new(db), tools_cfg, s.chat(RoleName::Vlm)?, s.embedder()?)?)
}

fn short_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..12].to_string()
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Run one episode and write it under the run directory.
pub fn ask(s: &Settings, a: &AskArgs) -> CliResult<(Episode, PathBuf)> {
    let tools = open_toolset(s, &a.db, &a.agent)?;
    let agent = AgentSetup::new(s, &a.agent)?;
    let episode = run_episode(&a.question, &tools, agent.llm.as_ref(), &agent.cfg)?;
    let path = a
        .run_dir
        .join(format!("{}-{}.json", file_safe(&episode.video_id), short_hash(&a.question)));
    write_json(&path, &episode)?;
    Ok((episode, path))
}

pub fn eval(s: &Settings, a: &EvalArgs) -> CliResult<AccuracyTable> {
    let questions = load_questions(&a.questions)?;
    let policy: AbstainPolicy = s.abstain_policy(a.abstain.as_deref(), a.seed)?;
    let episodes = match &a.episodes {
        Some(path) => load_episodes(path)?,
        None => run_questions(s, a, &questions)?,
    };
    let table = evaluate(&questions, &episodes, policy)?;
    write_json(&a.out.join("accuracy.json"), &table)?;
    write_text(&a.out.join("accuracy.txt"), &table.to_text())?;
    Ok(table)
}

fn run_questions(
    s: &Settings,
    a: &EvalArgs,
    questions: &[dvd_core::eval_behavior::BenchmarkQuestion],
) -> CliResult<Vec<Episode>> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let agent = AgentSetup::new(s, &a.agent)?;
    let mut toolsets: HashMap<String, Toolset> = HashMap::new();
    let mut episodes = Vec::with_capacity(questions.len());
    for (n, q) in questions.iter().enumerate() {
        if !toolsets.contains_key(&q.video_id) {
            let root = manifest.root_for(&q.video_id)?;
            toolsets.insert(q.video_id.clone(), open_toolset(s, root, &a.agent)?);
        }
        let tools = &toolsets[&q.video_id];
        let mut ep = run_episode(&q.agent_query(), tools, agent.llm.as_ref(), &agent.cfg)
            .map_err(|e| CliError::from(e).context(&format!("question {}", q.question_id)))?;
        ep.question_id = Some(q.question_id.clone());
        write_json(&a.out.join("episodes").join(format!("{}.json", file_safe(&q.question_id))), &ep)?;
        tracing::info!(question = %q.question_id, steps = ep.steps.len(), "episode {}/{}", n + 1, questions.len());
        episodes.push(ep);
    }
    Ok(episodes)
}

pub fn analyze(_s: &Settings, a: &AnalyzeArgs) -> CliResult<BehaviorReport> {
    let episodes = load_episodes(&a.episodes)?;
    let correct = match &a.questions {
        None => None,
        Some(path) => {
            let questions = load_questions(path)?;
            let by_id: BTreeMap<&str, _> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
            let flags = episodes
                .iter()
                .map(|ep| {
                    let id = ep.question_id.as_deref().unwrap_or_default();
                    by_id
                        .get(id)
                        .map(|q| score_question(q, ep, AbstainPolicy::Incorrect).correct)
                        .ok_or_else(|| CliError::data(format!("episode for question {id:?} has no matching question")))
                })
                .collect::<CliResult<Vec<bool>>>()?;
            Some(flags)
        }
    };
    let report = aggregate(&episodes, correct.as_deref());
    write_json(&a.out.join("behavior.json"), &report)?;
    write_text(&a.out.join("behavior.txt"), &report.to_text())?;
    Ok(report)
}
