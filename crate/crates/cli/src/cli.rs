use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::GlobalArgs;

#[derive(Debug, Parser)]
#[command(name = "dvd", version, about = "Build, query and evaluate long-video databases")]
pub struct Cli {
    #[command(flatten)]
    pub globals: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a video into a database directory
    Build(BuildArgs),
    /// Answer one question about a built database
    Ask(AskArgs),
    /// Run the agent over a question set and score it
    Eval(EvalArgs),
    /// Classify episodes by tool-use behavior
    Analyze(AnalyzeArgs),
    /// Expose the tools and agent over newline-delimited JSON
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    pub source: PathBuf,
    /// Database directory to create
    #[arg(long, short)]
    pub out: PathBuf,
    /// Clip length in seconds
    #[arg(long, env = "DVD_CLIP_LEN")]
    pub clip_len: Option<f64>,
    /// Frames per second sampled from each clip
    #[arg(long, env = "DVD_FPS")]
    pub fps: Option<f64>,
    /// Target shorter side of stored frames, pixels
    #[arg(long)]
    pub resize: Option<u32>,
    /// Transcript JSON to attach to clip captions
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub video_id: Option<String>,
    /// ffmpeg or synthdec
    #[arg(long, env = "DVD_DECODER")]
    pub decoder: Option<String>,
    /// No per-clip progress lines
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AgentArgs {
    /// Default top-k for clip_search
    #[arg(long, env = "DVD_K")]
    pub k: Option<usize>,
    #[arg(long, env = "DVD_MAX_STEPS")]
    pub max_steps: Option<usize>,
    /// Tool to switch off (repeatable)
    #[arg(long = "disable-tool", value_name = "TOOL")]
    pub disable_tool: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// Database directory
    pub db: PathBuf,
    pub question: String,
    #[command(flatten)]
    pub agent: AgentArgs,
    /// Directory the episode JSON is written to
    #[arg(long, default_value = "runs")]
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON map of video_id to database directory
    #[arg(long)]
    pub manifest: PathBuf,
    /// Question set, one JSON object per line
    #[arg(long)]
    pub questions: PathBuf,
    /// Output directory for episodes and the accuracy table
    #[arg(long, short)]
    pub out: PathBuf,
    /// Score existing episodes instead of running the agent
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    /// incorrect or random
    #[arg(long)]
    pub abstain: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub agent: AgentArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Episode JSON file, JSONL file or directory of episode files
    pub episodes: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Question set used to score each class
    #[arg(long)]
    pub questions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Database directory to host (repeatable)
    #[arg(long = "db", required = true)]
    pub dbs: Vec<PathBuf>,
    /// TCP address to listen on; stdin/stdout when omitted
    #[arg(long)]
    pub listen: Option<String>,
    #[command(flatten)]
    pub agent: AgentArgs,
}
