//! Settings resolution. Command-line flags win over `DVD_*` environment
//! variables (both handled by clap), which win over the TOML config file,
//! which wins over built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use dvd_core::agent::AgentConfig;
use dvd_core::eval_behavior::AbstainPolicy;
use dvd_core::ingest::{DecoderCommand, ExternalDecoder, FrameDecoder, IngestConfig};
use dvd_core::model_gateway::{
    build_chat, build_embedder, BackendConfig, BackendKind, BackendMode, ChatModel, Embedder, DEFAULT_STUB_DIM,
};
use dvd_core::toolset::{ToolKind, ToolsetConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_CONFIG_FILE: &str = "dvd.toml";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub clip_len_s: Option<f64>,
    pub decode_fps: Option<f64>,
    pub resize_shorter_side_px: Option<u32>,
    pub caption_retries: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DecoderSection {
    Ffmpeg,
    /// The bundled synthetic-video decoder; `program` defaults to the
    /// `dvd-synthdec` next to the running executable.
    Synthdec {
        #[serde(default)]
        program: Option<PathBuf>,
    },
    External {
        decode: DecoderCommand,
        probe: DecoderCommand,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub max_steps: Option<usize>,
    pub malformed_action_retries: Option<u32>,
    pub observation_cap_chars: Option<usize>,
    pub max_output_tokens: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsSection {
    pub default_k: Option<usize>,
    pub max_k: Option<usize>,
    pub frame_cap: Option<usize>,
    pub event_summary_frames: Option<usize>,
    pub disable: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolesSection {
    pub llm: Option<String>,
    pub vlm: Option<String>,
    pub embed: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `incorrect` or `random`.
    pub abstain: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub listen: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub ingest: IngestSection,
    pub decoder: Option<DecoderSection>,
    pub agent: AgentSection,
    pub tools: ToolsSection,
    pub roles: RolesSection,
    /// Named backends; the table key becomes the backend id.
    pub backends: BTreeMap<String, toml::Table>,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> CliResult<FileConfig> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
    }
}

/// Backend selection flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Config file (default: ./dvd.toml when present)
    #[arg(long, global = true, env = "DVD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Reasoner backend: a [backends] name, `scripted:<file>`
    #[arg(long, global = true, env = "DVD_LLM")]
    pub llm: Option<String>,
    /// Vision backend: a [backends] name or `stub-palette`
    #[arg(long, global = true, env = "DVD_VLM")]
    pub vlm: Option<String>,
    /// Embedding backend: a [backends] name, `stub-hash` or `stub-hash:<dim>`
    #[arg(long, global = true, env = "DVD_EMBED")]
    pub embed: Option<String>,
    /// Force live, record or replay mode on every backend
    #[arg(long, global = true, env = "DVD_BACKEND_MODE", value_parser = parse_mode)]
    pub backend_mode: Option<BackendMode>,
    /// Fixture directory for record/replay
    #[arg(long, global = true, env = "DVD_FIXTURE_DIR")]
    pub fixture_dir: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<BackendMode, String> {
    match s {
        "live" => Ok(BackendMode::Live),
        "record" => Ok(BackendMode::Record),
        "replay" => Ok(BackendMode::Replay),
        _ => Err(format!("expected live, record or replay, got {s:?}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleName {
    Llm,
    Vlm,
    Embed,
}

impl RoleName {
    pub fn id(self) -> &'static str {
        match self {
            RoleName::Llm => "llm",
            RoleName::Vlm => "vlm",
            RoleName::Embed => "embed",
        }
    }
}

pub struct Settings {
    pub file: FileConfig,
    /// Directory relative paths in the config file resolve against.
    pub base_dir: PathBuf,
    pub globals: GlobalArgs,
}

impl Settings {
    pub fn load(globals: &GlobalArgs) -> CliResult<Settings> {
        let path = match &globals.config {
            Some(p) => Some(p.clone()),
            None => Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.is_file()),
        };
        let (file, base_dir) = match path {
            Some(p) => {
                let text = fs::read_to_string(&p)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (FileConfig::parse(&text)?, base)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        Ok(Settings { file, base_dir, globals: globals.clone() })
    }

    fn from_file_dir(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    /// Backend spec for `role` and whether it came from the config file.
    fn role_spec(&self, role: RoleName) -> Option<(String, bool)> {
        let (flag, file) = match role {
            RoleName::Llm => (&self.globals.llm, &self.file.roles.llm),
            RoleName::Vlm => (&self.globals.vlm, &self.file.roles.vlm),
            RoleName::Embed => (&self.globals.embed, &self.file.roles.embed),
        };
        if let Some(s) = flag {
            return Some((s.clone(), false));
        }
        if let Some(s) = file {
            return Some((s.clone(), true));
        }
        match role {
            RoleName::Llm => None,
            RoleName::Vlm => Some(("stub-palette".into(), false)),
            RoleName::Embed => Some(("stub-hash".into(), false)),
        }
    }

    pub fn backend_config(&self, role: RoleName) -> CliResult<BackendConfig> {
        let (spec, in_file) = self.role_spec(role).ok_or_else(|| {
            CliError::usage(format!("no {} backend configured; pass --{} or set [roles] in the config", role.id(), role.id()))
        })?;
        let path_of = |p: &str| if in_file { self.from_file_dir(Path::new(p)) } else { PathBuf::from(p) };
        let mut cfg = if let Some(table) = self.file.backends.get(&spec) {
            let mut table = table.clone();
            table.insert("backend_id".into(), toml::Value::String(spec.clone()));
            let mut cfg: BackendConfig = toml::Value::Table(table)
                .try_into()
                .map_err(|e| CliError::usage(format!("backend {spec}: {e}")))?;
            if let BackendKind::Scripted { script } = &mut cfg.kind {
                *script = self.from_file_dir(script);
            }
            if let Some(dir) = &mut cfg.fixture_dir {
                *dir = self.from_file_dir(dir);
            }
            cfg
        } else if spec == "stub-palette" {
            BackendConfig::new(role.id(), BackendKind::StubPalette)
        } else if spec == "stub-hash" {
            BackendConfig::new(role.id(), BackendKind::StubHash { dim: DEFAULT_STUB_DIM })
        } else if let Some(dim) = spec.strip_prefix("stub-hash:") {
            let dim = dim.parse().map_err(|_| CliError::usage(format!("bad embedding dimension in {spec:?}")))?;
            BackendConfig::new(role.id(), BackendKind::StubHash { dim })
        } else if let Some(path) = spec.strip_prefix("scripted:") {
            BackendConfig::new(role.id(), BackendKind::Scripted { script: path_of(path) })
        } else {
            return Err(CliError::usage(format!("unknown {} backend {spec:?}", role.id())));
        };
        if let Some(mode) = self.globals.backend_mode {
            cfg.mode = mode;
        }
        if let Some(dir) = &self.globals.fixture_dir {
            cfg.fixture_dir = Some(dir.clone());
        }
        Ok(cfg)
    }

    pub fn chat(&self, role: RoleName) -> CliResult<Arc<dyn ChatModel>> {
        Ok(build_chat(&self.backend_config(role)?)?)
    }

    pub fn embedder(&self) -> CliResult<Arc<dyn Embedder>> {
        Ok(build_embedder(&self.backend_config(RoleName::Embed)?)?)
    }

    /// Decoder for `source`: the flag, then the config file, then the
    /// bundled synthetic decoder for `.synthvid.json` files, else ffmpeg.
    pub fn decoder(&self, flag: Option<&str>, source: &Path) -> CliResult<Arc<dyn FrameDecoder>> {
        let section = match flag {
            Some("ffmpeg") => DecoderSection::Ffmpeg,
            Some("synthdec") => DecoderSection::Synthdec { program: None },
            Some(other) => return Err(CliError::usage(format!("unknown decoder {other:?} (ffmpeg, synthdec)"))),
            None => match &self.file.decoder {
                Some(d) => d.clone(),
                None if source.to_string_lossy().ends_with(".synthvid.json") => DecoderSection::Synthdec { program: None },
                None => DecoderSection::Ffmpeg,
            },
        };
        Ok(Arc::new(match section {
            DecoderSection::Ffmpeg => ExternalDecoder::default(),
            DecoderSection::Synthdec { program } => {
                let program = match program {
                    Some(p) => self.from_file_dir(&p),
                    None => synthdec_path(),
                };
                synthdec_decoder(&program)
            }
            DecoderSection::External { decode, probe } => ExternalDecoder { decode, probe },
        }))
    }

    pub fn ingest_config(&self) -> IngestConfig {
        let d = IngestConfig::default();
        let s = &self.file.ingest;
        IngestConfig {
            clip_len_s: s.clip_len_s.unwrap_or(d.clip_len_s),
            decode_fps: s.decode_fps.unwrap_or(d.decode_fps),
            resize_shorter_side_px: s.resize_shorter_side_px.unwrap_or(d.resize_shorter_side_px),
            caption_retries: s.caption_retries.unwrap_or(d.caption_retries),
            ..d
        }
    }

    pub fn agent_config(&self, max_steps: Option<usize>) -> AgentConfig {
        let d = AgentConfig::default();
        let s = &self.file.agent;
        AgentConfig {
            max_steps: max_steps.or(s.max_steps).unwrap_or(d.max_steps),
            malformed_action_retries: s.malformed_action_retries.unwrap_or(d.malformed_action_retries),
            observation_cap_chars: s.observation_cap_chars.unwrap_or(d.observation_cap_chars),
            max_output_tokens: s.max_output_tokens.unwrap_or(d.max_output_tokens),
            ..d
        }
    }

    /// Tool settings; `disable` from the command line adds to the file's list.
    pub fn toolset_config(&self, k: Option<usize>, disable: &[String]) -> CliResult<ToolsetConfig> {
        let d = ToolsetConfig::default();
        let s = &self.file.tools;
        let mut cfg = ToolsetConfig {
            default_k: k.or(s.default_k).unwrap_or(d.default_k),
            max_k: s.max_k.unwrap_or(d.max_k),
            frame_cap: s.frame_cap.unwrap_or(d.frame_cap),
            event_summary_frames: s.event_summary_frames.unwrap_or(d.event_summary_frames),
            ..d
        };
        for name in s.disable.iter().chain(disable) {
            let tool = ToolKind::from_name(name).ok_or_else(|| {
                CliError::usage(format!("unknown tool {name:?} (global_browse, clip_search, frame_inspect)"))
            })?;
            cfg = cfg.without(tool);
        }
        cfg.check().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn abstain_policy(&self, flag: Option<&str>, seed: Option<u64>) -> CliResult<AbstainPolicy> {
        let seed = seed.or(self.file.eval.seed).unwrap_or(0);
        match flag.or(self.file.eval.abstain.as_deref()).unwrap_or("incorrect") {
            "incorrect" => Ok(AbstainPolicy::Incorrect),
            "random" => Ok(AbstainPolicy::RandomSeeded { seed }),
            other => Err(CliError::usage(format!("abstain policy must be incorrect or random, got {other:?}"))),
        }
    }
}

/// `dvd-synthdec` beside the current executable, else whatever `PATH` finds.
pub fn synthdec_path() -> PathBuf {
    let name = format!("dvd-synthdec{}", std::env::consts::EXE_SUFFIX);
    std::env::current_exe()
        .ok()
        .and_then(|exe| {
            // test binaries live one level below the target profile directory
            let dir = exe.parent()?;
            [dir.join(&name), dir.parent()?.join(&name)].into_iter().find(|p| p.is_file())
        })
        .unwrap_or_else(|| PathBuf::from(name))
}

pub fn synthdec_decoder(program: &Path) -> ExternalDecoder {
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
    let program = program.to_string_lossy().into_owned();
    ExternalDecoder {
        decode: DecoderCommand {
            program: program.clone(),
            args: s(&[
                "decode", "--input", "{input}", "--start", "{start}", "--duration", "{duration}", "--fps", "{fps}",
                "--out", "{output_dir}",
            ]),
        },
        probe: DecoderCommand { program, args: s(&["probe", "{input}"]) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(toml: &str, globals: GlobalArgs) -> Settings {
        Settings { file: FileConfig::parse(toml).unwrap(), base_dir: PathBuf::from("/cfg"), globals }
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = r#"
            [roles]
            llm = "scripted:plans/a.json"
            [tools]
            default_k = 8
            disable = ["frame_inspect"]
        "#;
        let s = settings(file, GlobalArgs::default());
        let llm = s.backend_config(RoleName::Llm).unwrap();
        assert_eq!(llm.kind, BackendKind::Scripted { script: "/cfg/plans/a.json".into() });
        let vlm = s.backend_config(RoleName::Vlm).unwrap();
        assert_eq!(vlm.kind, BackendKind::StubPalette);
        let tools = s.toolset_config(None, &[]).unwrap();
        assert_eq!(tools.default_k, 8);
        assert!(!tools.is_enabled(ToolKind::FrameInspect));
        assert_eq!(s.toolset_config(Some(4), &["clip_search".into()]).unwrap().enabled.len(), 1);

        let flags = GlobalArgs { llm: Some("scripted:b.json".into()), ..Default::default() };
        let s = settings(file, flags);
        let llm = s.backend_config(RoleName::Llm).unwrap();
        assert_eq!(llm.kind, BackendKind::Scripted { script: "b.json".into() });
    }

    #[test]
    fn named_backends_and_overrides() {
        let file = r#"
            [roles]
            embed = "small"
            [backends.small]
            kind = "stub-hash"
            dim = 32
            mode = "replay"
            fixture_dir = "fx"
        "#;
        let s = settings(file, GlobalArgs::default());
        let e = s.backend_config(RoleName::Embed).unwrap();
        assert_eq!(e.backend_id, "small");
        assert_eq!(e.kind, BackendKind::StubHash { dim: 32 });
        assert_eq!(e.mode, BackendMode::Replay);
        assert_eq!(e.fixture_dir, Some("/cfg/fx".into()));

        let forced = GlobalArgs { backend_mode: Some(BackendMode::Live), ..Default::default() };
        assert_eq!(settings(file, forced).backend_config(RoleName::Embed).unwrap().mode, BackendMode::Live);
    }

    #[test]
    fn bad_inputs_are_usage_errors() {
        assert!(FileConfig::parse("[nope]\nx = 1").is_err());
        let s = settings("", GlobalArgs::default());
        assert_eq!(s.backend_config(RoleName::Llm).unwrap_err().code, crate::error::EXIT_USAGE);
        assert!(s.toolset_config(None, &["teleport".into()]).is_err());
        assert!(s.toolset_config(Some(0), &[]).is_err());
        assert!(s.decoder(Some("vlc"), Path::new("a.mp4")).is_err());
    }
}
