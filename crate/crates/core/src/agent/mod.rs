//! The agentic search-and-answer loop: reason, pick one action, observe,
//! repeat until the model answers or the step cap forces an answer.

mod history;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::model_gateway::{ChatModel, Message, ModelError, ModelRequest, ModelResponse};
use crate::toolset::{clip_hits_observation, tool_schema, ToolError, ToolKind, ToolSession, Toolset, ToolsetConfig};

pub use history::{parse_steps, render_steps, ParsedStep};

pub const AGENT_SYSTEM_PROMPT: &str = include_str!("../../prompts/agent_system_v1.txt");
pub const FORCE_ANSWER_PROMPT: &str = include_str!("../../prompts/agent_force_answer_v1.txt");

/// Final answer when the forced-answer call itself fails.
pub const NO_ANSWER: &str = "[no-answer]";

const TRUNCATION_MARKER: &str = "\n[observation truncated]";
const ACTION_FENCE: &str = "```action";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    GlobalBrowse,
    ClipSearch,
    FrameInspect,
    Answer,
}

impl ActionKind {
    pub fn tool(self) -> Option<ToolKind> {
        match self {
            ActionKind::GlobalBrowse => Some(ToolKind::GlobalBrowse),
            ActionKind::ClipSearch => Some(ToolKind::ClipSearch),
            ActionKind::FrameInspect => Some(ToolKind::FrameInspect),
            ActionKind::Answer => None,
        }
    }
}

/// One element of the action space with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "parameters", rename_all = "snake_case")]
pub enum ActionCall {
    GlobalBrowse {},
    ClipSearch {
        query: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    FrameInspect { query: String, t_s: f64, t_e: f64 },
    Answer { answer: String },
}

impl ActionCall {
    pub fn kind(&self) -> ActionKind {
        match self {
            ActionCall::GlobalBrowse {} => ActionKind::GlobalBrowse,
            ActionCall::ClipSearch { .. } => ActionKind::ClipSearch,
            ActionCall::FrameInspect { .. } => ActionKind::FrameInspect,
            ActionCall::Answer { .. } => ActionKind::Answer,
        }
    }
}

/// Why a step did not go as the model intended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepError {
    MalformedAction { detail: String },
    ToolDisabled { tool: ToolKind },
    ToolFailed { code: String, message: String },
    ContentFiltered { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub index: usize,
    pub reasoning: String,
    /// `None` when the model produced no usable action.
    pub call: Option<ActionCall>,
    pub observation: String,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AnswerAction,
    StepCapForced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryStyle {
    #[default]
    TaggedBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub llm_backend_id: String,
    pub malformed_action_retries: u32,
    pub history_render_style: HistoryStyle,
    pub observation_cap_chars: usize,
    pub max_output_tokens: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_steps: 15,
            llm_backend_id: "llm".into(),
            malformed_action_retries: 1,
            history_render_style: HistoryStyle::TaggedBlocks,
            observation_cap_chars: 8000,
            max_output_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    pub video_id: String,
    pub user_query: String,
    pub steps: Vec<AgentStep>,
    pub final_answer: String,
    pub terminated_by: Termination,
    pub config: AgentConfig,
    pub tools: ToolsetConfig,
}

impl Episode {
    /// Copy with every timing field zeroed, for comparisons.
    pub fn without_timing(&self) -> Episode {
        let mut e = self.clone();
        for s in &mut e.steps {
            s.duration_ms = 0;
        }
        e
    }

    /// Tool actions in order; Answer steps and unusable steps excluded.
    pub fn tool_actions(&self) -> Vec<ToolKind> {
        self.steps
            .iter()
            .filter_map(|s| s.call.as_ref().and_then(|c| c.kind().tool()))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("episode aborted at step {step}: {source}")]
    Aborted {
        step: usize,
        #[source]
        source: ModelError,
    },
}

fn answer_descriptor() -> Value {
    json!({
        "name": "answer",
        "description": "Give the final answer to the question and stop.",
        "parameters": {
            "type": "object",
            "properties": {"answer": {"type": "string", "description": "The final answer."}},
            "required": ["answer"]
        }
    })
}

/// Enabled tool descriptors followed by the answer action.
pub fn action_schema(cfg: &ToolsetConfig) -> Value {
    let mut actions = tool_schema(cfg);
    actions.push(answer_descriptor());
    Value::Array(actions)
}

fn render_actions(schema: &Value) -> String {
    let mut out = Vec::new();
    for action in schema.as_array().into_iter().flatten() {
        let name = action["name"].as_str().unwrap_or_default();
        let props = action["parameters"]["properties"].as_object();
        let required: Vec<&str> = action["parameters"]["required"]
            .as_array()
            .map(|r| r.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        let props = props.cloned().unwrap_or_default();
        // required parameters first, in declared order
        let mut names: Vec<&str> = required.iter().copied().filter(|r| props.contains_key(*r)).collect();
        names.extend(props.keys().map(String::as_str).filter(|p| !required.contains(p)));
        let params: Vec<String> = names
            .iter()
            .map(|p| {
                let ty = props[*p]["type"].as_str().unwrap_or("any");
                if required.contains(p) {
                    format!("{p}: {ty}")
                } else {
                    format!("{p}?: {ty}")
                }
            })
            .collect();
        out.push(format!(
            "- {name}({}): {}",
            params.join(", "),
            action["description"].as_str().unwrap_or_default()
        ));
    }
    out.join("\n")
}

/// System preamble followed by the rendered question and steps.
pub fn render_history(query: &str, steps: &[AgentStep], schema: &Value) -> String {
    format!("{}\n{}", preamble(schema), render_steps(query, steps))
}

fn preamble(schema: &Value) -> String {
    AGENT_SYSTEM_PROMPT.replace("{actions}", &render_actions(schema))
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_end_matches('s').trim().parse().ok(),
        _ => None,
    }
    .filter(|x: &f64| x.is_finite())
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Validate raw `(name, parameters)` into an action. `k` is clamped to
/// `[1, max_k]`, times are coerced to numbers.
fn build_action(name: &str, params: &Map<String, Value>, max_k: usize) -> Result<ActionCall, String> {
    let text = |key: &str| -> Result<String, String> {
        params
            .get(key)
            .and_then(as_text)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| format!("{name} needs a non-empty {key:?}"))
    };
    let number = |key: &str| -> Result<f64, String> {
        params.get(key).and_then(as_number).ok_or_else(|| format!("{name} needs a numeric {key:?}"))
    };
    if name.eq_ignore_ascii_case("answer") {
        return Ok(ActionCall::Answer { answer: text("answer")? });
    }
    match ToolKind::from_name(name) {
        Some(ToolKind::GlobalBrowse) => Ok(ActionCall::GlobalBrowse {}),
        Some(ToolKind::ClipSearch) => {
            let k = match params.get("k") {
                None | Some(Value::Null) => None,
                Some(v) => {
                    let k = as_number(v).ok_or("clip_search k must be a number")?;
                    Some((k.round().max(1.0) as usize).min(max_k.max(1)))
                }
            };
            Ok(ActionCall::ClipSearch { query: text("query")?, k })
        }
        Some(ToolKind::FrameInspect) => {
            Ok(ActionCall::FrameInspect { query: text("query")?, t_s: number("t_s")?, t_e: number("t_e")? })
        }
        None => Err(format!("unknown action {name:?}")),
    }
}

/// Text of the first fenced action block, and the text with it removed.
fn split_action_block(text: &str) -> Option<(&str, String)> {
    let at = text.find(ACTION_FENCE)?;
    let body = &text[at + ACTION_FENCE.len()..];
    let end = body.find("```")?;
    let rest = format!("{}{}", &text[..at], &body[end + 3..]);
    Some((body[..end].trim(), rest.trim().to_string()))
}

/// Action from a model reply: the structured tool call when present, else a
/// fenced ```action block in the text.
pub fn parse_action(resp: &ModelResponse, max_k: usize) -> Result<ActionCall, String> {
    if let Some(call) = &resp.tool_call {
        let params = match &call.parameters {
            Value::Object(m) => m.clone(),
            Value::Null => Map::new(),
            Value::String(s) => serde_json::from_str(s).map_err(|e| format!("tool call arguments: {e}"))?,
            other => return Err(format!("tool call arguments must be an object, got {other}")),
        };
        return build_action(&call.name, &params, max_k);
    }
    let (block, _) = split_action_block(&resp.text).ok_or("no tool call and no ```action block in the reply")?;
    let value: Value = serde_json::from_str(block).map_err(|e| format!("action block is not JSON: {e}"))?;
    let Value::Object(mut obj) = value else {
        return Err("action block must be a JSON object".into());
    };
    let name = obj
        .remove("action")
        .or_else(|| obj.remove("name"))
        .and_then(|v| v.as_str().map(str::to_string))
        .ok_or("action block has no \"action\" name")?;
    let params = match obj.remove("parameters") {
        Some(Value::Object(p)) => p,
        _ => obj,
    };
    build_action(&name, &params, max_k)
}

/// Reasoning part of a reply: the text without any action block.
fn reasoning_of(resp: &ModelResponse) -> String {
    match split_action_block(&resp.text) {
        Some((_, rest)) if resp.tool_call.is_none() => rest,
        _ => resp.text.trim().to_string(),
    }
}

fn truncate_observation(text: String, cap: usize) -> String {
    let total = text.chars().count();
    if total <= cap {
        return text;
    }
    let keep = cap.saturating_sub(TRUNCATION_MARKER.chars().count());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// One answer-only call over the full history. Any failure yields [`NO_ANSWER`].
pub fn force_answer(query: &str, steps: &[AgentStep], schema: &Value, llm: &dyn ChatModel, cfg: &AgentConfig) -> String {
    let mut req = ModelRequest::new(
        llm.id(),
        vec![
            Message::system(preamble(schema)),
            Message::user(render_steps(query, steps)),
            Message::user(FORCE_ANSWER_PROMPT),
        ],
    );
    req.max_output_tokens = cfg.max_output_tokens;
    match llm.complete(&req) {
        Ok(r) => r.text,
        Err(e) => {
            tracing::warn!(error = %e, "forced answer failed");
            NO_ANSWER.to_string()
        }
    }
}

fn tool_error_step(e: &ToolError) -> (String, StepError) {
    match e {
        ToolError::Disabled(t) => (format!("Error: tool {t} is disabled."), StepError::ToolDisabled { tool: *t }),
        ToolError::Backend(ModelError::ContentFiltered(d)) => (
            format!("{} the request was blocked by the content filter.", crate::toolset::BLOCKED_MARKER),
            StepError::ContentFiltered { detail: d.clone() },
        ),
        other => (
            format!("Error ({}): {other}", other.code()),
            StepError::ToolFailed { code: other.code().to_string(), message: other.to_string() },
        ),
    }
}

fn execute(call: &ActionCall, query: &str, session: &mut ToolSession<'_>) -> (String, Option<StepError>) {
    let outcome = match call {
        ActionCall::GlobalBrowse {} => session.global_browse(query).map(|g| {
            let flag = g.degraded.then(|| StepError::ContentFiltered { detail: "event summary blocked".into() });
            (g.observation(), flag)
        }),
        ActionCall::ClipSearch { query, k } => session.clip_search(query, *k).map(|h| (clip_hits_observation(&h), None)),
        ActionCall::FrameInspect { query, t_s, t_e } => session.frame_inspect(query, *t_s, *t_e).map(|r| {
            let flag = r.blocked.then(|| StepError::ContentFiltered { detail: "frame inspection blocked".into() });
            (r.observation(), flag)
        }),
        ActionCall::Answer { .. } => Ok((String::new(), None)),
    };
    match outcome {
        Ok(pair) => pair,
        Err(e) => {
            let (obs, err) = tool_error_step(&e);
            (obs, Some(err))
        }
    }
}

/// Run one episode for `query`. Only a failing reasoning call that is not a
/// content-filter block aborts; everything else becomes an observation.
pub fn run_episode(query: &str, tools: &Toolset, llm: &dyn ChatModel, cfg: &AgentConfig) -> Result<Episode, AgentError> {
    if cfg.max_steps == 0 {
        return Err(AgentError::InvalidConfig("max_steps must be >= 1".into()));
    }
    let schema = action_schema(&tools.cfg);
    let system = preamble(&schema);
    let mut session = tools.session();
    let mut steps: Vec<AgentStep> = Vec::new();

    for index in 1..=cfg.max_steps {
        let started = Instant::now();
        let mut messages = vec![Message::system(system.clone()), Message::user(render_steps(query, &steps))];
        let mut retries_left = cfg.malformed_action_retries;
        let (reasoning, parsed) = loop {
            let mut req = ModelRequest::new(llm.id(), messages.clone()).with_tools(schema.clone());
            req.max_output_tokens = cfg.max_output_tokens;
            let resp = match llm.complete(&req) {
                Ok(r) => r,
                Err(ModelError::ContentFiltered(d)) => break (String::new(), Err(StepError::ContentFiltered { detail: d })),
                Err(e) => return Err(AgentError::Aborted { step: index, source: e }),
            };
            match parse_action(&resp, tools.cfg.max_k) {
                Ok(call) => break (reasoning_of(&resp), Ok(call)),
                Err(detail) if retries_left > 0 => {
                    retries_left -= 1;
                    messages.push(Message::assistant(resp.text.clone()));
                    messages.push(Message::user(format!(
                        "Your reply did not contain a valid action ({detail}). Reply again with exactly one action."
                    )));
                }
                Err(detail) => break (reasoning_of(&resp), Err(StepError::MalformedAction { detail })),
            }
        };

        let step = match parsed {
            Ok(ActionCall::Answer { answer }) => {
                let call = ActionCall::Answer { answer: answer.clone() };
                steps.push(AgentStep {
                    index,
                    reasoning,
                    call: Some(call),
                    observation: String::new(),
                    duration_ms: started.elapsed().as_millis() as u64,
                    error: None,
                });
                return Ok(Episode {
                    question_id: None,
                    video_id: tools.db.manifest.video_id.clone(),
                    user_query: query.to_string(),
                    steps,
                    final_answer: answer,
                    terminated_by: Termination::AnswerAction,
                    config: cfg.clone(),
                    tools: tools.cfg.clone(),
                });
            }
            Ok(call) => {
                let (obs, error) = execute(&call, query, &mut session);
                AgentStep {
                    index,
                    reasoning,
                    call: Some(call),
                    observation: truncate_observation(obs, cfg.observation_cap_chars),
                    duration_ms: 0,
                    error,
                }
            }
            Err(error) => {
                let observation = match &error {
                    StepError::MalformedAction { detail } => format!("Error: no valid action was given ({detail})."),
                    _ => format!("{} the reasoning request was blocked by the content filter.", crate::toolset::BLOCKED_MARKER),
                };
                AgentStep { index, reasoning, call: None, observation, duration_ms: 0, error: Some(error) }
            }
        };
        steps.push(AgentStep { duration_ms: started.elapsed().as_millis() as u64, ..step });
    }

    let final_answer = force_answer(query, &steps, &schema, llm, cfg);
    Ok(Episode {
        question_id: None,
        video_id: tools.db.manifest.video_id.clone(),
        user_query: query.to_string(),
        steps,
        final_answer,
        terminated_by: Termination::StepCapForced,
        config: cfg.clone(),
        tools: tools.cfg.clone(),
    })
}
