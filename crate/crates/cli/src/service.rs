//! Newline-delimited JSON tool service.
//!
//! Each request line is `{"id": .., "method": .., "params": {..}}`; each gets
//! exactly one response line `{"id": .., "result": ..}` or
//! `{"id": .., "error": {"code": .., "message": ..}}`. Requests on one
//! connection run concurrently, so responses may come back out of order.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use dvd_core::agent::run_episode;
use dvd_core::toolset::{tool_descriptor, ToolError, ToolKind, Toolset};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::commands::AgentSetup;

const POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq)]
pub struct RpcError {
    pub code: &'static str,
    pub message: String,
}

impl RpcError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        RpcError { code, message: message.into() }
    }
}

impl From<ToolError> for RpcError {
    fn from(e: ToolError) -> Self {
        RpcError::new(e.code(), e.to_string())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BrowseParams {
    #[serde(default)]
    video_id: Option<String>,
    #[serde(default)]
    query: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchParams {
    #[serde(default)]
    video_id: Option<String>,
    query: String,
    #[serde(default)]
    k: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InspectParams {
    #[serde(default)]
    video_id: Option<String>,
    query: String,
    t_s: f64,
    t_e: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AskParams {
    #[serde(default)]
    video_id: Option<String>,
    question: String,
}

fn params<T: DeserializeOwned>(p: Value) -> Result<T, RpcError> {
    let p = if p.is_null() { json!({}) } else { p };
    serde_json::from_value(p).map_err(|e| RpcError::new("invalid-params", e.to_string()))
}

/// Read-only tool server over one or more databases keyed by video id.
pub struct Service {
    dbs: BTreeMap<String, Toolset>,
    agent: Option<AgentSetup>,
}

impl Service {
    pub fn new(toolsets: Vec<Toolset>, agent: Option<AgentSetup>) -> Result<Service, String> {
        let mut dbs = BTreeMap::new();
        for t in toolsets {
            let id = t.db.manifest.video_id.clone();
            if dbs.insert(id.clone(), t).is_some() {
                return Err(format!("video id {id} is hosted twice"));
            }
        }
        if dbs.is_empty() {
            return Err("no databases to serve".into());
        }
        Ok(Service { dbs, agent })
    }

    fn toolset(&self, video_id: Option<&str>) -> Result<&Toolset, RpcError> {
        match video_id {
            Some(id) => self
                .dbs
                .get(id)
                .ok_or_else(|| RpcError::new("invalid-params", format!("unknown video_id {id:?}"))),
            None if self.dbs.len() == 1 => Ok(self.dbs.values().next().expect("one database")),
            None => Err(RpcError::new("invalid-params", "video_id is required when several databases are served")),
        }
    }

    fn list_tools(&self) -> Value {
        // every hosted database shares one tool configuration
        let cfg = &self.dbs.values().next().expect("non-empty").cfg;
        let mut tools: Vec<Value> = ToolKind::ALL
            .into_iter()
            .map(|t| {
                let mut d = tool_descriptor(t, cfg);
                d["enabled"] = json!(cfg.is_enabled(t));
                d
            })
            .collect();
        tools.push(json!({
            "name": "ask",
            "description": "Run the search-and-answer agent on a question and return its final answer and episode.",
            "parameters": {
                "type": "object",
                "properties": {"question": {"type": "string", "description": "The question to answer."}},
                "required": ["question"]
            },
            "enabled": self.agent.is_some(),
        }));
        json!({ "tools": tools, "videos": self.dbs.keys().collect::<Vec<_>>() })
    }

    pub fn dispatch(&self, method: &str, p: Value) -> Result<Value, RpcError> {
        match method {
            "list_tools" => Ok(self.list_tools()),
            "global_browse" => {
                let p: BrowseParams = params(p)?;
                let summary = self.toolset(p.video_id.as_deref())?.session().global_browse(&p.query)?;
                Ok(serde_json::to_value(summary).expect("serializable"))
            }
            "clip_search" => {
                let p: SearchParams = params(p)?;
                let hits = self.toolset(p.video_id.as_deref())?.clip_search(&p.query, p.k)?;
                Ok(json!({ "hits": hits }))
            }
            "frame_inspect" => {
                let p: InspectParams = params(p)?;
                let r = self.toolset(p.video_id.as_deref())?.frame_inspect(&p.query, p.t_s, p.t_e)?;
                Ok(serde_json::to_value(r).expect("serializable"))
            }
            "ask" => {
                let p: AskParams = params(p)?;
                let tools = self.toolset(p.video_id.as_deref())?;
                let agent = self
                    .agent
                    .as_ref()
                    .ok_or_else(|| RpcError::new("backend-error", "no reasoner backend configured"))?;
                let ep = run_episode(&p.question, tools, agent.llm.as_ref(), &agent.cfg)
                    .map_err(|e| RpcError::new("backend-error", e.to_string()))?;
                Ok(json!({ "answer": ep.final_answer, "episode": ep }))
            }
            other => Err(RpcError::new("invalid-method", format!("unknown method {other:?}"))),
        }
    }

    /// Response to one request line; `None` for blank lines.
    pub fn handle_line(&self, line: &str) -> Option<Value> {
        if line.trim().is_empty() {
            return None;
        }
        let (id, outcome) = match serde_json::from_str::<Value>(line) {
            Err(e) => (Value::Null, Err(RpcError::new("invalid-request", format!("not JSON: {e}")))),
            Ok(Value::Object(mut req)) => {
                let id = req.remove("id").unwrap_or(Value::Null);
                let p = req.remove("params").unwrap_or(Value::Null);
                let outcome = match req.remove("method") {
                    Some(Value::String(m)) => self.dispatch(&m, p),
                    _ => Err(RpcError::new("invalid-request", "missing method")),
                };
                (id, outcome)
            }
            Ok(_) => (Value::Null, Err(RpcError::new("invalid-request", "request must be a JSON object"))),
        };
        Some(match outcome {
            Ok(result) => json!({ "id": id, "result": result }),
            Err(e) => json!({ "id": id, "error": { "code": e.code, "message": e.message } }),
        })
    }

    /// Serve one connection until end of input, `stop`, or a transport
    /// error. In-flight requests finish before returning.
    pub fn serve_stream<R: BufRead, W: Write + Send>(&self, mut input: R, output: W, stop: &AtomicBool) -> io::Result<()> {
        let output = Mutex::new(output);
        let broken = AtomicBool::new(false);
        thread::scope(|scope| {
            let mut line = String::new();
            loop {
                if broken.load(Ordering::SeqCst) {
                    return Err(io::Error::new(ErrorKind::BrokenPipe, "client went away"));
                }
                match input.read_line(&mut line) {
                    Ok(0) => return Ok(()),
                    Ok(_) => {
                        let req = std::mem::take(&mut line);
                        let (output, broken) = (&output, &broken);
                        scope.spawn(move || {
                            if let Some(resp) = self.handle_line(&req) {
                                let mut out = output.lock().unwrap_or_else(|e| e.into_inner());
                                let ok = serde_json::to_writer(&mut *out, &resp).is_ok()
                                    && out.write_all(b"\n").is_ok()
                                    && out.flush().is_ok();
                                if !ok {
                                    broken.store(true, Ordering::SeqCst);
                                }
                            }
                        });
                    }
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                        if stop.load(Ordering::SeqCst) {
                            return Ok(());
                        }
                    }
                    Err(e) if e.kind() == ErrorKind::Interrupted => {}
                    Err(e) => return Err(e),
                }
            }
        })
    }

    /// Accept connections until `stop` is set, then wait for open ones.
    pub fn serve_tcp(self: &Arc<Self>, listener: TcpListener, stop: Arc<AtomicBool>) -> io::Result<()> {
        listener.set_nonblocking(true)?;
        let mut workers = Vec::new();
        while !stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    tracing::info!(%peer, "connection");
                    let (svc, stop) = (Arc::clone(self), Arc::clone(&stop));
                    workers.push(thread::spawn(move || {
                        if let Err(e) = svc.serve_connection(stream, &stop) {
                            tracing::warn!(%peer, "connection closed: {e}");
                        }
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => return Err(e),
            }
            workers.retain(|w| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    fn serve_connection(&self, stream: TcpStream, stop: &AtomicBool) -> io::Result<()> {
        stream.set_nonblocking(false)?;
        stream.set_read_timeout(Some(POLL))?;
        let reader = BufReader::new(stream.try_clone()?);
        self.serve_stream(reader, stream, stop)
    }
}
