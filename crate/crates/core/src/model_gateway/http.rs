//! OpenAI-compatible chat-completion and embedding client.

use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    check_request, ChatModel, Embedder, FinishReason, ModelError, ModelRequest, ModelResponse,
    Role, ToolCall, Usage,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuthStyle {
    /// `Authorization: Bearer <key>`
    #[default]
    Bearer,
    /// `api-key: <key>` (Azure OpenAI)
    ApiKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` or `/embeddings` is appended.
    pub endpoint: String,
    pub model_name: String,
    /// Environment variable holding the API key. Keys are never stored elsewhere.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub auth: AuthStyle,
    /// Extra query string, e.g. `api-version=2024-10-21`.
    #[serde(default)]
    pub query: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: Option<f32>,
    #[serde(default = "default_max_tokens_field")]
    pub max_tokens_field: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    /// Minimum spacing between requests to this backend.
    #[serde(default)]
    pub min_interval_ms: u64,
    #[serde(default = "default_true")]
    pub vision: bool,
    #[serde(default)]
    pub embedding_dim: Option<usize>,
}

fn default_temperature() -> Option<f32> {
    Some(0.0)
}

fn default_max_tokens_field() -> String {
    "max_completion_tokens".into()
}

fn default_timeout() -> f64 {
    120.0
}

fn default_true() -> bool {
    true
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            model_name: model_name.into(),
            api_key_env: None,
            auth: AuthStyle::Bearer,
            query: None,
            temperature: default_temperature(),
            max_tokens_field: default_max_tokens_field(),
            timeout_s: default_timeout(),
            min_interval_ms: 0,
            vision: true,
            embedding_dim: None,
        }
    }
}

pub struct HttpBackend {
    id: String,
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
    last_request: Mutex<Option<Instant>>,
}

impl HttpBackend {
    pub fn new(id: impl Into<String>, cfg: HttpConfig) -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            id: id.into(),
            cfg,
            client,
            last_request: Mutex::new(None),
        })
    }

    fn url(&self, path: &str) -> String {
        let mut url = format!("{}/{path}", self.cfg.endpoint.trim_end_matches('/'));
        if let Some(q) = &self.cfg.query {
            url.push('?');
            url.push_str(q);
        }
        url
    }

    fn throttle(&self) {
        if self.cfg.min_interval_ms == 0 {
            return;
        }
        let min = Duration::from_millis(self.cfg.min_interval_ms);
        let mut last = self.last_request.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < min {
                std::thread::sleep(min - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ModelError> {
        self.throttle();
        let mut builder = self.client.post(self.url(path)).json(body);
        if let Some(var) = &self.cfg.api_key_env {
            let key = std::env::var(var).map_err(|_| {
                ModelError::InvalidRequest(format!("environment variable {var} is not set"))
            })?;
            builder = match self.cfg.auth {
                AuthStyle::Bearer => builder.bearer_auth(key),
                AuthStyle::ApiKey => builder.header("api-key", key),
            };
        }
        let resp = builder
            .send()
            .map_err(|e| ModelError::Transport(e.without_url().to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .map_err(|e| ModelError::Transport(e.without_url().to_string()))?;
        classify_status(status, &text)?;
        serde_json::from_str(&text).map_err(|e| ModelError::BadResponse(e.to_string()))
    }
}

fn is_content_filter_body(body: &str) -> bool {
    body.contains("content_filter") || body.contains("ResponsibleAIPolicyViolation")
}

fn classify_status(status: u16, body: &str) -> Result<(), ModelError> {
    match status {
        200..=299 => Ok(()),
        429 => Err(ModelError::RateLimited { attempts: 1 }),
        400 if is_content_filter_body(body) => Err(ModelError::ContentFiltered(error_message(body))),
        500..=599 => Err(ModelError::Transport(format!("HTTP {status}: {}", error_message(body)))),
        _ => Err(ModelError::Provider {
            status,
            message: error_message(body),
        }),
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.chars().take(200).collect())
}

fn image_data_url(path: &Path) -> Result<String, ModelError> {
    let bytes = std::fs::read(path)
        .map_err(|e| ModelError::InvalidRequest(format!("image {}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        _ => "image/jpeg",
    };
    let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{b64}"))
}

/// Provider-shaped request body.
pub(crate) fn chat_body(cfg: &HttpConfig, req: &ModelRequest) -> Result<Value, ModelError> {
    let last_user = req.role_messages.iter().rposition(|m| m.role == Role::User);
    let mut messages = Vec::with_capacity(req.role_messages.len());
    for (i, m) in req.role_messages.iter().enumerate() {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        if Some(i) == last_user && !req.image_attachments.is_empty() {
            let mut parts = vec![json!({ "type": "text", "text": m.text })];
            for img in &req.image_attachments {
                parts.push(json!({ "type": "image_url", "image_url": { "url": image_data_url(img)? } }));
            }
            messages.push(json!({ "role": role, "content": parts }));
        } else {
            messages.push(json!({ "role": role, "content": m.text }));
        }
    }
    let mut body = json!({ "model": cfg.model_name, "messages": messages });
    body[cfg.max_tokens_field.as_str()] = json!(req.max_output_tokens);
    if let Some(t) = cfg.temperature {
        body["temperature"] = json!(t);
    }
    if let Some(Value::Array(tools)) = &req.tool_schema {
        let tools: Vec<Value> = tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t["name"],
                        "description": t["description"],
                        "parameters": t["parameters"],
                    }
                })
            })
            .collect();
        body["tools"] = Value::Array(tools);
        body["tool_choice"] = json!("auto");
    }
    Ok(body)
}

pub(crate) fn parse_chat_response(body: &Value) -> Result<ModelResponse, ModelError> {
    let choice = &body["choices"][0];
    if choice.is_null() {
        return Err(ModelError::BadResponse("response has no choices".into()));
    }
    let finish = choice["finish_reason"].as_str().unwrap_or("stop");
    if finish == "content_filter" {
        return Err(ModelError::ContentFiltered("completion stopped by content filter".into()));
    }
    let message = &choice["message"];
    let text = message["content"].as_str().unwrap_or_default().to_string();
    let tool_call = message["tool_calls"][0]["function"]
        .as_object()
        .map(|f| {
            let name = f.get("name").and_then(Value::as_str).unwrap_or_default().to_string();
            let parameters = match f.get("arguments") {
                Some(Value::String(s)) => {
                    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone()))
                }
                Some(v) => v.clone(),
                None => Value::Null,
            };
            ToolCall { name, parameters }
        });
    let finish_reason = match (&tool_call, finish) {
        (Some(_), _) => FinishReason::ToolCall,
        (None, "length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    let usage = Usage {
        prompt_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0) as u32,
        completion_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0) as u32,
    };
    Ok(ModelResponse { text, tool_call, usage, finish_reason })
}

impl ChatModel for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_vision(&self) -> bool {
        self.cfg.vision
    }

    fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, ModelError> {
        check_request(self, req)?;
        let body = chat_body(&self.cfg, req)?;
        let resp = self.post("chat/completions", &body)?;
        parse_chat_response(&resp)
    }
}

impl Embedder for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.cfg.embedding_dim.unwrap_or(0)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ModelError> {
        if texts.is_empty() {
            return Err(ModelError::InvalidRequest("no texts to embed".into()));
        }
        let resp = self.post("embeddings", &json!({ "model": self.cfg.model_name, "input": texts }))?;
        let mut rows: Vec<(usize, Vec<f32>)> = resp["data"]
            .as_array()
            .ok_or_else(|| ModelError::BadResponse("embedding response has no data".into()))?
            .iter()
            .enumerate()
            .map(|(pos, item)| {
                let index = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
                let vector = item["embedding"]
                    .as_array()
                    .map(|xs| xs.iter().filter_map(Value::as_f64).map(|x| x as f32).collect())
                    .unwrap_or_default();
                (index, vector)
            })
            .collect();
        rows.sort_by_key(|(i, _)| *i);
        if rows.len() != texts.len() {
            return Err(ModelError::BadResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                rows.len()
            )));
        }
        let d = self.dim();
        if d > 0 {
            if let Some((_, bad)) = rows.iter().find(|(_, v)| v.len() != d) {
                return Err(ModelError::BadResponse(format!(
                    "embedding has {} dims, expected {d}",
                    bad.len()
                )));
            }
        }
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_gateway::Message;

    #[test]
    fn status_mapping() {
        assert_eq!(classify_status(429, ""), Err(ModelError::RateLimited { attempts: 1 }));
        assert!(matches!(
            classify_status(400, r#"{"error":{"code":"content_filter","message":"blocked"}}"#),
            Err(ModelError::ContentFiltered(m)) if m == "blocked"
        ));
        assert!(matches!(classify_status(503, "down"), Err(ModelError::Transport(_))));
        assert!(matches!(classify_status(401, "no"), Err(ModelError::Provider { status: 401, .. })));
        assert!(classify_status(200, "").is_ok());
    }

    #[test]
    fn tool_call_response_parses() {
        let body = json!({
            "choices": [{
                "finish_reason": "tool_calls",
                "message": {
                    "content": "I should search.",
                    "tool_calls": [{"function": {"name": "clip_search", "arguments": "{\"query\":\"red car\",\"k\":16}"}}]
                }
            }],
            "usage": {"prompt_tokens": 10, "completion_tokens": 5}
        });
        let r = parse_chat_response(&body).unwrap();
        assert_eq!(r.finish_reason, FinishReason::ToolCall);
        let call = r.tool_call.unwrap();
        assert_eq!(call.name, "clip_search");
        assert_eq!(call.parameters["k"], 16);
        assert_eq!(r.usage.prompt_tokens, 10);
    }

    #[test]
    fn content_filter_finish_is_an_error() {
        let body = json!({"choices": [{"finish_reason": "content_filter", "message": {"content": null}}]});
        assert!(matches!(parse_chat_response(&body), Err(ModelError::ContentFiltered(_))));
    }

    #[test]
    fn body_attaches_images_and_tools() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("f.jpg");
        std::fs::write(&img, [0xffu8, 0xd8, 0xff]).unwrap();
        let req = ModelRequest::new("v", vec![Message::system("s"), Message::user("look")])
            .with_images(vec![img])
            .with_tools(json!([{"name": "answer", "description": "d", "parameters": {"type": "object"}}]));
        let body = chat_body(&HttpConfig::new("http://x", "m"), &req).unwrap();
        assert_eq!(body["messages"][1]["content"][1]["type"], "image_url");
        assert!(body["messages"][1]["content"][1]["image_url"]["url"]
            .as_str()
            .unwrap()
            .starts_with("data:image/jpeg;base64,"));
        assert_eq!(body["tools"][0]["function"]["name"], "answer");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_completion_tokens"], 2048);
    }
}
