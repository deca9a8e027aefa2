use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    prompts, require_go, split_candidates, with_retries, AgentError, CodeGenerator, CodegenOutput, CriticOutput,
    CriticRequest, VisualCritic,
};
use crate::program::{parse_program, DifferenceDescription};
use crate::raster::{encode_png_thumbnail, ImageBuffer};

/// Connection settings for a chat-completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperatures: [f64; 3],
    pub timeout_secs: f64,
    /// Longest image side sent to the backend.
    pub max_image_side: usize,
}

impl Default for AgentBackendConfig {
    fn default() -> Self {
        AgentBackendConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            api_key_env: "RETOUCH_API_KEY".into(),
            temperatures: [0.2, 0.7, 1.0],
            timeout_secs: 120.0,
            max_image_side: 768,
        }
    }
}

impl AgentBackendConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(AgentError::InvalidRequest("timeout must be positive".into()));
        }
        if self.temperatures.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(AgentError::InvalidRequest("temperatures must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One chat-completion call.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub system: String,
    pub user: String,
    pub images: Vec<&'a ImageBuffer>,
    pub temperature: f64,
}

pub trait ChatBackend: Send + Sync {
    /// Returns the assistant message text.
    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, AgentError>;
}

/// OpenAI-style `chat/completions` client.
pub struct HttpChatBackend {
    config: AgentBackendConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: AgentBackendConfig) -> Result<Self, AgentError> {
        let key = std::env::var(&config.api_key_env).map_err(|_| {
            AgentError::InvalidRequest(format!("environment variable {} is not set", config.api_key_env))
        })?;
        Self::new(config, key)
    }

    pub fn new(config: AgentBackendConfig, api_key: impl Into<String>) -> Result<Self, AgentError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(HttpChatBackend { config, api_key: api_key.into(), agent })
    }

    pub fn config(&self) -> &AgentBackendConfig {
        &self.config
    }

    fn body(&self, req: &ChatRequest<'_>) -> Result<Value, AgentError> {
        let mut content = vec![json!({"type": "text", "text": req.user})];
        for img in &req.images {
            let png = encode_png_thumbnail(img, self.config.max_image_side)
                .map_err(|e| AgentError::Backend(e.to_string()))?;
            let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png));
            content.push(json!({"type": "image_url", "image_url": {"url": url}}));
        }
        Ok(json!({
            "model": self.config.model,
            "temperature": req.temperature,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": content},
            ],
        }))
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response.
pub(crate) fn extract_content(body: &Value) -> Result<String, AgentError> {
    let content = &body["choices"][0]["message"]["content"];
    if let Some(s) = content.as_str() {
        return Ok(s.to_string());
    }
    // Some backends return a list of typed parts.
    if let Some(parts) = content.as_array() {
        let text: Vec<&str> = parts.iter().filter_map(|p| p["text"].as_str()).collect();
        if !text.is_empty() {
            return Ok(text.join(""));
        }
    }
    Err(AgentError::Backend("response has no choices[0].message.content".into()))
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, AgentError> {
        let body = serde_json::to_vec(&self.body(req)?).map_err(|e| AgentError::Backend(e.to_string()))?;
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json")
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send(&body[..])
            .map_err(|e| AgentError::Backend(format!("{}: {e}", self.config.endpoint)))?;
        let status = response.status();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AgentError::Backend(e.to_string()))?;
        if !status.is_success() {
            return Err(AgentError::Backend(format!("HTTP {status}: {}", text.chars().take(300).collect::<String>())));
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| AgentError::Backend(format!("bad JSON: {e}")))?;
        extract_content(&value)
    }
}

/// A call seen by [`ScriptedChat`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub system: String,
    pub user: String,
    pub n_images: usize,
    pub temperature: f64,
}

type Responder = dyn Fn(&ChatRequest<'_>) -> Result<String, AgentError> + Send + Sync;

enum Script {
    Queue(Mutex<VecDeque<Result<String, AgentError>>>),
    Function(Box<Responder>),
}

/// Canned backend for tests and demos.
pub struct ScriptedChat {
    script: Script,
    calls: Mutex<Vec<RecordedCall>>,
}

impl ScriptedChat {
    /// Replies in order; an exhausted queue is a backend error.
    pub fn new(replies: impl IntoIterator<Item = Result<String, AgentError>>) -> Self {
        ScriptedChat { script: Script::Queue(Mutex::new(replies.into_iter().collect())), calls: Mutex::new(Vec::new()) }
    }

    pub fn from_texts<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn responder(f: impl Fn(&ChatRequest<'_>) -> Result<String, AgentError> + Send + Sync + 'static) -> Self {
        ScriptedChat { script: Script::Function(Box::new(f)), calls: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, AgentError> {
        self.calls.lock().unwrap().push(RecordedCall {
            system: req.system.clone(),
            user: req.user.clone(),
            n_images: req.images.len(),
            temperature: req.temperature,
        });
        match &self.script {
            Script::Queue(q) => q
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(AgentError::Backend("scripted replies exhausted".into()))),
            Script::Function(f) => f(req),
        }
    }
}

/// Visual critic backed by a chat model.
pub struct ChatCritic {
    backend: Arc<dyn ChatBackend>,
    temperatures: [f64; 3],
}

impl ChatCritic {
    pub fn new(backend: Arc<dyn ChatBackend>, temperatures: [f64; 3]) -> Self {
        ChatCritic { backend, temperatures }
    }
}

impl VisualCritic for ChatCritic {
    fn describe(&self, req: &CriticRequest<'_>) -> Result<CriticOutput, AgentError> {
        req.validate()?;
        let n = req.n_candidates;
        let mut images = vec![req.source];
        let (system, user) = match &req.instruction {
            Some(instruction) => (
                prompts::instruction_system().to_string(),
                prompts::instruction_user(n, instruction, &req.source_stats, &req.history),
            ),
            None => {
                images.extend(req.refs.iter());
                let targets = req.ref_stats_mean.as_ref().ok_or_else(|| {
                    AgentError::InvalidRequest("reference statistics missing in reference mode".into())
                })?;
                (
                    prompts::CRITIC_SYSTEM.to_string(),
                    prompts::critic_user(n, &req.source_stats, targets, req.score_summary.as_ref()),
                )
            }
        };
        let ((descriptions, raw), attempts) = with_retries(&self.temperatures, |temperature| {
            let reply = self.backend.complete(&ChatRequest {
                system: system.clone(),
                user: user.clone(),
                images: images.clone(),
                temperature,
            })?;
            Ok(split_candidates(&reply, n).map(|d| (d, reply)))
        })?;
        Ok(CriticOutput { descriptions, attempts, raw })
    }
}

/// Code generator backed by a chat model. Text only.
pub struct ChatCodegen {
    backend: Arc<dyn ChatBackend>,
    temperatures: [f64; 3],
}

impl ChatCodegen {
    pub fn new(backend: Arc<dyn ChatBackend>, temperatures: [f64; 3]) -> Self {
        ChatCodegen { backend, temperatures }
    }
}

impl CodeGenerator for ChatCodegen {
    fn generate(&self, desc: &DifferenceDescription, save_name: &str) -> Result<CodegenOutput, AgentError> {
        require_go(desc)?;
        let text = if desc.raw_text.trim().is_empty() { desc.to_text() } else { desc.raw_text.clone() };
        let user = prompts::codegen_user(save_name, &text);
        let ((program, raw), attempts) = with_retries(&self.temperatures, |temperature| {
            let reply = self.backend.complete(&ChatRequest {
                system: prompts::CODEGEN_SYSTEM.to_string(),
                user: user.clone(),
                images: Vec::new(),
                temperature,
            })?;
            Ok(parse_program(&reply).map(|p| (p, reply)).map_err(|e| e.to_string()))
        })?;
        let program = program.with_provenance(format!("chat codegen, attempt {attempts}"));
        Ok(CodegenOutput { program, attempts, raw })
    }
}
