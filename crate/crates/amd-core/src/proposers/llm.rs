//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{base_url}/chat/completions` with the rendered system and user
//! prompts and extracts the first fenced code block of the reply (or the
//! whole reply when there is no fence). Connection-level failures retry
//! with exponential backoff and become `Unavailable` once the budget is
//! spent; malformed or truncated completions are per-proposal rejections
//! that never abort the run.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompts::{render_prompts, PromptLibrary};
use super::{ProposalRequest, ProposeError, Proposer};
use crate::mechanisms::SettingSpec;

fn default_temperature() -> f64 {
    0.8
}

fn default_max_tokens() -> u32 {
    512
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_initial_ms() -> u64 {
    500
}

fn default_backoff_factor() -> f64 {
    2.0
}

/// Wire and retry configuration for one endpoint. The key itself never
/// appears in config files, only the name of the environment variable
/// holding it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_initial_ms")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs == 0 {
            return Err("timeout must be positive".into());
        }
        if self.base_url.is_empty() {
            return Err("base_url must not be empty".into());
        }
        if std::env::var(&self.api_key_env).is_err() {
            return Err(format!(
                "API key environment variable `{}` is not set",
                self.api_key_env
            ));
        }
        Ok(())
    }

    fn backoff_schedule(&self) -> impl Iterator<Item = Duration> + '_ {
        (0..self.retries).map(|attempt| {
            let ms = self.backoff_initial_ms as f64 * self.backoff_factor.powi(attempt as i32);
            Duration::from_millis(ms as u64)
        })
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

pub struct LlmProposer {
    config: LlmEndpointConfig,
    setting: SettingSpec,
    library: PromptLibrary,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl LlmProposer {
    pub fn new(
        config: LlmEndpointConfig,
        setting: SettingSpec,
        library: PromptLibrary,
    ) -> Result<Self, String> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| format!("API key environment variable `{}` is not set", config.api_key_env))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| format!("cannot build HTTP client: {e}"))?;
        Ok(Self { config, setting, library, api_key, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn send_once(&self, system: &str, user: &str) -> Result<String, SendError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage { role: "system", content: system },
                ChatMessage { role: "user", content: user },
            ],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| SendError::Transport(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(SendError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(SendError::Fatal(format!("HTTP {status}")));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| SendError::Reject(format!("malformed completion body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| SendError::Reject("empty completion".into()))?;
        if choice.finish_reason.as_deref() == Some("length") {
            // Mid-token truncation: rejected, not repaired.
            return Err(SendError::Reject("truncated completion".into()));
        }
        let content = choice
            .message
            .content
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(SendError::Reject("empty completion".into()));
        }
        Ok(content)
    }
}

enum SendError {
    /// Retryable: connection problems, timeouts, 429/5xx.
    Transport(String),
    /// Per-proposal rejection: keep the run going.
    Reject(String),
    /// Not retryable and not a proposal problem (auth, bad request).
    Fatal(String),
}

impl Proposer for LlmProposer {
    fn propose(&mut self, request: &ProposalRequest) -> Result<String, ProposeError> {
        let (system, user) = render_prompts(request, &self.setting, &self.library)
            .map_err(|e| ProposeError::Unavailable(e.to_string()))?;
        let mut last_transport = String::new();
        let mut backoff = self.config.backoff_schedule();
        loop {
            match self.send_once(&system, &user) {
                Ok(reply) => return Ok(extract_code_block(&reply)),
                Err(SendError::Reject(reason)) => return Err(ProposeError::Rejected(reason)),
                Err(SendError::Fatal(reason)) => return Err(ProposeError::Unavailable(reason)),
                Err(SendError::Transport(reason)) => {
                    last_transport = reason;
                    match backoff.next() {
                        Some(delay) => std::thread::sleep(delay),
                        None => {
                            return Err(ProposeError::Unavailable(format!(
                                "endpoint down after {} retries: {last_transport}",
                                self.config.retries
                            )))
                        }
                    }
                }
            }
        }
    }

    fn name(&self) -> &'static str {
        "llm"
    }
}

/// First fenced code block of a reply, or the whole reply when there is
/// no fence. An optional language tag on the opening fence line is
/// dropped; code starting right after the fence is kept.
pub fn extract_code_block(reply: &str) -> String {
    if let Some(open) = reply.find("```") {
        let after_fence = &reply[open + 3..];
        let content = match after_fence.find('\n') {
            Some(line_end) => {
                let tag = after_fence[..line_end].trim();
                let looks_like_tag =
                    tag.is_empty() || (tag.len() <= 15 && tag.chars().all(|c| c.is_ascii_alphanumeric()));
                if looks_like_tag {
                    &after_fence[line_end + 1..]
                } else {
                    after_fence
                }
            }
            None => after_fence,
        };
        let end = content.find("```").unwrap_or(content.len());
        return content[..end].trim().to_string();
    }
    reply.trim().to_string()
}
