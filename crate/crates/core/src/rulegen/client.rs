use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{RulegenConfig, RulegenError};
use crate::http::{self, RetryPolicy, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: &str) -> Self {
        Self {
            role: Role::System,
            content: content.to_string(),
        }
    }

    pub fn user(content: &str) -> Self {
        Self {
            role: Role::User,
            content: content.to_string(),
        }
    }

    pub fn assistant(content: &str) -> Self {
        Self {
            role: Role::Assistant,
            content: content.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    fn last_user(&self) -> String {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.clone())
            .unwrap_or_default()
    }
}

/// Anything that answers a chat request with the assistant's text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, RulegenError>;
}

fn message_content(reply: &Value) -> Option<String> {
    match reply {
        Value::String(s) => Some(s.clone()),
        Value::Object(_) => reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string),
        _ => None,
    }
}

/// Chat-completion client speaking the common `messages`/`choices` JSON schema.
pub struct HttpChatClient {
    url: String,
    key: Option<String>,
    client: reqwest::blocking::Client,
    policy: RetryPolicy,
}

impl HttpChatClient {
    /// Reads the API key from the configured environment variable.
    pub fn new(cfg: &RulegenConfig) -> Result<Self, ServiceError> {
        let key = http::read_api_key(&cfg.api_key_env_var)?;
        let timeout = Duration::from_secs_f64(cfg.timeout_secs);
        Ok(Self {
            url: cfg.endpoint_url.clone(),
            key,
            client: http::build_client(timeout)?,
            policy: RetryPolicy {
                max_retries: cfg.max_retries,
                initial_backoff: Duration::from_millis(cfg.initial_backoff_ms),
                timeout,
            },
        })
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, RulegenError> {
        let body = json!(request);
        let reply = http::post_json(&self.client, &self.url, self.key.as_deref(), &body, &self.policy)?;
        message_content(&reply).ok_or_else(|| {
            ServiceError::Malformed {
                url: self.url.clone(),
                message: "no choices[0].message.content in reply".into(),
            }
            .into()
        })
    }
}

/// A recorded request and the reply to serve for it. `response` is either the
/// assistant text or a full chat-completion reply object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ChatRequest,
    pub response: Value,
}

/// Replays recorded exchanges, matching requests on their message lists.
#[derive(Debug, Clone, Default)]
pub struct FixtureChatClient {
    exchanges: Vec<Exchange>,
}

impl FixtureChatClient {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        Self { exchanges }
    }

    pub fn from_json(text: &str) -> Result<Self, RulegenError> {
        let exchanges: Vec<Exchange> = serde_json::from_str(text).map_err(|e| RulegenError::Fixture(e.to_string()))?;
        Ok(Self::new(exchanges))
    }

    pub fn load(path: &Path) -> Result<Self, RulegenError> {
        let text = fs::read_to_string(path).map_err(|e| RulegenError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }
}

impl ChatBackend for FixtureChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, RulegenError> {
        let hit = self.exchanges.iter().find(|e| e.request.messages == request.messages);
        match hit {
            Some(e) => message_content(&e.response)
                .ok_or_else(|| RulegenError::Fixture("response is neither text nor a chat completion".into())),
            None => Err(RulegenError::FixtureMiss(request.last_user())),
        }
    }
}
