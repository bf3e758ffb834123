//! Blocking JSON POST with retry, shared by the chat and embedding clients.

use std::thread;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("{url} returned HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("{url} rejected the credentials (HTTP {status})")]
    Auth { url: String, status: u16 },
    #[error("request to {url} timed out after {seconds}s")]
    Timeout { url: String, seconds: f64 },
    #[error("missing API key: environment variable `{0}` is unset")]
    MissingKey(String),
    #[error("malformed response from {url}: {message}")]
    Malformed { url: String, message: String },
}

impl ServiceError {
    fn is_transient(&self) -> bool {
        match self {
            ServiceError::Transport { .. } | ServiceError::Timeout { .. } => true,
            ServiceError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

pub(crate) fn read_api_key(env_var: &str) -> Result<Option<String>, ServiceError> {
    if env_var.is_empty() {
        return Ok(None);
    }
    match std::env::var(env_var) {
        Ok(v) if !v.is_empty() => Ok(Some(v)),
        _ => Err(ServiceError::MissingKey(env_var.to_string())),
    }
}

pub(crate) fn build_client(timeout: Duration) -> Result<reqwest::blocking::Client, ServiceError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ServiceError::Transport {
            url: String::new(),
            message: e.to_string(),
        })
}

fn post_once(
    client: &reqwest::blocking::Client,
    url: &str,
    key: Option<&str>,
    body: &Value,
    timeout: Duration,
) -> Result<Value, ServiceError> {
    let mut req = client.post(url).json(body);
    if let Some(k) = key {
        req = req.bearer_auth(k);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            ServiceError::Timeout {
                url: url.to_string(),
                seconds: timeout.as_secs_f64(),
            }
        } else {
            ServiceError::Transport {
                url: url.to_string(),
                message: e.to_string(),
            }
        }
    })?;
    let status = resp.status().as_u16();
    if status == 401 || status == 403 {
        return Err(ServiceError::Auth {
            url: url.to_string(),
            status,
        });
    }
    let text = resp.text().map_err(|e| ServiceError::Transport {
        url: url.to_string(),
        message: e.to_string(),
    })?;
    if !(200..300).contains(&status) {
        return Err(ServiceError::Status {
            url: url.to_string(),
            status,
            body: text.chars().take(500).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| ServiceError::Malformed {
        url: url.to_string(),
        message: e.to_string(),
    })
}

/// Posts `body` and parses the JSON reply, retrying transient failures with exponential backoff.
pub(crate) fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    key: Option<&str>,
    body: &Value,
    policy: &RetryPolicy,
) -> Result<Value, ServiceError> {
    let mut delay = policy.initial_backoff;
    let mut attempt = 0;
    loop {
        match post_once(client, url, key, body, policy.timeout) {
            Err(e) if e.is_transient() && attempt < policy.max_retries => {
                log::warn!("attempt {} against {url} failed: {e}; retrying in {delay:?}", attempt + 1);
                thread::sleep(delay);
                delay = delay.saturating_mul(2);
                attempt += 1;
            }
            other => return other,
        }
    }
}
