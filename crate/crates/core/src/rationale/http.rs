use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::batch::{BatchOptions, ChatProvider, ChatRequest, ProviderError};

/// Endpoint, credentials and batch settings for the `rationales` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_attempts: 5,
            backoff_base_ms: 1000,
            concurrency: 4,
            timeout_secs: 120,
        }
    }
}

impl ProviderConfig {
    pub fn batch_options(&self, jitter_seed: u64) -> BatchOptions {
        BatchOptions {
            max_attempts: self.max_attempts,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
            concurrency: self.concurrency,
            jitter_seed,
        }
    }
}

/// OpenAI-style `chat/completions` client.
pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpProvider {
    /// Reads the API key from the configured environment variable; a missing
    /// variable means requests go out without an `Authorization` header.
    pub fn from_config(config: &ProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: config.endpoint.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        }
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(request).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status { status, body });
        }
        let value: serde_json::Value =
            serde_json::from_str(&body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse("no choices[0].message.content".into()))
    }
}
