//! HTTP client for a remote completion endpoint that reports token
//! log-probabilities. Requests are pure functions of the prompt, so retries
//! are safe.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendDescriptor, BackendError, BackendKind, LmBackend, SamplingParams, TokenLogProb,
};

pub const ENDPOINT_ENV: &str = "STQA_ENDPOINT";
pub const AUTH_TOKEN_ENV: &str = "STQA_AUTH_TOKEN";

/// Base of the log-probabilities the endpoint reports. Values are converted
/// to log2 at this boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Natural,
    Two,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default = "default_log_base")]
    pub log_base: LogBase,
    /// Endpoints without nucleus-sampling controls can still score.
    #[serde(default = "default_true")]
    pub supports_sampling: bool,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

fn default_log_base() -> LogBase {
    LogBase::Natural
}
fn default_true() -> bool {
    true
}
fn default_concurrency() -> usize {
    4
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            auth_token: None,
            log_base: default_log_base(),
            supports_sampling: true,
            max_concurrency: default_concurrency(),
            max_attempts: default_attempts(),
            initial_backoff_ms: default_backoff_ms(),
        }
    }

    /// Fills base URL and auth token from the environment when unset.
    pub fn with_env_defaults(mut self) -> Self {
        if self.base_url.is_empty() {
            if let Ok(url) = std::env::var(ENDPOINT_ENV) {
                self.base_url = url;
            }
        }
        if self.auth_token.is_none() {
            if let Ok(token) = std::env::var(AUTH_TOKEN_ENV) {
                self.auth_token = Some(token);
            }
        }
        self
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    top_p: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stop: Vec<String>,
    echo_logprobs: bool,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    prompt_tokens: Vec<String>,
    #[serde(default)]
    prompt_logprobs: Vec<f64>,
    #[serde(default)]
    completions: Vec<Completion>,
}

#[derive(Debug, Deserialize)]
struct Completion {
    text: String,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    descriptor: BackendDescriptor,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let descriptor = BackendDescriptor {
            backend_id: format!("remote:{}@{}", config.model, config.base_url),
            kind: BackendKind::Remote,
            max_concurrency: config.max_concurrency,
        };
        RemoteBackend {
            client: reqwest::blocking::Client::new(),
            config,
            descriptor,
        }
    }

    fn to_log2(&self, value: f64) -> f64 {
        match self.config.log_base {
            LogBase::Natural => value / std::f64::consts::LN_2,
            LogBase::Two => value,
        }
    }

    fn post(&self, request: &CompletionRequest<'_>) -> Result<CompletionResponse, BackendError> {
        let url = format!("{}/v1/completions", self.config.base_url.trim_end_matches('/'));
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut last_error = String::new();
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            let mut builder = self.client.post(&url).json(request);
            if let Some(token) = &self.config.auth_token {
                builder = builder.bearer_auth(token);
            }
            match builder.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json::<CompletionResponse>()
                            .map_err(|e| BackendError::Protocol(e.to_string()));
                    }
                    if status == reqwest::StatusCode::NOT_IMPLEMENTED {
                        return Err(BackendError::Capability {
                            backend_id: self.descriptor.backend_id.clone(),
                            capability: "requested operation".into(),
                        });
                    }
                    let body = response.text().unwrap_or_default();
                    last_error = format!("HTTP {status}: {body}");
                    if status.is_client_error() {
                        // 4xx will not improve with retries.
                        return Err(BackendError::Transport {
                            attempts: attempt,
                            message: last_error,
                        });
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(BackendError::Transport {
            attempts: self.config.max_attempts,
            message: last_error,
        })
    }
}

impl LmBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_text(&self, text: &str) -> Result<Vec<TokenLogProb>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyText);
        }
        let request = CompletionRequest {
            model: &self.config.model,
            prompt: text,
            max_tokens: 0,
            top_p: 1.0,
            n: 1,
            seed: None,
            stop: vec![],
            echo_logprobs: true,
        };
        let response = self.post(&request)?;
        if response.prompt_tokens.len() != response.prompt_logprobs.len() {
            return Err(BackendError::Protocol(format!(
                "{} prompt tokens but {} logprobs",
                response.prompt_tokens.len(),
                response.prompt_logprobs.len()
            )));
        }
        if response.prompt_tokens.is_empty() {
            return Err(BackendError::Protocol("no echoed prompt tokens".into()));
        }
        Ok(response
            .prompt_tokens
            .into_iter()
            .zip(response.prompt_logprobs)
            .map(|(token, lp)| TokenLogProb {
                token,
                logprob: self.to_log2(lp).min(0.0),
            })
            .collect())
    }

    fn sample_continuations(
        &self,
        prompt: &str,
        params: &SamplingParams,
    ) -> Result<Vec<String>, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        params.validate()?;
        if !self.config.supports_sampling {
            return Err(BackendError::Capability {
                backend_id: self.descriptor.backend_id.clone(),
                capability: "nucleus sampling".into(),
            });
        }
        let request = CompletionRequest {
            model: &self.config.model,
            prompt,
            max_tokens: params.max_new_tokens,
            top_p: params.top_p,
            n: params.num_samples,
            seed: params.seed,
            stop: params.stop_sequences.clone(),
            echo_logprobs: false,
        };
        let response = self.post(&request)?;
        Ok(response.completions.into_iter().map(|c| c.text).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_log_converted_to_bits() {
        let config = RemoteConfig::new("http://localhost:1", "m");
        let backend = RemoteBackend::new(config);
        let bits = backend.to_log2(-std::f64::consts::LN_2);
        assert!((bits - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn sampling_capability_gated() {
        let mut config = RemoteConfig::new("http://localhost:1", "m");
        config.supports_sampling = false;
        let backend = RemoteBackend::new(config);
        let params = SamplingParams {
            top_p: 0.5,
            max_new_tokens: 4,
            num_samples: 1,
            seed: None,
            stop_sequences: vec![],
        };
        assert!(matches!(
            backend.sample_continuations("hello", &params),
            Err(BackendError::Capability { .. })
        ));
    }

    #[test]
    fn backend_id_is_stable() {
        let config = RemoteConfig::new("http://host:8000", "gpt2");
        let a = RemoteBackend::new(config.clone());
        let b = RemoteBackend::new(config);
        assert_eq!(a.descriptor().backend_id, b.descriptor().backend_id);
        assert_eq!(a.descriptor().backend_id, "remote:gpt2@http://host:8000");
    }
}
