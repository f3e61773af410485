//! Generic JSON-over-HTTP inference backend.
//!
//! Request: `{"model", "prompt", "image_b64", "sampler": {"kind", "p"}, "max_tokens"}`
//! with the image PNG-encoded. Response: `{"text": ...}`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, InferRequest, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRequestBody {
    pub model: String,
    pub prompt: String,
    pub image_b64: String,
    pub sampler: SamplerConfig,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferResponseBody {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(retry.saturating_sub(1) as i32))
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub model: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_tokens: u32,
    pub input_size: usize,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpConfig {
            url: url.into(),
            model: "paligemma-3b-mix-448".into(),
            token: None,
            timeout: Duration::from_secs(30),
            max_tokens: super::DEFAULT_MAX_TOKENS,
            input_size: super::DEFAULT_INPUT_SIZE,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: Client,
    retries: AtomicU64,
}

enum Attempt {
    Done(Result<String, BackendError>),
    Retry(String, Option<u16>),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.retry.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be >= 1".into()));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend {
            config,
            client,
            retries: AtomicU64::new(0),
        })
    }

    /// Retries performed so far across all calls.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn attempt(&self, body: &InferRequestBody) -> Attempt {
        let mut req = self.client.post(&self.config.url).json(body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string(), None),
        };
        let status = resp.status();
        if status.is_server_error() {
            let text = resp.text().unwrap_or_default();
            return Attempt::Retry(text, Some(status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Done(Err(BackendError::Status {
                status: status.as_u16(),
                attempts: 0,
                body: resp.text().unwrap_or_default(),
            }));
        }
        let bytes = match resp.bytes() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(e.to_string(), None),
        };
        Attempt::Done(
            serde_json::from_slice::<InferResponseBody>(&bytes)
                .map(|r| r.text)
                .map_err(|e| BackendError::Protocol(format!("bad response body: {e}"))),
        )
    }
}

impl Backend for HttpBackend {
    fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Transport failures and 5xx responses are retried with exponential
    /// backoff; client errors and malformed bodies are not.
    fn infer(&self, request: &InferRequest<'_>) -> Result<String, BackendError> {
        self.check_size(request.image)?;
        let body = InferRequestBody {
            model: self.config.model.clone(),
            prompt: request.prompt.text.to_string(),
            image_b64: STANDARD.encode(request.image.encode_png()),
            sampler: request.sampler,
            max_tokens: self.config.max_tokens,
        };
        let policy = self.config.retry;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let (message, status) = match self.attempt(&body) {
                Attempt::Done(Err(BackendError::Status { status, body, .. })) => {
                    return Err(BackendError::Status { status, attempts, body })
                }
                Attempt::Done(result) => return result,
                Attempt::Retry(message, status) => (message, status),
            };
            if attempts >= policy.max_attempts {
                return Err(match status {
                    Some(status) => BackendError::Status {
                        status,
                        attempts,
                        body: message,
                    },
                    None => BackendError::Transport { attempts, message },
                });
            }
            self.retries.fetch_add(1, Ordering::Relaxed);
            thread::sleep(policy.delay(attempts));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(1), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(1000));
        assert_eq!(p.delay(3), Duration::from_millis(2000));
    }

    #[test]
    fn body_wire_shape() {
        let body = InferRequestBody {
            model: "m".into(),
            prompt: "q".into(),
            image_b64: "AA==".into(),
            sampler: SamplerConfig::nucleus(0.9),
            max_tokens: 128,
        };
        let v = serde_json::to_value(&body).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "model": "m",
                "prompt": "q",
                "image_b64": "AA==",
                "sampler": {"kind": "nucleus", "p": 0.9},
                "max_tokens": 128
            })
        );
    }
}
