use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{
    Backend, BackendConfig, ContentPart, GatewayError, ModelRequest, ModelResponse, RateLimiter,
    RetryPolicy,
};

/// Chat-completions client. Transient failures (timeouts, HTTP 5xx, HTTP 429)
/// are retried with exponential backoff; other 4xx responses fail at once.
pub struct RemoteBackend {
    id: String,
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    limiter: RateLimiter,
}

enum Failure {
    Timeout,
    Transient(String),
    Fatal(GatewayError),
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let endpoint = config.endpoint_url.clone().expect("validated");
        let api_key = match &config.api_key_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::InvalidConfig(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            id: format!("remote:{}@{}", config.model, endpoint),
            agent,
            endpoint,
            model: config.model.clone(),
            api_key,
            retry: config.retry_policy(),
            limiter: RateLimiter::new(Duration::from_millis(config.min_interval_ms)),
        })
    }

    /// JSON body in the chat-completions shape, with images as data URLs.
    pub fn request_body(&self, request: &ModelRequest) -> Value {
        let parts: Vec<Value> = request
            .content
            .iter()
            .map(|part| match part {
                ContentPart::Text { text } => json!({"type": "text", "text": text}),
                ContentPart::Image {
                    media_type,
                    data_base64,
                } => json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{media_type};base64,{data_base64}")}
                }),
            })
            .collect();
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.role_prompt},
                {"role": "user", "content": parts},
            ],
        })
    }

    fn send_once(&self, body: &str) -> Result<String, Failure> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match req.send(body) {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => return Err(Failure::Timeout),
            Err(e) => return Err(Failure::Transient(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) if is_timeout(&e) => return Err(Failure::Timeout),
            Err(e) => return Err(Failure::Transient(e.to_string())),
        };
        match status {
            200..=299 => extract_content(&text).map_err(Failure::Fatal),
            429 | 500..=599 => Err(Failure::Transient(format!("HTTP {status}"))),
            _ => Err(Failure::Fatal(GatewayError::BackendRejected { status, body: text })),
        }
    }
}

fn is_timeout(e: &ureq::Error) -> bool {
    match e {
        ureq::Error::Timeout(_) => true,
        ureq::Error::Io(io) => matches!(
            io.kind(),
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
        ),
        _ => false,
    }
}

fn extract_content(body: &str) -> Result<String, GatewayError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(GatewayError::BadResponse(
            "missing choices[0].message.content".into(),
        )),
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let body = self.request_body(request).to_string();
        let started = Instant::now();
        let mut attempts = 0;
        let mut all_timeouts = true;
        loop {
            attempts += 1;
            self.limiter.acquire();
            let failure = match self.send_once(&body) {
                Ok(mut text) => {
                    if text.chars().count() > request.max_response_chars {
                        text = text.chars().take(request.max_response_chars).collect();
                    }
                    return Ok(ModelResponse {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend_id: self.id.clone(),
                        attempt_count: attempts,
                    });
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(f) => f,
            };
            let reason = match failure {
                Failure::Timeout => "timeout".to_string(),
                Failure::Transient(msg) => {
                    all_timeouts = false;
                    msg
                }
                Failure::Fatal(_) => unreachable!(),
            };
            if attempts > self.retry.max_retries {
                warn!(request = %request.request_id, attempts, %reason, "backend gave up");
                return Err(if all_timeouts {
                    GatewayError::BackendTimeout { attempts }
                } else {
                    GatewayError::BackendUnavailable {
                        attempts,
                        last: reason,
                    }
                });
            }
            let delay = self.retry.delay(attempts - 1);
            debug!(request = %request.request_id, attempts, %reason, ?delay, "retrying");
            std::thread::sleep(delay);
        }
    }
}
