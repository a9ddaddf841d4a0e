//! Chat-with-image model endpoints.
//!
//! The HTTP client speaks the chat-completions shape: one user message
//! whose content is a text part followed by base64 data-URL image parts.
//! Sampling is fixed at temperature 0.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use log::{debug, warn};
use serde_json::{json, Value};

use crate::error::EndpointError;

/// One request: a prompt plus zero or more encoded images (PNG/JPEG bytes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub prompt: String,
    pub images: Vec<Vec<u8>>,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            images: Vec::new(),
        }
    }

    pub fn with_image(mut self, bytes: Vec<u8>) -> Self {
        self.images.push(bytes);
        self
    }
}

pub trait Endpoint: Send + Sync {
    fn model_name(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError>;
}

impl<E: Endpoint + ?Sized> Endpoint for &E {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (**self).complete(request)
    }
}

impl<E: Endpoint + ?Sized> Endpoint for std::sync::Arc<E> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        (**self).complete(request)
    }
}

/// Endpoint backed by a closure. Used for offline runs and scripted tests.
pub struct FnEndpoint<F> {
    model: String,
    respond: F,
    calls: AtomicUsize,
}

impl<F> FnEndpoint<F>
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    pub fn new(model: impl Into<String>, respond: F) -> Self {
        Self {
            model: model.into(),
            respond,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Endpoint for FnEndpoint<F>
where
    F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync,
{
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.respond)(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        Self {
            base_delay: Duration::ZERO,
            ..Self::default()
        }
    }

    fn delay_before(&self, attempt: u32) -> Duration {
        // attempt is 1-based; the first retry waits base_delay
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(2))
    }
}

/// Calls the endpoint, retrying transient failures with exponential backoff.
/// Returns the response and the number of attempts it took.
pub fn complete_with_retry(
    endpoint: &dyn Endpoint,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<(String, u32), EndpointError> {
    let mut attempt = 1;
    loop {
        match endpoint.complete(request) {
            Ok(text) => {
                debug!("endpoint answered after {attempt} attempt(s)");
                return Ok((text, attempt));
            }
            Err(err) if err.is_retryable() && attempt < policy.max_attempts => {
                attempt += 1;
                warn!("attempt {} failed ({err}); retrying", attempt - 1);
                let delay = policy.delay_before(attempt);
                if !delay.is_zero() {
                    thread::sleep(delay);
                }
            }
            Err(EndpointError::Transient(msg)) => {
                return Err(EndpointError::Failure(format!(
                    "{msg} (after {attempt} attempts)"
                )))
            }
            Err(err) => return Err(err),
        }
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct HttpEndpoint {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(
        base_url: &str,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, EndpointError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EndpointError::Failure(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            client,
        })
    }

    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut content = vec![json!({"type": "text", "text": request.prompt})];
        for image in &request.images {
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": data_url(image)},
            }));
        }
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": content}],
        })
    }
}

impl Endpoint for HttpEndpoint {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut builder = self.client.post(&url).json(&self.request_body(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(classify_transport_error)?;
        let status = response.status();
        let body = response.text().map_err(classify_transport_error)?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(EndpointError::AuthFailure(format!("{status}: {body}")));
        }
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(EndpointError::Transient(format!("{status}: {body}")));
        }
        if !status.is_success() {
            return Err(EndpointError::Failure(format!("{status}: {body}")));
        }
        parse_completion(&body)
    }
}

fn classify_transport_error(err: reqwest::Error) -> EndpointError {
    if err.is_timeout() {
        EndpointError::Timeout
    } else {
        EndpointError::Transient(err.to_string())
    }
}

/// Extracts the assistant text from a chat-completions response body.
pub fn parse_completion(body: &str) -> Result<String, EndpointError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| EndpointError::Failure(format!("response is not JSON: {e}")))?;
    let content = &value["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return content as a list of typed parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(EndpointError::Failure(
            "response has no choices[0].message.content".into(),
        )),
    }
}

fn data_url(bytes: &[u8]) -> String {
    let mime = if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        "image/jpeg"
    } else {
        "image/png"
    };
    format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}
