use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, ClientError, ModelSpec, Probe, API_KEY_ENV};

/// Retries apply to transport failures and HTTP 429 only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
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
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Client for `POST {endpoint}/chat/completions`.
pub struct OpenAiCompatBackend {
    http: reqwest::Client,
    api_key: String,
    retry: RetryPolicy,
}

impl OpenAiCompatBackend {
    pub fn new(api_key: impl Into<String>) -> Self {
        OpenAiCompatBackend {
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client builds"),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn from_env() -> Result<Self, ClientError> {
        match std::env::var(API_KEY_ENV) {
            Ok(key) if !key.trim().is_empty() => Ok(Self::new(key.trim())),
            _ => Err(ClientError::MissingApiKey),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    async fn attempt(&self, url: &str, body: &ChatRequest<'_>) -> Result<String, Attempt> {
        let response = self
            .http
            .post(url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .await
            .map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(Attempt::Retryable("HTTP 429 Too Many Requests".into()));
        }
        let text = response.text().await.map_err(|e| Attempt::Retryable(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Fatal(ClientError::Http {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(ClientError::MalformedResponse(e.to_string())))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Attempt::Fatal(ClientError::MalformedResponse("no choices".into())))?;
        // A null content (some providers on refusal) is recorded as empty text.
        Ok(choice.message.content.unwrap_or_default())
    }
}

enum Attempt {
    Retryable(String),
    Fatal(ClientError),
}

#[async_trait]
impl Backend for OpenAiCompatBackend {
    async fn complete(&self, model: &ModelSpec, probe: &Probe<'_>) -> Result<String, ClientError> {
        let url = format!("{}/chat/completions", model.endpoint.trim_end_matches('/'));
        let body = ChatRequest {
            model: &model.model_id,
            messages: [ChatMessage {
                role: "user",
                content: probe.prompt,
            }],
            temperature: model.temperature,
            max_tokens: model.max_output_tokens,
        };
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&url, &body).await {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retryable(message)) => {
                    tracing::warn!(model = %model.model_id, attempt, %message, "retryable failure");
                    last = message;
                    if attempt < attempts {
                        tokio::time::sleep(backoff).await;
                        backoff *= 2;
                    }
                }
            }
        }
        Err(ClientError::Transport {
            attempts,
            message: last,
        })
    }
}
