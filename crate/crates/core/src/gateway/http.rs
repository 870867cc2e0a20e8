//! Reference HTTP client for hosted chat-completion endpoints.
//!
//! Speaks the common OpenAI-style `/chat/completions` JSON shape with images
//! as base64 data URLs. Transient transport errors are retried up to three
//! times with exponential backoff; malformed content is never retried here —
//! parse failures are the callers' concern.

use std::time::Duration;

use serde_json::{json, Value};

use super::{base64_encode, Backend, ChatTranscript, GatewayError, Message, Part, Role, SamplingParams};

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    pub max_retries: u32,
    pub timeout: Duration,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            auth_env: "LLM_API_KEY".into(),
            max_retries: 3,
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn request_body(&self, transcript: &ChatTranscript, params: &SamplingParams) -> Value {
        let messages: Vec<Value> = transcript
            .messages()
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                let content: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        Part::Text { text } => json!({"type": "text", "text": text}),
                        Part::Image(img) => json!({
                            "type": "image_url",
                            "image_url": {
                                "url": format!(
                                    "data:image/{};base64,{}",
                                    img.format,
                                    base64_encode(&img.bytes)
                                )
                            }
                        }),
                    })
                    .collect();
                json!({"role": role, "content": content})
            })
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        transcript: &ChatTranscript,
        params: &SamplingParams,
    ) -> Result<Message, GatewayError> {
        let token = std::env::var(&self.config.auth_env).map_err(|_| {
            GatewayError::BackendUnreachable(format!(
                "auth token environment variable {} not set",
                self.config.auth_env
            ))
        })?;
        let body = self.request_body(transcript, params);

        let mut last_err = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 * (1 << (attempt - 1))));
            }
            let resp = self
                .client
                .post(&self.config.endpoint)
                .bearer_auth(&token)
                .json(&body)
                .send();
            match resp {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_server_error() {
                        last_err = format!("server error {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(GatewayError::BackendUnreachable(format!(
                            "endpoint returned {status}"
                        )));
                    }
                    let value: Value = resp
                        .json()
                        .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
                    let text = value["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| {
                            GatewayError::BackendUnreachable(
                                "response missing choices[0].message.content".into(),
                            )
                        })?;
                    return Ok(Message::assistant(text.to_string()));
                }
                Err(e) => {
                    last_err = e.to_string();
                    continue;
                }
            }
        }
        Err(GatewayError::BackendUnreachable(format!(
            "gave up after {} retries: {last_err}",
            self.config.max_retries
        )))
    }

    fn name(&self) -> &str {
        "http"
    }
}
