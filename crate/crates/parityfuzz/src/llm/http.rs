//! HTTP adapter speaking the OpenAI-style chat-completion shape. The wire
//! layer is behind the [`Transport`] trait so retry behaviour is testable
//! without a network; the default transport is a blocking reqwest client.

use std::thread;
use std::time::Duration;

use serde_json::json;

use super::{approximate_usage, parse_response, ChatModel, LlmError, ModelResponse, PromptRequest, TokenUsage};

/// One POST of a JSON body; errors are treated as transient and retried.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("blocking client with static options");
        Self { client }
    }
}

impl Transport for ReqwestTransport {
    fn post(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, String> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(format!("http {status}: {body}"));
        }
        response.json().map_err(|e| e.to_string())
    }
}

pub struct HttpAdapter {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
    transport: Box<dyn Transport>,
}

impl HttpAdapter {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        max_retries: u32,
    ) -> Self {
        Self::with_transport(
            endpoint,
            model,
            api_key,
            max_retries,
            Duration::from_millis(250),
            Box::new(ReqwestTransport::new(Duration::from_secs(120))),
        )
    }

    pub fn with_transport(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        max_retries: u32,
        backoff: Duration,
        transport: Box<dyn Transport>,
    ) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            max_retries,
            backoff,
            transport,
        }
    }

    fn body_for(&self, req: &PromptRequest) -> serde_json::Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt_text()}],
            "temperature": req.temperature,
            "seed": req.seed,
        })
    }
}

impl ChatModel for HttpAdapter {
    fn complete(&self, req: &PromptRequest) -> Result<ModelResponse, LlmError> {
        let body = self.body_for(req);
        let mut last_error = String::new();
        let attempts = self.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                // Exponential backoff: base, 2*base, 4*base, ...
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.transport.post(&self.endpoint, self.api_key.as_deref(), &body) {
                Ok(value) => {
                    let text = value["choices"][0]["message"]["content"]
                        .as_str()
                        .ok_or_else(|| LlmError::Parse {
                            template: req.template_id.to_string(),
                            reason: "response has no choices[0].message.content".into(),
                        })?
                        .to_string();
                    let usage = match value.get("usage") {
                        Some(u) => TokenUsage {
                            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
                            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
                        },
                        None => approximate_usage(&req.prompt_text(), &text),
                    };
                    let (parsed, _skipped) = parse_response(req.template_id, &text);
                    return Ok(ModelResponse { text, parsed, usage });
                }
                Err(message) => last_error = message,
            }
        }
        Err(LlmError::Transport { attempts, message: last_error })
    }
}
