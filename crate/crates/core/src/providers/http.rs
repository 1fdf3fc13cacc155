use std::time::Instant;

use async_trait::async_trait;
use reqwest::{Client, RequestBuilder, StatusCode};
use serde_json::Value;

use super::{
    anthropic, gemini, openai, CompletionRequest, CompletionResponse, Provider, ProviderConfig, ProviderError,
    ProviderFamily, TokenUsage,
};

const ERROR_BODY_LIMIT: usize = 512;

/// Client for the three remote families.
pub struct HttpProvider {
    config: ProviderConfig,
    client: Client,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        if config.family == ProviderFamily::Mock {
            return Err(ProviderError::Config("the mock family has no HTTP client".into()));
        }
        let client =
            Client::builder().timeout(config.timeout).build().map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn label(&self) -> String {
        self.config.provider_label()
    }

    fn authorize(&self, builder: RequestBuilder, key: &str) -> RequestBuilder {
        match self.config.family {
            ProviderFamily::OpenAi => openai::authorize(builder, key),
            ProviderFamily::Anthropic => anthropic::authorize(builder, key),
            ProviderFamily::Gemini => gemini::authorize(builder, key),
            ProviderFamily::Mock => builder,
        }
    }

    fn key(&self) -> Result<String, ProviderError> {
        Ok(self.config.api_key()?.unwrap_or_default())
    }

    fn transport_error(&self, err: reqwest::Error) -> ProviderError {
        if err.is_timeout() {
            ProviderError::Timeout { provider: self.label() }
        } else {
            ProviderError::Transport { provider: self.label(), message: err.to_string() }
        }
    }

    async fn read(&self, builder: RequestBuilder) -> Result<Value, ProviderError> {
        let response = builder.send().await.map_err(|e| self.transport_error(e))?;
        let status = response.status();
        let body = response.text().await.map_err(|e| self.transport_error(e))?;
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(ProviderError::Credential { provider: self.label(), status: status.as_u16() });
        }
        if !status.is_success() {
            let mut body = body;
            if body.len() > ERROR_BODY_LIMIT {
                let cut = (0..=ERROR_BODY_LIMIT).rev().find(|&i| body.is_char_boundary(i)).unwrap_or(0);
                body.truncate(cut);
            }
            return Err(ProviderError::Http { provider: self.label(), status: status.as_u16(), body });
        }
        serde_json::from_str(&body).map_err(|e| ProviderError::InvalidResponse {
            provider: self.label(),
            message: format!("body is not JSON: {e}"),
        })
    }
}

#[async_trait]
impl Provider for HttpProvider {
    fn config(&self) -> &ProviderConfig {
        &self.config
    }

    async fn check_connection(&self) -> Result<(), ProviderError> {
        let key = self.key()?;
        let url = match self.config.family {
            ProviderFamily::OpenAi => openai::models_url(&self.config),
            ProviderFamily::Anthropic => anthropic::models_url(&self.config),
            ProviderFamily::Gemini => gemini::models_url(&self.config),
            ProviderFamily::Mock => return Ok(()),
        };
        self.config.retry.run(|| self.read(self.authorize(self.client.get(&url), &key))).await.map(|_| ())
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        let key = self.key()?;
        let payload = super::wire_payload(&self.config, request);
        let url = match self.config.family {
            ProviderFamily::OpenAi => openai::completion_url(&self.config),
            ProviderFamily::Anthropic => anthropic::completion_url(&self.config),
            ProviderFamily::Gemini => gemini::completion_url(&self.config),
            ProviderFamily::Mock => unreachable!("checked in constructor"),
        };
        let started = Instant::now();
        let body =
            self.config.retry.run(|| self.read(self.authorize(self.client.post(&url).json(&payload), &key))).await?;
        let parsed: Option<(String, Option<TokenUsage>)> = match self.config.family {
            ProviderFamily::OpenAi => openai::parse(&body),
            ProviderFamily::Anthropic => anthropic::parse(&body),
            ProviderFamily::Gemini => gemini::parse(&body),
            ProviderFamily::Mock => None,
        };
        let (raw_text, usage) = parsed.ok_or_else(|| ProviderError::InvalidResponse {
            provider: self.label(),
            message: "no completion text in response".into(),
        })?;
        Ok(CompletionResponse {
            raw_text,
            structured: self.config.structured_output(),
            latency_ms: started.elapsed().as_millis() as u64,
            usage,
        })
    }
}
