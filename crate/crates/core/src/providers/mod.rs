//! Chat-completion providers.
//!
//! Three HTTP families (OpenAI-style, Anthropic-style, Gemini-style) share one
//! [`HttpProvider`] that differs only in wire mapping; [`MockProvider`] runs
//! offline and deterministically. Model-name tables decide the output-token
//! parameter, context window and safety factor for each model.

mod anthropic;
mod gemini;
mod http;
mod mock;
mod openai;
mod retry;

use std::env;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::SafetyFactor;

pub use http::HttpProvider;
pub use mock::{mock_extract, MockProvider, DEFAULT_MOCK_VOCABULARY};
pub use retry::RetryPolicy;

pub const DEFAULT_CONTEXT_WINDOW: u64 = 4096;
pub const ANTHROPIC_OUTPUT_CAP: u32 = 4096;
pub const DEFAULT_TEMPERATURE: f64 = 0.0;

const CONTEXT_WINDOWS: &[(&str, u64)] = &[
    ("gpt-4o", 128_000),
    ("gpt-5", 128_000),
    ("o3", 128_000),
    ("claude-sonnet-4-5", 200_000),
    ("claude-haiku-4-5", 200_000),
    ("gemini-2-5-pro", 32_768),
    ("gemini-2-5-flash", 32_768),
];

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("missing credential: environment variable {var} is not set")]
    MissingCredential { var: &'static str },
    #[error("{provider} rejected the credentials (HTTP {status})")]
    Credential { provider: String, status: u16 },
    #[error("{provider} returned HTTP {status}: {body}")]
    Http { provider: String, status: u16, body: String },
    #[error("{provider} request timed out")]
    Timeout { provider: String },
    #[error("{provider} transport error: {message}")]
    Transport { provider: String, message: String },
    #[error("{provider} returned an unusable response: {message}")]
    InvalidResponse { provider: String, message: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    /// 429, 5xx, timeouts and connection failures are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Http { status, .. } => *status == 429 || (500..600).contains(status),
            ProviderError::Timeout { .. } | ProviderError::Transport { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProviderFamily {
    #[serde(rename = "openai-style")]
    OpenAi,
    #[serde(rename = "anthropic-style")]
    Anthropic,
    #[serde(rename = "gemini-style")]
    Gemini,
    #[serde(rename = "mock")]
    Mock,
}

impl ProviderFamily {
    /// Infers the family from a model name.
    pub fn for_model(model_name: &str) -> Self {
        let name = normalize_model_name(model_name);
        if name == "mock" || name.starts_with("mock-") {
            ProviderFamily::Mock
        } else if name.contains("claude") {
            ProviderFamily::Anthropic
        } else if name.contains("gemini") {
            ProviderFamily::Gemini
        } else {
            ProviderFamily::OpenAi
        }
    }

    pub fn credential_var(self) -> Option<&'static str> {
        match self {
            ProviderFamily::OpenAi => Some("OPENAI_API_KEY"),
            ProviderFamily::Anthropic => Some("ANTHROPIC_API_KEY"),
            ProviderFamily::Gemini => Some("GEMINI_API_KEY"),
            ProviderFamily::Mock => None,
        }
    }

    fn base_url_var(self) -> Option<&'static str> {
        match self {
            ProviderFamily::OpenAi => Some("OPENAI_BASE_URL"),
            ProviderFamily::Anthropic => Some("ANTHROPIC_BASE_URL"),
            ProviderFamily::Gemini => Some("GEMINI_BASE_URL"),
            ProviderFamily::Mock => None,
        }
    }

    fn default_base_url(self) -> &'static str {
        match self {
            ProviderFamily::OpenAi => "https://api.openai.com",
            ProviderFamily::Anthropic => "https://api.anthropic.com",
            ProviderFamily::Gemini => "https://generativelanguage.googleapis.com",
            ProviderFamily::Mock => "",
        }
    }
}

impl fmt::Display for ProviderFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderFamily::OpenAi => "openai-style",
            ProviderFamily::Anthropic => "anthropic-style",
            ProviderFamily::Gemini => "gemini-style",
            ProviderFamily::Mock => "mock",
        })
    }
}

/// Which request field bounds the generated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenParam {
    MaxTokens,
    MaxCompletionTokens,
    Implicit,
}

impl TokenParam {
    pub fn field_name(self) -> Option<&'static str> {
        match self {
            TokenParam::MaxTokens => Some("max_tokens"),
            TokenParam::MaxCompletionTokens => Some("max_completion_tokens"),
            TokenParam::Implicit => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperaturePolicy {
    Set(f64),
    Omit,
}

/// Lowercased, trimmed, with `.` and `_` folded to `-` so that
/// `Gemini-2.5-Flash` matches the `gemini-2-5-flash` table key.
pub fn normalize_model_name(name: &str) -> String {
    name.trim().to_lowercase().chars().map(|c| if c == '.' || c == '_' { '-' } else { c }).collect()
}

/// `o` followed by a digit: o1, o3, o4-mini.
pub fn is_o_series(model_name: &str) -> bool {
    let name = normalize_model_name(model_name);
    let mut chars = name.chars();
    chars.next() == Some('o') && chars.next().is_some_and(|c| c.is_ascii_digit())
}

pub fn is_gpt5_family(model_name: &str) -> bool {
    normalize_model_name(model_name).starts_with("gpt-5")
}

pub fn classify_token_param(model_name: &str) -> TokenParam {
    if ProviderFamily::for_model(model_name) == ProviderFamily::Gemini {
        TokenParam::Implicit
    } else if is_o_series(model_name) || is_gpt5_family(model_name) {
        TokenParam::MaxCompletionTokens
    } else {
        TokenParam::MaxTokens
    }
}

/// Override, else longest table key contained in the name, else 4096.
pub fn lookup_context_window(model_name: &str, override_tokens: Option<u64>) -> u64 {
    if let Some(tokens) = override_tokens {
        return tokens;
    }
    let name = normalize_model_name(model_name);
    CONTEXT_WINDOWS
        .iter()
        .filter(|(key, _)| name.contains(key))
        .max_by_key(|(key, _)| key.len())
        .map_or(DEFAULT_CONTEXT_WINDOW, |&(_, tokens)| tokens)
}

pub fn default_safety_factor(family: ProviderFamily) -> f64 {
    match family {
        ProviderFamily::OpenAi | ProviderFamily::Gemini => 0.75,
        ProviderFamily::Anthropic => 0.65,
        ProviderFamily::Mock => 1.0,
    }
}

/// Temperature is meaningless for o-series and GPT-5 models and is left out.
pub fn supports_temperature(model_name: &str) -> bool {
    !(is_o_series(model_name) || is_gpt5_family(model_name))
}

/// Command-line or caller overrides applied on top of the model tables.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub context_window: Option<u64>,
    pub safety_factor: Option<f64>,
    pub temperature: Option<f64>,
    pub base_url: Option<String>,
    pub timeout: Option<Duration>,
    pub retry: Option<RetryPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub family: ProviderFamily,
    pub model_name: String,
    pub token_param: TokenParam,
    pub context_window: u64,
    pub safety_factor: SafetyFactor,
    pub temperature: TemperaturePolicy,
    pub output_cap: Option<u32>,
    pub base_url: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl ProviderConfig {
    pub fn for_model(model_name: &str, overrides: ConfigOverrides) -> Result<Self, ProviderError> {
        let model = model_name.trim();
        if model.is_empty() {
            return Err(ProviderError::Config("model name is empty".into()));
        }
        let family = ProviderFamily::for_model(model);
        let safety = overrides.safety_factor.unwrap_or(default_safety_factor(family));
        let safety_factor = SafetyFactor::new(safety).map_err(|e| ProviderError::Config(e.to_string()))?;
        if overrides.context_window == Some(0) {
            return Err(ProviderError::Config("context window must be positive".into()));
        }
        let temperature = if supports_temperature(model) {
            TemperaturePolicy::Set(overrides.temperature.unwrap_or(DEFAULT_TEMPERATURE))
        } else {
            if overrides.temperature.is_some() {
                tracing::warn!(model, "temperature is not supported for this model and is omitted");
            }
            TemperaturePolicy::Omit
        };
        let base_url = overrides
            .base_url
            .or_else(|| family.base_url_var().and_then(|v| env::var(v).ok()))
            .unwrap_or_else(|| family.default_base_url().to_string());
        Ok(Self {
            family,
            model_name: model.to_string(),
            token_param: classify_token_param(model),
            context_window: lookup_context_window(model, overrides.context_window),
            safety_factor,
            temperature,
            output_cap: (family == ProviderFamily::Anthropic).then_some(ANTHROPIC_OUTPUT_CAP),
            base_url: base_url.trim_end_matches('/').to_string(),
            timeout: overrides.timeout.unwrap_or(Duration::from_secs(120)),
            retry: overrides.retry.unwrap_or_default(),
        })
    }

    /// Reads the family's API key from the environment.
    pub fn api_key(&self) -> Result<Option<String>, ProviderError> {
        let Some(var) = self.family.credential_var() else {
            return Ok(None);
        };
        match env::var(var) {
            Ok(key) if !key.trim().is_empty() => Ok(Some(key)),
            _ => Err(ProviderError::MissingCredential { var }),
        }
    }

    /// Whether the OpenAI JSON response mode is requested.
    pub fn structured_output(&self) -> bool {
        self.family == ProviderFamily::OpenAi && !is_o_series(&self.model_name)
    }

    pub fn provider_label(&self) -> String {
        format!("{} ({})", self.family, self.model_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    /// Output budget used when the family has no fixed cap.
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Body text exactly as returned.
    pub raw_text: String,
    pub structured: bool,
    pub latency_ms: u64,
    pub usage: Option<TokenUsage>,
}

#[async_trait]
pub trait Provider: Send + Sync {
    fn config(&self) -> &ProviderConfig;

    /// Cheap authenticated call made before any real work.
    async fn check_connection(&self) -> Result<(), ProviderError>;

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError>;
}

/// System and user text as one prompt, for families without a system turn.
pub fn combined_prompt(request: &CompletionRequest) -> String {
    format!("{}\n\n{}", request.system, request.user)
}

/// The JSON body sent for `request`. The mock family has no wire format and
/// reports the request itself.
pub fn wire_payload(config: &ProviderConfig, request: &CompletionRequest) -> serde_json::Value {
    match config.family {
        ProviderFamily::OpenAi => openai::payload(config, request),
        ProviderFamily::Anthropic => anthropic::payload(config, request),
        ProviderFamily::Gemini => gemini::payload(config, request),
        ProviderFamily::Mock => serde_json::to_value(request).expect("request serializes"),
    }
}

/// Builds the provider for a configuration.
pub fn build_provider(config: ProviderConfig) -> Result<Arc<dyn Provider>, ProviderError> {
    Ok(match config.family {
        ProviderFamily::Mock => Arc::new(MockProvider::new(config)),
        _ => Arc::new(HttpProvider::new(config)?),
    })
}
