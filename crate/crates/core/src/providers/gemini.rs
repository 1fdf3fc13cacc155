use reqwest::RequestBuilder;
use serde_json::{json, Map, Value};

use super::{CompletionRequest, ProviderConfig, TemperaturePolicy, TokenUsage};

pub(super) fn completion_url(cfg: &ProviderConfig) -> String {
    format!("{}/v1beta/models/{}:generateContent", cfg.base_url, cfg.model_name)
}

pub(super) fn models_url(cfg: &ProviderConfig) -> String {
    format!("{}/v1beta/models", cfg.base_url)
}

pub(super) fn authorize(builder: RequestBuilder, key: &str) -> RequestBuilder {
    builder.header("x-goog-api-key", key)
}

/// Generation config carries only the temperature; output length is left to
/// the service.
pub(super) fn payload(cfg: &ProviderConfig, request: &CompletionRequest) -> Value {
    let mut generation = Map::new();
    if let TemperaturePolicy::Set(t) = cfg.temperature {
        generation.insert("temperature".into(), json!(t));
    }
    json!({
        "contents": [{"role": "user", "parts": [{"text": super::combined_prompt(request)}]}],
        "generationConfig": Value::Object(generation),
    })
}

pub(super) fn parse(body: &Value) -> Option<(String, Option<TokenUsage>)> {
    let parts = body.pointer("/candidates/0/content/parts")?.as_array()?;
    let text: String = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
    let usage = body.get("usageMetadata").and_then(|u| {
        Some(TokenUsage {
            input_tokens: u.get("promptTokenCount")?.as_u64()?,
            output_tokens: u.get("candidatesTokenCount")?.as_u64()?,
        })
    });
    Some((text, usage))
}
