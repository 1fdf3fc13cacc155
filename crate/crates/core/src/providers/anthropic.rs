use reqwest::RequestBuilder;
use serde_json::{json, Map, Value};

use super::{CompletionRequest, ProviderConfig, TemperaturePolicy, TokenUsage, ANTHROPIC_OUTPUT_CAP};

const API_VERSION: &str = "2023-06-01";

pub(super) fn completion_url(cfg: &ProviderConfig) -> String {
    format!("{}/v1/messages", cfg.base_url)
}

pub(super) fn models_url(cfg: &ProviderConfig) -> String {
    format!("{}/v1/models", cfg.base_url)
}

pub(super) fn authorize(builder: RequestBuilder, key: &str) -> RequestBuilder {
    builder.header("x-api-key", key).header("anthropic-version", API_VERSION)
}

/// One user turn carrying system and user text, with a fixed output bound.
pub(super) fn payload(cfg: &ProviderConfig, request: &CompletionRequest) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(cfg.model_name));
    body.insert("max_tokens".into(), json!(cfg.output_cap.unwrap_or(ANTHROPIC_OUTPUT_CAP)));
    body.insert("messages".into(), json!([{"role": "user", "content": super::combined_prompt(request)}]));
    if let TemperaturePolicy::Set(t) = cfg.temperature {
        body.insert("temperature".into(), json!(t));
    }
    Value::Object(body)
}

pub(super) fn parse(body: &Value) -> Option<(String, Option<TokenUsage>)> {
    let blocks = body.get("content")?.as_array()?;
    let text: String = blocks
        .iter()
        .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
        .filter_map(|b| b.get("text").and_then(Value::as_str))
        .collect();
    if blocks.is_empty() {
        return None;
    }
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            input_tokens: u.get("input_tokens")?.as_u64()?,
            output_tokens: u.get("output_tokens")?.as_u64()?,
        })
    });
    Some((text, usage))
}
