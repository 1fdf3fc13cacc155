use reqwest::RequestBuilder;
use serde_json::{json, Map, Value};

use super::{CompletionRequest, ProviderConfig, TemperaturePolicy, TokenUsage};

pub(super) fn completion_url(cfg: &ProviderConfig) -> String {
    format!("{}/v1/chat/completions", cfg.base_url)
}

pub(super) fn models_url(cfg: &ProviderConfig) -> String {
    format!("{}/v1/models", cfg.base_url)
}

pub(super) fn authorize(builder: RequestBuilder, key: &str) -> RequestBuilder {
    builder.bearer_auth(key)
}

/// System and user turns go as separate messages. o-series models get no
/// `response_format`; other models ask for a JSON object.
pub(super) fn payload(cfg: &ProviderConfig, request: &CompletionRequest) -> Value {
    let mut body = Map::new();
    body.insert("model".into(), json!(cfg.model_name));
    body.insert(
        "messages".into(),
        json!([
            {"role": "system", "content": request.system},
            {"role": "user", "content": request.user},
        ]),
    );
    if let Some(field) = cfg.token_param.field_name() {
        body.insert(field.into(), json!(cfg.output_cap.unwrap_or(request.max_output_tokens)));
    }
    if let TemperaturePolicy::Set(t) = cfg.temperature {
        body.insert("temperature".into(), json!(t));
    }
    if cfg.structured_output() {
        body.insert("response_format".into(), json!({"type": "json_object"}));
    }
    Value::Object(body)
}

pub(super) fn parse(body: &Value) -> Option<(String, Option<TokenUsage>)> {
    let text = body.pointer("/choices/0/message/content")?.as_str()?.to_string();
    let usage = body.get("usage").and_then(|u| {
        Some(TokenUsage {
            input_tokens: u.get("prompt_tokens")?.as_u64()?,
            output_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Some((text, usage))
}
