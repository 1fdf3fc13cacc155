//! Model output parsing.
//!
//! Repair ladder: plain JSON, then the first fenced code block, then a bare
//! `"key": value` pair wrapped in braces, then the first balanced JSON value
//! in the text. Accepted shapes are an object keyed by the target user (one
//! entry or a list), a bare list of entries, or a single entry.

use serde_json::{Map, Value};
use thiserror::Error;

use super::KnowledgeLevel;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("response is empty")]
    Empty,
    #[error("no JSON value found in response starting {0:?}")]
    NotJson(String),
    #[error("JSON does not match the expected item shape")]
    Shape,
}

/// An entry before provenance is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedItem {
    pub text: String,
    pub level: KnowledgeLevel,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedResponse {
    pub items: Vec<ParsedItem>,
    /// Entries dropped for a level outside 0..=2 or missing fields.
    pub dropped: usize,
}

pub fn parse_response(raw: &str, target_user: &str) -> Result<ParsedResponse, ParseFailure> {
    let value = repair_json(raw)?;
    let entries = locate_entries(value, target_user).ok_or(ParseFailure::Shape)?;
    let mut parsed = ParsedResponse::default();
    for entry in entries {
        match parse_entry(&entry) {
            Some(item) => parsed.items.push(item),
            None => {
                parsed.dropped += 1;
                tracing::warn!(entry = %entry, "dropping invalid knowledge entry");
            }
        }
    }
    Ok(parsed)
}

fn repair_json(raw: &str) -> Result<Value, ParseFailure> {
    let text = raw.trim();
    if text.is_empty() {
        return Err(ParseFailure::Empty);
    }
    let attempts = [
        Some(text.to_string()),
        extract_code_fence(text).map(str::to_string),
        wrap_bare_pair(extract_code_fence(text).unwrap_or(text)),
        extract_balanced(text).map(str::to_string),
    ];
    for candidate in attempts.into_iter().flatten() {
        if let Ok(value) = serde_json::from_str::<Value>(candidate.trim()) {
            return Ok(value);
        }
    }
    Err(ParseFailure::NotJson(text.chars().take(80).collect()))
}

fn extract_code_fence(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // skip the info string, e.g. ```json
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    let block = body[..end].trim();
    (!block.is_empty()).then_some(block)
}

/// `"UID0": {...}` as shown in the prompt's example is not a JSON document
/// on its own; braces make it one.
fn wrap_bare_pair(text: &str) -> Option<String> {
    let t = text.trim();
    (t.starts_with('"') && t.contains(':')).then(|| format!("{{{t}}}"))
}

/// First balanced `{...}` or `[...]`, skipping brackets inside strings.
fn extract_balanced(text: &str) -> Option<&str> {
    let start = text.find(['{', '['])?;
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                if stack.pop() != Some(c) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn is_entry(map: &Map<String, Value>) -> bool {
    map.contains_key("text") && map.contains_key("level")
}

fn entries_of(value: Value) -> Option<Vec<Value>> {
    match value {
        Value::Array(items) => Some(items),
        Value::Object(ref map) if is_entry(map) => Some(vec![value]),
        _ => None,
    }
}

fn locate_entries(value: Value, target_user: &str) -> Option<Vec<Value>> {
    match value {
        Value::Array(items) => Some(items),
        Value::Object(mut map) => {
            if is_entry(&map) {
                return Some(vec![Value::Object(map)]);
            }
            if let Some(v) = map.remove(target_user) {
                return entries_of(v);
            }
            // keys such as "<@UID0>" or "user UID0"
            let key = map.keys().find(|k| k.contains(target_user))?.clone();
            entries_of(map.remove(&key)?)
        }
        _ => None,
    }
}

fn parse_entry(entry: &Value) -> Option<ParsedItem> {
    let map = entry.as_object()?;
    let text = map.get("text")?.as_str()?.trim();
    if text.is_empty() {
        return None;
    }
    let level = map.get("level")?.as_u64()?;
    let level = KnowledgeLevel::try_from(u8::try_from(level).ok()?).ok()?;
    let reason = map.get("reason").and_then(Value::as_str)?.trim().to_string();
    Some(ParsedItem { text: text.to_string(), level, reason })
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYED: &str = r#"{"UID7": [{"text":"CHI","level":2,"reason":"organized CHI submission"}]}"#;

    #[test]
    fn keyed_object() {
        let parsed = parse_response(KEYED, "UID7").unwrap();
        assert_eq!(
            parsed.items,
            vec![ParsedItem {
                text: "CHI".into(),
                level: KnowledgeLevel::Known,
                reason: "organized CHI submission".into()
            }]
        );
    }

    #[test]
    fn fenced_equals_plain() {
        let fenced = format!("Here you go:\n```json\n{KEYED}\n```\nthanks");
        assert_eq!(parse_response(&fenced, "UID7"), parse_response(KEYED, "UID7"));
    }

    #[test]
    fn garbage_fails() {
        assert!(matches!(parse_response("not json at all", "U"), Err(ParseFailure::NotJson(_))));
        assert_eq!(parse_response("   ", "U"), Err(ParseFailure::Empty));
        assert_eq!(parse_response("42", "U"), Err(ParseFailure::Shape));
    }

    #[test]
    fn shapes() {
        let bare = r#"[{"text":"Rust","level":1,"reason":"r"}]"#;
        assert_eq!(parse_response(bare, "U").unwrap().items.len(), 1);
        let single = r#"{"U": {"text":"Rust","level":0,"reason":"r"}}"#;
        assert_eq!(parse_response(single, "U").unwrap().items[0].level, KnowledgeLevel::Unknown);
        let pair = r#""U": [{"text":"Rust","level":2,"reason":"r"}]"#;
        assert_eq!(parse_response(pair, "U").unwrap().items.len(), 1);
        let mention = r#"{"<@U>": [{"text":"Go","level":2,"reason":"r"}]}"#;
        assert_eq!(parse_response(mention, "U").unwrap().items[0].text, "Go");
        let prose = r#"Sure! {"U": [{"text":"Go","level":2,"reason":"uses {braces}"}]} hope it helps"#;
        assert_eq!(parse_response(prose, "U").unwrap().items[0].reason, "uses {braces}");
    }

    #[test]
    fn out_of_range_level_dropped() {
        let raw = r#"[{"text":"A","level":3,"reason":"r"},{"text":"B","level":2,"reason":"r"},{"text":" ","level":1,"reason":"r"},{"text":"C","level":-1,"reason":"r"}]"#;
        let parsed = parse_response(raw, "U").unwrap();
        assert_eq!(parsed.items.len(), 1);
        assert_eq!(parsed.dropped, 3);
    }

    #[test]
    fn extra_fields_ignored() {
        let raw = r#"[{"text":"A","level":2,"reason":"r","confidence":0.9}]"#;
        assert_eq!(parse_response(raw, "U").unwrap().items.len(), 1);
    }
}
