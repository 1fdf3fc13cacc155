//! Offline extraction heuristic used in tests and dry runs.
//!
//! Candidate terms are words of two or more characters that start with an
//! uppercase letter (covers capitalized words and acronyms) or appear in the
//! vocabulary list. Only the target user's own messages are read. A term
//! seen three or more times is level 2, twice level 1, once level 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{CompletionRequest, CompletionResponse, Provider, ProviderConfig, ProviderError};
use crate::extractor::prompt::split_user_message;

pub const DEFAULT_MOCK_VOCABULARY: &str = include_str!("../../data/mock_vocabulary.txt");

pub struct MockProvider {
    config: ProviderConfig,
    vocabulary: BTreeSet<String>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(config: ProviderConfig) -> Self {
        Self::with_vocabulary(config, DEFAULT_MOCK_VOCABULARY)
    }

    /// `vocabulary` is newline-delimited; matching is case-insensitive.
    pub fn with_vocabulary(config: ProviderConfig, vocabulary: &str) -> Self {
        Self { config, vocabulary: parse_vocabulary(vocabulary), calls: AtomicUsize::new(0) }
    }

    pub fn with_vocabulary_file(config: ProviderConfig, path: &Path) -> std::io::Result<Self> {
        Ok(Self::with_vocabulary(config, &fs::read_to_string(path)?))
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn parse_vocabulary(text: &str) -> BTreeSet<String> {
    text.lines().map(|l| l.trim().to_lowercase()).filter(|l| !l.is_empty() && !l.starts_with('#')).collect()
}

#[async_trait]
impl Provider for MockProvider {
    fn config(&self) -> &ProviderConfig {
        &self.config
    }

    async fn check_connection(&self) -> Result<(), ProviderError> {
        Ok(())
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let started = Instant::now();
        let (target, inputdata) = split_user_message(&request.user).ok_or_else(|| ProviderError::InvalidResponse {
            provider: self.config.provider_label(),
            message: "user message lacks TARGETUSER/INPUTDATA sections".into(),
        })?;
        Ok(CompletionResponse {
            raw_text: extract_with(&self.vocabulary, inputdata, target),
            structured: true,
            latency_ms: started.elapsed().as_millis() as u64,
            usage: None,
        })
    }
}

#[derive(Deserialize)]
struct ScannedMessage {
    user: String,
    text: String,
}

/// Complete message records found in a (possibly truncated) JSON fragment.
/// Nested objects without a `text` field (thread replies) are skipped.
fn scan_messages(fragment: &str) -> Vec<ScannedMessage> {
    if let Ok(all) = serde_json::from_str::<Vec<Value>>(fragment) {
        return all.into_iter().filter_map(|v| serde_json::from_value(v).ok()).collect();
    }
    let mut found = Vec::new();
    let mut pos = 0;
    while let Some(rel) = fragment[pos..].find('{') {
        let start = pos + rel;
        let mut stream = serde_json::Deserializer::from_str(&fragment[start..]).into_iter::<ScannedMessage>();
        match stream.next() {
            Some(Ok(message)) => {
                found.push(message);
                pos = start + stream.byte_offset();
            }
            _ => pos = start + 1,
        }
    }
    found
}

/// Drops `<@U123>` mentions and `<https://...>` links.
fn strip_markup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '<' => depth += 1,
            '>' if depth > 0 => {
                depth -= 1;
                out.push(' ');
            }
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '+' || c == '#' || c == '-'))
        .map(|w| w.trim_matches('-'))
        .filter(|w| w.chars().count() >= 2)
}

pub fn mock_extract(inputdata: &str, target_user: &str) -> String {
    extract_with(&parse_vocabulary(DEFAULT_MOCK_VOCABULARY), inputdata, target_user)
}

fn extract_with(vocabulary: &BTreeSet<String>, inputdata: &str, target_user: &str) -> String {
    // normalized term -> (first surface form, count)
    let mut terms: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for message in scan_messages(inputdata).into_iter().filter(|m| m.user == target_user) {
        let text = strip_markup(&message.text);
        for word in words(&text) {
            let key = word.to_lowercase();
            let starts_upper = word.chars().next().is_some_and(char::is_uppercase);
            if starts_upper || vocabulary.contains(&key) {
                terms.entry(key).or_insert_with(|| (word.to_string(), 0)).1 += 1;
            }
        }
    }
    let items: Vec<Value> = terms
        .into_values()
        .map(|(surface, count)| {
            let level = match count {
                0 | 1 => 0,
                2 => 1,
                _ => 2,
            };
            let times = if count == 1 { "time" } else { "times" };
            json!({
                "text": surface,
                "level": level,
                "reason": format!("mentioned {count} {times} by {target_user} in INPUTDATA"),
            })
        })
        .collect();
    let mut body = serde_json::Map::new();
    body.insert(target_user.to_string(), Value::Array(items));
    serde_json::to_string(&Value::Object(body)).expect("json serializes")
}
