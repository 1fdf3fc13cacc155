//! Per-user, per-channel knowledge extraction.
//!
//! For each channel a target user belongs to, the channel log is chunked to
//! the model's budget, each chunk is sent with the extraction prompt, and the
//! parsed items are written to `<out>/<model>/<user>/<channel>.json`. Channels
//! whose output already exists are not queried again.

pub mod parse;
pub mod prompt;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{plan_chunks, ChunkError, ChunkParams, DEFAULT_RESERVED_OUTPUT};
use crate::fsutil::{path_component, read_json, write_json_atomic};
use crate::ingest::{collect_input, Collected, Export, MembershipIndex, SkipReason};
use crate::profiler::normalize_term;
use crate::providers::{CompletionRequest, Provider, ProviderError, ProviderFamily};

pub use parse::{parse_response, ParseFailure, ParsedItem, ParsedResponse};
pub use prompt::{build_prompt, Prompt};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("chunk budget for user {user} in channel {channel}: {source}")]
    Budget {
        user: String,
        channel: String,
        #[source]
        source: ChunkError,
    },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum KnowledgeLevel {
    Unknown = 0,
    MaybeKnown = 1,
    Known = 2,
}

impl TryFrom<u8> for KnowledgeLevel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(KnowledgeLevel::Unknown),
            1 => Ok(KnowledgeLevel::MaybeKnown),
            2 => Ok(KnowledgeLevel::Known),
            other => Err(format!("knowledge level {other} is not 0, 1 or 2")),
        }
    }
}

impl From<KnowledgeLevel> for u8 {
    fn from(level: KnowledgeLevel) -> u8 {
        level as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub user: String,
    pub channel: String,
    pub chunk_index: usize,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub text: String,
    pub level: KnowledgeLevel,
    pub reason: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub user: String,
    pub channel: String,
    pub model: String,
    pub items: Vec<KnowledgeItem>,
    pub chunk_count: usize,
    pub parse_failures: usize,
    pub provider_failures: usize,
    pub dropped_entries: usize,
    pub capped: bool,
    pub run_timestamp: String,
}

impl ExtractionRecord {
    pub fn is_complete(&self) -> bool {
        self.parse_failures == 0 && self.provider_failures == 0
    }
}

/// Merges items in chunk order; a repeated term keeps the highest level and
/// the reasons are joined.
pub fn merge_items(items: impl IntoIterator<Item = KnowledgeItem>) -> Vec<KnowledgeItem> {
    let mut merged: Vec<KnowledgeItem> = Vec::new();
    let mut by_term: HashMap<String, usize> = HashMap::new();
    for item in items {
        let key = normalize_term(&item.text);
        match by_term.get(&key) {
            Some(&i) => {
                let existing = &mut merged[i];
                existing.level = existing.level.max(item.level);
                if !item.reason.is_empty() && existing.reason != item.reason {
                    if !existing.reason.is_empty() {
                        existing.reason.push_str("; ");
                    }
                    existing.reason.push_str(&item.reason);
                }
            }
            None => {
                by_term.insert(key, merged.len());
                merged.push(item);
            }
        }
    }
    merged
}

/// Source of the `run_timestamp` written into records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunClock {
    System,
    Fixed(DateTime<Utc>),
}

impl RunClock {
    /// `SOURCE_DATE_EPOCH` when set; otherwise the Unix epoch for the mock
    /// family, so offline runs are reproducible, and wall time for real ones.
    pub fn from_env(family: ProviderFamily) -> Self {
        let pinned = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.trim().parse::<i64>().ok())
            .and_then(|secs| DateTime::from_timestamp(secs, 0));
        match (pinned, family) {
            (Some(t), _) => RunClock::Fixed(t),
            (None, ProviderFamily::Mock) => RunClock::Fixed(DateTime::UNIX_EPOCH),
            (None, _) => RunClock::System,
        }
    }

    pub fn stamp(&self) -> String {
        let t = match self {
            RunClock::System => Utc::now(),
            RunClock::Fixed(t) => *t,
        };
        t.to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

#[derive(Debug, Clone)]
pub struct ExtractorConfig {
    pub output_root: PathBuf,
    pub parallelism: usize,
    pub max_chunks: Option<usize>,
    pub reserved_output: u64,
    pub clock: RunClock,
}

impl ExtractorConfig {
    pub fn new(output_root: impl Into<PathBuf>) -> Self {
        Self {
            output_root: output_root.into(),
            parallelism: DEFAULT_PARALLELISM,
            max_chunks: None,
            reserved_output: DEFAULT_RESERVED_OUTPUT,
            clock: RunClock::System,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStatus {
    Written,
    Existing,
    NoMessages,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelOutcome {
    pub channel: String,
    pub status: ChannelStatus,
    pub path: PathBuf,
    pub record: Option<ExtractionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserExtraction {
    pub user: String,
    pub channels: Vec<ChannelOutcome>,
}

impl UserExtraction {
    pub fn records(&self) -> impl Iterator<Item = &ExtractionRecord> {
        self.channels.iter().filter_map(|c| c.record.as_ref())
    }

    pub fn written(&self) -> impl Iterator<Item = &ChannelOutcome> {
        self.channels.iter().filter(|c| c.status == ChannelStatus::Written)
    }
}

/// Summary of one `extract` invocation, written next to the outputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: String,
    pub users: Vec<String>,
    pub written: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn absorb(&mut self, root: &Path, extraction: &UserExtraction) {
        self.users.push(extraction.user.clone());
        for outcome in &extraction.channels {
            let rel = outcome.path.strip_prefix(root).unwrap_or(&outcome.path).to_string_lossy().replace('\\', "/");
            match outcome.status {
                ChannelStatus::Written => {
                    let record = outcome.record.as_ref().expect("written outcomes carry a record");
                    if record.is_complete() {
                        self.written.push(rel.clone());
                    } else {
                        self.failed.push(format!(
                            "{rel}: {} parse failure(s), {} provider failure(s) in {} chunk(s)",
                            record.parse_failures, record.provider_failures, record.chunk_count
                        ));
                    }
                    if record.capped {
                        self.warnings
                            .push(format!("{rel}: chunk cap reached, processed {} chunk(s)", record.chunk_count));
                    }
                }
                ChannelStatus::Existing => self.skipped.push(format!("{rel}: already materialized")),
                ChannelStatus::NoMessages => {
                    self.skipped.push(format!("{}/{}: no messages", extraction.user, outcome.channel))
                }
            }
        }
    }

    pub fn has_failures(&self) -> bool {
        !self.failed.is_empty()
    }
}

pub struct Extractor {
    provider: Arc<dyn Provider>,
    config: ExtractorConfig,
}

impl fmt::Debug for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Extractor")
            .field("model", &self.provider.config().model_name)
            .field("config", &self.config)
            .finish()
    }
}

impl Extractor {
    pub fn new(provider: Arc<dyn Provider>, config: ExtractorConfig) -> Self {
        Self { provider, config }
    }

    pub fn model(&self) -> &str {
        &self.provider.config().model_name
    }

    /// `<out>/<model>`
    pub fn model_dir(&self) -> PathBuf {
        self.config.output_root.join(path_component(self.model()))
    }

    pub fn output_path(&self, user: &str, channel: &str) -> PathBuf {
        self.model_dir().join(path_component(user)).join(format!("{}.json", path_component(channel)))
    }

    /// Chunk parameters for `user`, with the prompt overhead measured.
    pub fn chunk_params(&self, user: &str) -> ChunkParams {
        let provider = self.provider.config();
        let (system_tokens, template_tokens) = prompt::overhead_tokens(user);
        ChunkParams {
            context_window: provider.context_window,
            safety_factor: provider.safety_factor,
            system_tokens,
            template_tokens,
            reserved_output: self.config.reserved_output,
            max_chunks: self.config.max_chunks,
        }
    }

    pub async fn extract_user(
        &self,
        user: &str,
        export: &Export,
        index: &MembershipIndex,
    ) -> Result<UserExtraction, ExtractError> {
        let mut outcome = UserExtraction { user: user.to_string(), channels: Vec::new() };
        let channels: Vec<String> = index.channels_of(user).map(str::to_string).collect();
        if channels.is_empty() {
            tracing::info!(user, "no member channels, skipping");
        }
        for channel in channels {
            let path = self.output_path(user, &channel);
            if path.exists() {
                let record = read_json::<ExtractionRecord>(&path).ok().flatten();
                // records cut short by provider errors are retried on the next run
                if record.as_ref().is_none_or(|r| r.provider_failures == 0) {
                    tracing::info!(user, %channel, "output exists, skipping");
                    outcome.channels.push(ChannelOutcome { channel, status: ChannelStatus::Existing, path, record });
                    continue;
                }
            }
            let events = export.channels.get(&channel).map(Vec::as_slice).unwrap_or_default();
            let doc = match collect_input(user, &channel, events, index) {
                Collected::Input(doc) => doc,
                Collected::Skip(SkipReason::NoMessages) | Collected::Skip(SkipReason::NotAMember) => {
                    outcome.channels.push(ChannelOutcome {
                        channel,
                        status: ChannelStatus::NoMessages,
                        path,
                        record: None,
                    });
                    continue;
                }
            };
            let record = self.extract_channel(user, &channel, &doc.json).await?;
            write_json_atomic(&path, &record).map_err(|source| ExtractError::Io { path: path.clone(), source })?;
            tracing::info!(
                user,
                %channel,
                chunks = record.chunk_count,
                items = record.items.len(),
                failures = record.parse_failures + record.provider_failures,
                "channel extracted"
            );
            outcome.channels.push(ChannelOutcome {
                channel,
                status: ChannelStatus::Written,
                path,
                record: Some(record),
            });
        }
        Ok(outcome)
    }

    /// Chunks, dispatches and parses one channel log. Does not touch disk.
    pub async fn extract_channel(
        &self,
        user: &str,
        channel: &str,
        inputdata: &str,
    ) -> Result<ExtractionRecord, ExtractError> {
        let params = self.chunk_params(user);
        let plan = plan_chunks(inputdata, params).map_err(|source| ExtractError::Budget {
            user: user.to_string(),
            channel: channel.to_string(),
            source,
        })?;
        if let Some(warning) = &plan.warning {
            tracing::warn!(user, channel, "{warning}");
        }
        let max_output = u32::try_from(self.config.reserved_output).unwrap_or(u32::MAX);
        let provider = &self.provider;
        // `buffered` yields in submission order, so results stay in chunk order
        let responses: Vec<_> = stream::iter(plan.segments.iter())
            .map(|segment| {
                let p = build_prompt(user, &segment.text);
                let request = CompletionRequest { system: p.system, user: p.user, max_output_tokens: max_output };
                async move { (segment.index, provider.complete(&request).await) }
            })
            .buffered(self.config.parallelism.max(1))
            .collect()
            .await;

        let model = self.model().to_string();
        let mut items = Vec::new();
        let mut parse_failures = 0;
        let mut provider_failures = 0;
        let mut dropped_entries = 0;
        for (chunk_index, response) in responses {
            let response = match response {
                Ok(r) => r,
                Err(err @ (ProviderError::MissingCredential { .. } | ProviderError::Config(_))) => {
                    return Err(err.into());
                }
                Err(err) => {
                    tracing::warn!(user, channel, chunk_index, error = %err, "chunk failed");
                    provider_failures += 1;
                    continue;
                }
            };
            match parse_response(&response.raw_text, user) {
                Ok(parsed) => {
                    dropped_entries += parsed.dropped;
                    items.extend(parsed.items.into_iter().map(|item| KnowledgeItem {
                        text: item.text,
                        level: item.level,
                        reason: item.reason,
                        provenance: Provenance {
                            user: user.to_string(),
                            channel: channel.to_string(),
                            chunk_index,
                            model: model.clone(),
                        },
                    }));
                }
                Err(err) => {
                    tracing::warn!(user, channel, chunk_index, error = %err, "unparseable response");
                    parse_failures += 1;
                }
            }
        }
        Ok(ExtractionRecord {
            user: user.to_string(),
            channel: channel.to_string(),
            model,
            items: merge_items(items),
            chunk_count: plan.segments.len(),
            parse_failures,
            provider_failures,
            dropped_entries,
            capped: plan.capped,
            run_timestamp: self.config.clock.stamp(),
        })
    }

    /// Extracts every user in turn and writes the run manifest.
    pub async fn run(
        &self,
        users: &[String],
        export: &Export,
        index: &MembershipIndex,
    ) -> Result<(Vec<UserExtraction>, RunManifest), ExtractError> {
        let mut manifest = RunManifest { model: self.model().to_string(), ..Default::default() };
        let mut results = Vec::with_capacity(users.len());
        for (i, user) in users.iter().enumerate() {
            tracing::info!(user = %user, progress = format!("{}/{}", i + 1, users.len()), "extracting");
            let extraction = self.extract_user(user, export, index).await?;
            manifest.absorb(&self.config.output_root, &extraction);
            results.push(extraction);
        }
        let path = self.model_dir().join(MANIFEST_FILE);
        write_json_atomic(&path, &manifest).map_err(|source| ExtractError::Io { path, source })?;
        Ok((results, manifest))
    }
}

/// Reads every record under `<out>/<model>/`, grouped by user directory.
pub fn load_records(model_dir: &Path) -> std::io::Result<Vec<(String, Vec<ExtractionRecord>)>> {
    let mut users = Vec::new();
    let mut dirs: Vec<PathBuf> =
        std::fs::read_dir(model_dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    for dir in dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut records = Vec::new();
        for file in files {
            if let Some(record) = read_json::<ExtractionRecord>(&file)? {
                records.push(record);
            }
        }
        let user = records
            .first()
            .map(|r| r.user.clone())
            .unwrap_or_else(|| dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        users.push((user, records));
    }
    Ok(users)
}
