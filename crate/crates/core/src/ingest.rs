//! Chat-export ingestion.
//!
//! An export is a directory with one subdirectory per channel, each holding
//! JSON files whose top level is an array of event records, plus an optional
//! `users.json` member directory at the root. Only the plain `text` field of
//! a message is read; rich-text blocks and attachments are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::timestamp::Timestamp;

pub const MEMBERS_FILE: &str = "users.json";
const CHANNEL_JOIN: &str = "channel_join";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("export root {0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a JSON array of records: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "subtype")]
pub enum EventKind {
    AuthoredMessage,
    ChannelJoin,
    /// Any other subtype, e.g. `channel_purpose`; kept so records re-serialize.
    OtherSystem(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub user: String,
    pub ts: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reaction {
    pub name: String,
    #[serde(default)]
    pub users: Vec<String>,
    #[serde(default)]
    pub count: u32,
}

/// One parsed export record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatEvent {
    pub channel: String,
    pub author: String,
    pub kind: EventKind,
    pub ts: Timestamp,
    pub text: String,
    pub thread_ts: Option<Timestamp>,
    pub reply_count: Option<u32>,
    pub replies: Vec<Reply>,
    pub reactions: Vec<Reaction>,
}

/// Wire form of a record; field names match the export format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    user: Option<String>,
    #[serde(rename = "type")]
    record_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtype: Option<String>,
    ts: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thread_ts: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reply_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    replies: Vec<Reply>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    reactions: Vec<Reaction>,
    #[serde(default, skip_serializing)]
    bot_id: Option<String>,
}

impl ChatEvent {
    pub fn is_authored(&self) -> bool {
        self.kind == EventKind::AuthoredMessage
    }

    /// Serializes back into the export record shape.
    pub fn to_record(&self) -> Value {
        let subtype = match &self.kind {
            EventKind::AuthoredMessage => None,
            EventKind::ChannelJoin => Some(CHANNEL_JOIN.to_string()),
            EventKind::OtherSystem(s) => Some(s.clone()),
        };
        let raw = RawRecord {
            user: Some(self.author.clone()),
            record_type: "message".into(),
            subtype,
            ts: self.ts,
            text: Some(self.text.clone()),
            thread_ts: self.thread_ts,
            reply_count: self.reply_count,
            replies: self.replies.clone(),
            reactions: self.reactions.clone(),
            bot_id: None,
        };
        serde_json::to_value(raw).expect("record serialization is infallible")
    }

    /// Parses one export record. `Ok(None)` means "not a message record".
    pub fn from_record(channel: &str, record: Value) -> Result<Option<Self>, RecordError> {
        if record.get("type").and_then(Value::as_str) != Some("message") {
            return Ok(None);
        }
        let raw: RawRecord = serde_json::from_value(record).map_err(|_| RecordError::Malformed)?;
        if raw.user.is_none() && raw.text.is_none() {
            return Err(RecordError::NoAuthorOrText);
        }
        let kind = match raw.subtype.as_deref() {
            None => EventKind::AuthoredMessage,
            Some(CHANNEL_JOIN) => EventKind::ChannelJoin,
            Some(other) => EventKind::OtherSystem(other.to_string()),
        };
        Ok(Some(ChatEvent {
            channel: channel.to_string(),
            author: raw.user.or(raw.bot_id).unwrap_or_default(),
            kind,
            ts: raw.ts,
            text: raw.text.unwrap_or_default(),
            thread_ts: raw.thread_ts,
            reply_count: raw.reply_count,
            replies: raw.replies,
            reactions: raw.reactions,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("record does not match the message shape")]
    Malformed,
    #[error("message has no author or no text")]
    NoAuthorOrText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityFlag {
    Deleted,
    Bot,
    Restricted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub user_id: String,
    pub email: Option<String>,
    pub billing_active: bool,
    pub activity_flags: BTreeSet<ActivityFlag>,
}

impl MemberRecord {
    pub fn is_active(&self) -> bool {
        !self.activity_flags.contains(&ActivityFlag::Deleted) && !self.activity_flags.contains(&ActivityFlag::Bot)
    }
}

#[derive(Debug, Deserialize)]
struct RawMember {
    id: String,
    #[serde(default)]
    deleted: bool,
    #[serde(default)]
    is_bot: bool,
    #[serde(default)]
    is_restricted: bool,
    #[serde(default)]
    billing_active: bool,
    #[serde(default)]
    email: Option<String>,
    #[serde(default)]
    profile: Option<RawProfile>,
}

#[derive(Debug, Deserialize)]
struct RawProfile {
    #[serde(default)]
    email: Option<String>,
}

impl From<RawMember> for MemberRecord {
    fn from(raw: RawMember) -> Self {
        let mut flags = BTreeSet::new();
        if raw.deleted {
            flags.insert(ActivityFlag::Deleted);
        }
        if raw.is_bot {
            flags.insert(ActivityFlag::Bot);
        }
        if raw.is_restricted {
            flags.insert(ActivityFlag::Restricted);
        }
        MemberRecord {
            user_id: raw.id,
            email: raw.email.or(raw.profile.and_then(|p| p.email)),
            billing_active: raw.billing_active,
            activity_flags: flags,
        }
    }
}

/// Counters for records that were not turned into events.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub files: usize,
    pub events: usize,
    pub non_message_records: usize,
    pub malformed_records: usize,
    pub records_without_author_or_text: usize,
    pub reply_count_mismatches: usize,
    pub duplicate_members: usize,
}

impl IngestStats {
    fn absorb(&mut self, other: &IngestStats) {
        self.files += other.files;
        self.events += other.events;
        self.non_message_records += other.non_message_records;
        self.malformed_records += other.malformed_records;
        self.records_without_author_or_text += other.records_without_author_or_text;
        self.reply_count_mismatches += other.reply_count_mismatches;
        self.duplicate_members += other.duplicate_members;
    }

    pub fn skipped(&self) -> usize {
        self.malformed_records + self.records_without_author_or_text
    }
}

/// A parsed export: events grouped by channel (sorted by timestamp) and the
/// member directory.
#[derive(Debug, Clone, Default)]
pub struct Export {
    pub channels: BTreeMap<String, Vec<ChatEvent>>,
    pub members: Vec<MemberRecord>,
    pub stats: IngestStats,
}

impl Export {
    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    /// Authored-message count per author across all channels.
    pub fn message_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for event in self.channels.values().flatten().filter(|e| e.is_authored()) {
            *counts.entry(event.author.clone()).or_insert(0) += 1;
        }
        counts
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Parses an export directory tree.
pub fn parse_export(root: &Path) -> Result<Export, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::NotADirectory(root.to_path_buf()));
    }
    let mut channel_dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            channel_dirs.push((name, path));
        }
    }
    channel_dirs.sort();

    let parsed: Vec<(String, Vec<ChatEvent>, IngestStats)> = channel_dirs
        .par_iter()
        .map(|(name, dir)| parse_channel(name, dir).map(|(ev, st)| (name.clone(), ev, st)))
        .collect::<Result<_, _>>()?;

    let mut export = Export::default();
    for (name, events, stats) in parsed {
        export.stats.absorb(&stats);
        export.channels.insert(name, events);
    }

    let members_path = root.join(MEMBERS_FILE);
    if members_path.is_file() {
        let bytes = fs::read(&members_path).map_err(io_err(&members_path))?;
        let raw: Vec<RawMember> = serde_json::from_slice(&bytes)
            .map_err(|source| IngestError::Json { path: members_path.clone(), source })?;
        let mut seen = BTreeSet::new();
        for member in raw {
            if seen.insert(member.id.clone()) {
                export.members.push(member.into());
            } else {
                export.stats.duplicate_members += 1;
                tracing::warn!(user = %member.id, "duplicate member record ignored");
            }
        }
    }

    let skipped = export.stats.skipped();
    if skipped > 0 {
        tracing::warn!(skipped, "skipped unusable message records");
    }
    Ok(export)
}

fn parse_channel(name: &str, dir: &Path) -> Result<(Vec<ChatEvent>, IngestStats), IngestError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();

    let mut stats = IngestStats::default();
    let mut events = Vec::new();
    for path in files {
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let records: Vec<Value> =
            serde_json::from_slice(&bytes).map_err(|source| IngestError::Json { path: path.clone(), source })?;
        stats.files += 1;
        for record in records {
            match ChatEvent::from_record(name, record) {
                Ok(Some(event)) => {
                    if let Some(n) = event.reply_count {
                        if !event.replies.is_empty() && event.replies.len() != n as usize {
                            stats.reply_count_mismatches += 1;
                        }
                    }
                    events.push(event);
                }
                Ok(None) => stats.non_message_records += 1,
                Err(RecordError::Malformed) => stats.malformed_records += 1,
                Err(RecordError::NoAuthorOrText) => stats.records_without_author_or_text += 1,
            }
        }
    }
    // stable: equal timestamps keep file order
    events.sort_by_key(|e| e.ts);
    stats.events = events.len();
    Ok((events, stats))
}

/// Channel name → user id → first-membership timestamp.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MembershipIndex {
    channels: BTreeMap<String, BTreeMap<String, Timestamp>>,
}

impl MembershipIndex {
    pub fn is_member(&self, channel: &str, user: &str) -> bool {
        self.first_seen(channel, user).is_some()
    }

    pub fn first_seen(&self, channel: &str, user: &str) -> Option<Timestamp> {
        self.channels.get(channel)?.get(user).copied()
    }

    pub fn members_of(&self, channel: &str) -> Option<&BTreeMap<String, Timestamp>> {
        self.channels.get(channel)
    }

    /// Channels the user belongs to, in name order.
    pub fn channels_of<'a>(&'a self, user: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.channels.iter().filter(move |(_, members)| members.contains_key(user)).map(|(name, _)| name.as_str())
    }
}

/// Membership from join events and authorship; permanent once established.
pub fn build_membership(channels: &BTreeMap<String, Vec<ChatEvent>>) -> MembershipIndex {
    let mut index = MembershipIndex::default();
    for (name, events) in channels {
        let members = index.channels.entry(name.clone()).or_default();
        for event in events {
            let qualifies = matches!(event.kind, EventKind::AuthoredMessage | EventKind::ChannelJoin);
            if !qualifies || event.author.is_empty() {
                continue;
            }
            members.entry(event.author.clone()).and_modify(|first| *first = (*first).min(event.ts)).or_insert(event.ts);
        }
    }
    index
}

/// Which member flags must hold. All requested flags must match.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemberFilter {
    pub billing_active: bool,
    pub active: bool,
}

pub fn filter_members(directory: &[MemberRecord], filter: MemberFilter) -> Vec<MemberRecord> {
    directory
        .iter()
        .filter(|m| !filter.billing_active || m.billing_active)
        .filter(|m| !filter.active || m.is_active())
        .cloned()
        .collect()
}

/// Serialized channel log for one extraction target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputDocument {
    pub target_user: String,
    pub channel: String,
    pub message_count: usize,
    /// JSON array of message records in timestamp order.
    pub json: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NotAMember,
    NoMessages,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Collected {
    Input(InputDocument),
    Skip(SkipReason),
}

/// Builds INPUTDATA for `user` in `channel`: every authored message in the
/// channel, from all authors, since everything visible to a member counts.
pub fn collect_input(user: &str, channel: &str, events: &[ChatEvent], index: &MembershipIndex) -> Collected {
    if !index.is_member(channel, user) {
        return Collected::Skip(SkipReason::NotAMember);
    }
    let mut messages: Vec<&ChatEvent> = events.iter().filter(|e| e.is_authored()).collect();
    if messages.is_empty() {
        return Collected::Skip(SkipReason::NoMessages);
    }
    messages.sort_by_key(|e| e.ts);
    let records: Vec<Value> = messages.iter().map(|e| e.to_record()).collect();
    Collected::Input(InputDocument {
        target_user: user.to_string(),
        channel: channel.to_string(),
        message_count: records.len(),
        json: serde_json::to_string(&records).expect("record serialization is infallible"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn msg(channel: &str, user: &str, ts: &str, text: &str) -> ChatEvent {
        ChatEvent::from_record(channel, json!({"type": "message", "user": user, "ts": ts, "text": text}))
            .unwrap()
            .unwrap()
    }

    fn join(channel: &str, user: &str, ts: &str) -> ChatEvent {
        ChatEvent::from_record(
            channel,
            json!({"type": "message", "subtype": "channel_join", "user": user, "ts": ts,
                   "text": format!("<@{user}> has joined the channel")}),
        )
        .unwrap()
        .unwrap()
    }

    #[test]
    fn join_subtype_sets_kind() {
        assert_eq!(join("c", "UID4", "1493555632.223680").kind, EventKind::ChannelJoin);
        let other = ChatEvent::from_record(
            "c",
            json!({"type": "message", "subtype": "channel_purpose", "user": "U", "ts": "1.0", "text": "x"}),
        )
        .unwrap()
        .unwrap();
        assert_eq!(other.kind, EventKind::OtherSystem("channel_purpose".into()));
    }

    #[test]
    fn record_errors() {
        let r = ChatEvent::from_record("c", json!({"type": "message", "ts": "1.0"}));
        assert_eq!(r, Err(RecordError::NoAuthorOrText));
        let r = ChatEvent::from_record("c", json!({"type": "message", "user": "U", "ts": 12.5}));
        assert_eq!(r, Err(RecordError::Malformed));
        let r = ChatEvent::from_record("c", json!({"type": "file", "ts": "1.0"}));
        assert_eq!(r, Ok(None));
    }

    #[test]
    fn membership_from_join_only() {
        let mut channels = BTreeMap::new();
        channels.insert("random".to_string(), vec![join("random", "UID4", "1493555632.223680")]);
        let index = build_membership(&channels);
        assert_eq!(index.first_seen("random", "UID4"), Some("1493555632.223680".parse().unwrap()));
        assert_eq!(index.members_of("random").unwrap().len(), 1);
    }

    #[test]
    fn implicit_membership_from_authorship() {
        let mut channels = BTreeMap::new();
        channels.insert("dev".to_string(), vec![msg("dev", "U1", "10.000000", "hi"), join("dev", "U1", "20.000000")]);
        let index = build_membership(&channels);
        assert_eq!(index.first_seen("dev", "U1"), Some("10.000000".parse().unwrap()));
        assert!(!index.is_member("dev", "U2"));
        assert_eq!(index.channels_of("U2").count(), 0);
    }

    #[test]
    fn filter_members_cases() {
        let mk = |id: usize, billing: bool| MemberRecord {
            user_id: format!("U{id}"),
            email: None,
            billing_active: billing,
            activity_flags: BTreeSet::new(),
        };
        // 27 of 43 flagged, interleaved
        let dir: Vec<_> = (0..43).map(|i| mk(i, i * 27 % 43 < 27)).collect();
        let expected = dir.iter().filter(|m| m.billing_active).count();
        assert_eq!(expected, 27);
        let filtered = filter_members(&dir, MemberFilter { billing_active: true, active: false });
        assert_eq!(filtered.len(), 27);
        let kept: Vec<_> = dir.iter().filter(|m| m.billing_active).cloned().collect();
        assert_eq!(filtered, kept);

        assert_eq!(filter_members(&dir, MemberFilter::default()), dir);

        let mut gone = mk(99, true);
        gone.activity_flags.insert(ActivityFlag::Deleted);
        let none = filter_members(&[gone], MemberFilter { billing_active: true, active: true });
        assert!(none.is_empty());
    }

    #[test]
    fn collect_input_includes_observed_messages() {
        let events = vec![
            join("c", "U3", "0.000001"),
            msg("c", "U2", "5.0", "e"),
            msg("c", "U1", "1.0", "a"),
            msg("c", "U2", "2.0", "b"),
            msg("c", "U3", "3.0", "c"),
            msg("c", "U1", "4.0", "d"),
        ];
        let mut channels = BTreeMap::new();
        channels.insert("c".to_string(), events.clone());
        let index = build_membership(&channels);
        let Collected::Input(doc) = collect_input("U3", "c", &events, &index) else {
            panic!("expected input");
        };
        assert_eq!(doc.message_count, 5);
        let parsed: Vec<Value> = serde_json::from_str(&doc.json).unwrap();
        let texts: Vec<_> = parsed.iter().map(|r| r["text"].as_str().unwrap()).collect();
        assert_eq!(texts, ["a", "b", "c", "d", "e"]);
        assert!(parsed.iter().all(|r| r.get("subtype").is_none()));

        assert_eq!(collect_input("U9", "c", &events, &index), Collected::Skip(SkipReason::NotAMember));
    }

    #[test]
    fn join_only_channel_is_skipped() {
        let events = vec![join("c", "U1", "1.0")];
        let mut channels = BTreeMap::new();
        channels.insert("c".to_string(), events.clone());
        let index = build_membership(&channels);
        assert_eq!(collect_input("U1", "c", &events, &index), Collected::Skip(SkipReason::NoMessages));
    }
}
