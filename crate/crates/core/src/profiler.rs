//! Skill profiles.
//!
//! Levels map linearly onto the 0–100 rating scale (0, 50, 100). A term's
//! estimated score is the mean of its channel scores over the channels where
//! it was extracted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::extractor::{ExtractionRecord, KnowledgeLevel};
use crate::scalar::Scalar;

/// Case-folded, whitespace-collapsed, trimmed.
pub fn normalize_term(term: &str) -> String {
    term.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

pub fn level_to_score<S: Scalar>(level: KnowledgeLevel) -> S {
    S::of_u32(u32::from(u8::from(level)) * 50)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SkillEntry<S> {
    pub estimated_score: S,
    pub display_term: String,
    pub channels: Vec<String>,
    pub item_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SkillProfile<S> {
    pub user: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Keyed by normalized term.
    pub entries: BTreeMap<String, SkillEntry<S>>,
}

impl<S: Scalar> SkillProfile<S> {
    pub fn empty(user: impl Into<String>) -> Self {
        Self { user: user.into(), model: None, entries: BTreeMap::new() }
    }
}

/// Averages one user's channel records into a profile. Record order does
/// not matter.
pub fn aggregate<S: Scalar>(user: &str, records: &[ExtractionRecord]) -> SkillProfile<S> {
    debug_assert!(records.iter().all(|r| r.user == user), "records belong to one user");
    // term -> channel -> highest level in that channel
    let mut levels: BTreeMap<String, BTreeMap<&str, KnowledgeLevel>> = BTreeMap::new();
    let mut display: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    let mut models = BTreeSet::new();
    for record in records {
        models.insert(record.model.as_str());
        for item in &record.items {
            let key = normalize_term(&item.text);
            if key.is_empty() {
                continue;
            }
            levels
                .entry(key.clone())
                .or_default()
                .entry(record.channel.as_str())
                .and_modify(|l| *l = (*l).max(item.level))
                .or_insert(item.level);
            display.entry(key).or_default().insert(item.text.trim());
        }
    }

    let entries = levels
        .into_iter()
        .map(|(key, by_channel)| {
            let sum = by_channel.values().fold(S::zero(), |acc, &l| acc + level_to_score::<S>(l));
            let n = by_channel.len();
            // smallest surface form keeps the choice independent of record order
            let display_term = display[&key].iter().next().copied().unwrap_or_default().to_string();
            let entry = SkillEntry {
                estimated_score: sum / S::of_usize(n),
                display_term,
                channels: by_channel.keys().map(|c| c.to_string()).collect(),
                item_count: n,
            };
            (key, entry)
        })
        .collect();
    SkillProfile {
        user: user.to_string(),
        model: (models.len() == 1).then(|| models.into_iter().next().unwrap().to_string()),
        entries,
    }
}

/// At most five entries, highest score first, ties by normalized term.
pub fn top_five<S: Scalar>(profile: &SkillProfile<S>) -> Vec<(&str, &SkillEntry<S>)> {
    let mut entries: Vec<(&str, &SkillEntry<S>)> = profile.entries.iter().map(|(k, v)| (k.as_str(), v)).collect();
    entries.sort_by(|a, b| {
        b.1.estimated_score
            .partial_cmp(&a.1.estimated_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    entries.truncate(5);
    entries
}

/// A self-rating as seen by the profiler: normalized term and score.
pub trait SelfRating {
    fn term(&self) -> &str;
    fn score(&self) -> u8;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MergedEntry<S> {
    pub term: String,
    pub display_term: String,
    pub estimated_score: Option<S>,
    pub self_score: Option<u8>,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MergedProfile<S> {
    pub user: String,
    pub entries: Vec<MergedEntry<S>>,
}

/// Outer join of estimated entries and self-ratings on the normalized term.
pub fn merge_self<S: Scalar, A: SelfRating>(profile: &SkillProfile<S>, annotations: &[A]) -> MergedProfile<S> {
    let mut merged: BTreeMap<String, MergedEntry<S>> = profile
        .entries
        .iter()
        .map(|(term, e)| {
            let entry = MergedEntry {
                term: term.clone(),
                display_term: e.display_term.clone(),
                estimated_score: Some(e.estimated_score),
                self_score: None,
                channels: e.channels.clone(),
            };
            (term.clone(), entry)
        })
        .collect();
    for a in annotations {
        let key = normalize_term(a.term());
        merged
            .entry(key.clone())
            .or_insert_with(|| MergedEntry {
                term: key,
                display_term: a.term().trim().to_string(),
                estimated_score: None,
                self_score: None,
                channels: Vec::new(),
            })
            .self_score = Some(a.score());
    }
    MergedProfile { user: profile.user.clone(), entries: merged.into_values().collect() }
}
