//! Error metrics between self-rated and estimated scores.
//!
//! With absolute errors `a_i = |y_i - ŷ_i|` over `n` pairs:
//! MAE is the mean of `a_i`, MAE_STD the sample (n−1) standard deviation of
//! `a_i`, RMSE the root of the mean squared error, and Median AE the median
//! of `a_i` (midpoint of the two central values for even `n`).
//! Metrics pool every (user, term) pair of a model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiler::{normalize_term, SkillProfile};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("metric is undefined for an empty set of pairs")]
    Empty,
    #[error("no message count for user {0}")]
    MissingCount(String),
}

/// Self score `y` (ground truth) against estimated score `y_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EvalPair<S> {
    pub y: S,
    pub y_hat: S,
    pub user: String,
    pub term: String,
    pub model: String,
}

impl<S: Scalar> EvalPair<S> {
    pub fn abs_error(&self) -> S {
        (self.y - self.y_hat).abs()
    }
}

fn ensure_nonempty<T>(pairs: &[T]) -> Result<(), EvalError> {
    if pairs.is_empty() {
        Err(EvalError::Empty)
    } else {
        Ok(())
    }
}

pub fn mae<S: Scalar>(pairs: &[EvalPair<S>]) -> Result<S, EvalError> {
    ensure_nonempty(pairs)?;
    let sum = pairs.iter().fold(S::zero(), |acc, p| acc + p.abs_error());
    Ok(sum / S::of_usize(pairs.len()))
}

/// `None` for a single pair, where the n−1 denominator vanishes.
pub fn mae_std<S: Scalar>(pairs: &[EvalPair<S>]) -> Result<Option<S>, EvalError> {
    let mean = mae(pairs)?;
    if pairs.len() < 2 {
        return Ok(None);
    }
    let ss = pairs.iter().fold(S::zero(), |acc, p| {
        let d = p.abs_error() - mean;
        acc + d * d
    });
    Ok(Some((ss / S::of_usize(pairs.len() - 1)).sqrt()))
}

pub fn rmse<S: Scalar>(pairs: &[EvalPair<S>]) -> Result<S, EvalError> {
    ensure_nonempty(pairs)?;
    let ss = pairs.iter().fold(S::zero(), |acc, p| {
        let e = p.y - p.y_hat;
        acc + e * e
    });
    Ok((ss / S::of_usize(pairs.len())).sqrt())
}

pub fn median_ae<S: Scalar>(pairs: &[EvalPair<S>]) -> Result<S, EvalError> {
    ensure_nonempty(pairs)?;
    let mut errors: Vec<S> = pairs.iter().map(EvalPair::abs_error).collect();
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(median_sorted(&errors))
}

fn median_sorted<S: Scalar>(sorted: &[S]) -> S {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / S::of_u32(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MetricRow<S> {
    pub model: String,
    pub mae: S,
    pub mae_std: Option<S>,
    pub rmse: S,
    pub median_ae: S,
    pub n: usize,
    pub best: bool,
}

impl<S: Scalar> MetricRow<S> {
    pub fn compute(model: &str, pairs: &[EvalPair<S>]) -> Result<Self, EvalError> {
        Ok(Self {
            model: model.to_string(),
            mae: mae(pairs)?,
            mae_std: mae_std(pairs)?,
            rmse: rmse(pairs)?,
            median_ae: median_ae(pairs)?,
            n: pairs.len(),
            best: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ModelReport<S> {
    pub rows: Vec<MetricRow<S>>,
}

/// One row per model, highest MAE first (ties by model name); the lowest
/// MAE row is flagged best.
pub fn model_report<S: Scalar>(groups: &BTreeMap<String, Vec<EvalPair<S>>>) -> Result<ModelReport<S>, EvalError> {
    if groups.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows =
        groups.iter().map(|(model, pairs)| MetricRow::compute(model, pairs)).collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        b.mae.partial_cmp(&a.mae).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.model.cmp(&b.model))
    });
    let best = rows
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.mae.partial_cmp(&b.mae).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.model.cmp(&b.model))
        })
        .map(|(i, _)| i);
    if let Some(i) = best {
        rows[i].best = true;
    }
    Ok(ModelReport { rows })
}

fn fmt_opt<S: Scalar>(v: Option<S>, precision: usize) -> String {
    v.map(|x| format!("{:.*}", precision, x.to_f64_lossy())).unwrap_or_default()
}

impl<S: Scalar> ModelReport<S> {
    pub fn best(&self) -> Option<&MetricRow<S>> {
        self.rows.iter().find(|r| r.best)
    }

    /// Aligned table; the best model is marked with `*`.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len() + 1).max().unwrap_or(0).max("model".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>9}  {:>6}",
            "model", "mae", "mae_std", "rmse", "median_ae", "n"
        );
        for r in &self.rows {
            let name = if r.best { format!("{}*", r.model) } else { r.model.clone() };
            let std = r.mae_std.map(|s| format!("{:.2}", s.to_f64_lossy())).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.2}  {:>8}  {:>8.2}  {:>9.2}  {:>6}",
                name,
                r.mae.to_f64_lossy(),
                std,
                r.rmse.to_f64_lossy(),
                r.median_ae.to_f64_lossy(),
                r.n
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,mae,mae_std,rmse,median_ae,n,best\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{},{:.6},{:.6},{},{}",
                r.model,
                r.mae.to_f64_lossy(),
                fmt_opt(r.mae_std, 6),
                r.rmse.to_f64_lossy(),
                r.median_ae.to_f64_lossy(),
                r.n,
                r.best
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PerUserRow<S> {
    pub user: String,
    pub n_messages: usize,
    pub n_pairs: usize,
    pub mae: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CountSummary<S> {
    pub max: usize,
    pub mean: S,
    pub median: S,
}

impl<S: Scalar> CountSummary<S> {
    pub fn of(counts: &[usize]) -> Option<Self> {
        if counts.is_empty() {
            return None;
        }
        let mut sorted: Vec<S> = counts.iter().map(|&c| S::of_usize(c)).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let sum = sorted.iter().fold(S::zero(), |acc, &c| acc + c);
        Some(Self {
            max: counts.iter().copied().max().unwrap_or(0),
            mean: sum / S::of_usize(counts.len()),
            median: median_sorted(&sorted),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct PerUserReport<S> {
    pub rows: Vec<PerUserRow<S>>,
    pub summary: Option<CountSummary<S>>,
}

/// Per-user MAE against message volume, fewest messages first.
pub fn per_user_report<S: Scalar>(
    pairs: &[EvalPair<S>],
    message_counts: &BTreeMap<String, usize>,
) -> Result<PerUserReport<S>, EvalError> {
    let mut by_user: BTreeMap<&str, Vec<EvalPair<S>>> = BTreeMap::new();
    for p in pairs {
        by_user.entry(p.user.as_str()).or_default().push(p.clone());
    }
    let mut rows = Vec::with_capacity(by_user.len());
    for (user, user_pairs) in by_user {
        let n_messages = *message_counts.get(user).ok_or_else(|| EvalError::MissingCount(user.to_string()))?;
        rows.push(PerUserRow { user: user.to_string(), n_messages, n_pairs: user_pairs.len(), mae: mae(&user_pairs)? });
    }
    rows.sort_by(|a, b| a.n_messages.cmp(&b.n_messages).then_with(|| a.user.cmp(&b.user)));
    let counts: Vec<usize> = rows.iter().map(|r| r.n_messages).collect();
    Ok(PerUserReport { summary: CountSummary::of(&counts), rows })
}

impl<S: Scalar> PerUserReport<S> {
    /// CSV rows prefixed with `model`.
    pub fn csv_rows(&self, model: &str) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{model},{},{},{},{:.6}", r.user, r.n_messages, r.n_pairs, r.mae.to_f64_lossy());
        }
        out
    }

    pub const CSV_HEADER: &'static str = "model,user,n_messages,n_pairs,mae\n";
}

/// Rating lookup: user → normalized term → self score.
pub type RatingTable = BTreeMap<String, BTreeMap<String, u8>>;

/// Pairs for every profile entry that has a self-rating.
pub fn build_pairs<S: Scalar>(model: &str, profiles: &[SkillProfile<S>], ratings: &RatingTable) -> Vec<EvalPair<S>> {
    let mut pairs = Vec::new();
    for profile in profiles {
        let Some(user_ratings) = ratings.get(&profile.user) else {
            continue;
        };
        for (term, entry) in &profile.entries {
            if let Some(&score) = user_ratings.get(&normalize_term(term)) {
                pairs.push(EvalPair {
                    y: S::of_u32(u32::from(score)),
                    y_hat: entry.estimated_score,
                    user: profile.user.clone(),
                    term: term.clone(),
                    model: model.to_string(),
                });
            }
        }
    }
    pairs
}
