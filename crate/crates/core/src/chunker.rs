//! Context-budget chunking.
//!
//! A request may use at most `T_eff = floor(s * T_max)` tokens, where `s` is
//! the safety factor. After the system prompt, the user-message template and
//! the reserved output budget are subtracted, the rest is the per-chunk budget
//! `T_chunk`, and the encoded input is cut into `ceil(T_input / T_chunk)`
//! contiguous token runs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{TokenId, Tokenizer};

pub const DEFAULT_RESERVED_OUTPUT: u64 = 500;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("prompt overhead exceeds effective context: T_eff={effective}, system={system} + template={template} + reserved={reserved}")]
    Budget { effective: u64, system: u64, template: u64, reserved: u64 },
    #[error("invalid safety factor {0}: must be in (0, 1]")]
    SafetyFactor(String),
    #[error("context window must be positive")]
    ZeroContext,
    #[error("max chunk cap must be positive")]
    ZeroCap,
}

/// A safety factor held as an exact decimal fraction, so `floor(s * T_max)`
/// is computed in integer arithmetic rather than binary floating point.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SafetyFactor {
    numerator: u128,
    denominator: u128,
}

impl SafetyFactor {
    /// Parses the shortest decimal representation of `value`.
    /// Values in (0, 1] are accepted; 1.0 is only meaningful for the offline provider.
    pub fn new(value: f64) -> Result<Self, ChunkError> {
        let err = || ChunkError::SafetyFactor(value.to_string());
        if !value.is_finite() || value <= 0.0 || value > 1.0 {
            return Err(err());
        }
        let repr = value.to_string();
        let (int, frac) = repr.split_once('.').unwrap_or((repr.as_str(), ""));
        if frac.len() > 30 {
            return Err(err());
        }
        let digits = format!("{int}{frac}");
        let numerator: u128 = digits.parse().map_err(|_| err())?;
        let denominator = 10u128.pow(frac.len() as u32);
        Ok(Self { numerator, denominator })
    }

    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// `floor(self * tokens)`, exactly.
    pub fn scale_floor(&self, tokens: u64) -> u64 {
        let scaled = self.numerator * u128::from(tokens) / self.denominator;
        scaled as u64
    }
}

impl fmt::Debug for SafetyFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SafetyFactor({})", self.value())
    }
}

impl fmt::Display for SafetyFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for SafetyFactor {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for SafetyFactor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        SafetyFactor::new(f64::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    /// T_max
    pub context_window: u64,
    /// s
    pub safety_factor: SafetyFactor,
    /// T_sys
    pub system_tokens: u64,
    /// T_tmpl
    pub template_tokens: u64,
    /// T_res
    pub reserved_output: u64,
    /// N_max
    pub max_chunks: Option<usize>,
}

impl ChunkParams {
    pub fn new(context_window: u64, safety_factor: SafetyFactor) -> Self {
        Self {
            context_window,
            safety_factor,
            system_tokens: 0,
            template_tokens: 0,
            reserved_output: DEFAULT_RESERVED_OUTPUT,
            max_chunks: None,
        }
    }

    pub fn effective_limit(&self) -> u64 {
        self.safety_factor.scale_floor(self.context_window)
    }

    /// Per-chunk input budget; fails when the fixed overhead leaves nothing.
    pub fn chunk_budget(&self) -> Result<u64, ChunkError> {
        if self.context_window == 0 {
            return Err(ChunkError::ZeroContext);
        }
        if self.max_chunks == Some(0) {
            return Err(ChunkError::ZeroCap);
        }
        let effective = self.effective_limit();
        let overhead = self.system_tokens + self.template_tokens + self.reserved_output;
        if effective <= overhead {
            return Err(ChunkError::Budget {
                effective,
                system: self.system_tokens,
                template: self.template_tokens,
                reserved: self.reserved_output,
            });
        }
        Ok(effective - overhead)
    }
}

/// One contiguous run of input tokens and its decoded text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub index: usize,
    pub tokens: Vec<TokenId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub params: ChunkParams,
    /// T_eff
    pub effective_limit: u64,
    /// T_chunk
    pub chunk_budget: u64,
    /// T_input
    pub input_tokens: u64,
    /// N_chunks before capping
    pub n_chunks: usize,
    pub segments: Vec<Segment>,
    pub capped: bool,
    pub warning: Option<String>,
}

pub fn plan_chunks(input: &str, params: ChunkParams) -> Result<ChunkPlan, ChunkError> {
    let tokenizer = Tokenizer::cl100k();
    let tokens = tokenizer.encode(input);
    plan_tokens(tokenizer, &tokens, params)
}

/// Chunks an already encoded input.
pub fn plan_tokens(tokenizer: &Tokenizer, tokens: &[TokenId], params: ChunkParams) -> Result<ChunkPlan, ChunkError> {
    let chunk_budget = params.chunk_budget()?;
    let effective_limit = params.effective_limit();
    let budget = usize::try_from(chunk_budget).unwrap_or(usize::MAX);
    let n_chunks = tokens.len().div_ceil(budget);
    let kept = params.max_chunks.map_or(n_chunks, |cap| n_chunks.min(cap));
    let capped = kept < n_chunks;

    let ends = segment_ends(tokenizer, tokens, budget, n_chunks, kept);
    let mut segments = Vec::with_capacity(kept);
    // bytes of a character split across a segment boundary move to the next segment
    let mut carry: Vec<u8> = Vec::new();
    let mut start = 0;
    for (index, &end) in ends.iter().enumerate() {
        let run = &tokens[start..end];
        start = end;
        let mut bytes = std::mem::take(&mut carry);
        bytes.extend(tokenizer.decode_bytes(run));
        let text = match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => {
                let valid = e.utf8_error().valid_up_to();
                let mut bytes = e.into_bytes();
                carry = bytes.split_off(valid);
                String::from_utf8(bytes).expect("prefix is valid utf-8")
            }
        };
        segments.push(Segment { index, tokens: run.to_vec(), text });
    }
    if !carry.is_empty() && !capped {
        // input was valid utf-8, so the final segment always completes its characters
        if let Some(last) = segments.last_mut() {
            last.text.push_str(&String::from_utf8_lossy(&carry));
        }
    }

    let warning = capped.then(|| {
        let msg = format!("chunk cap reached: processing {kept} of {n_chunks} chunks");
        tracing::warn!("{msg}");
        msg
    });

    Ok(ChunkPlan {
        params,
        effective_limit,
        chunk_budget,
        input_tokens: tokens.len() as u64,
        n_chunks,
        segments,
        capped,
        warning,
    })
}

/// How far a cut may move back to land on a character boundary.
const MAX_BACKOFF: usize = 8;

/// End offsets of the first `kept` of `n_chunks` contiguous runs, each at most
/// `budget` tokens. A cut that would split a multi-token character moves back
/// a few tokens when the remaining runs can still absorb the difference.
fn segment_ends(tokenizer: &Tokenizer, tokens: &[TokenId], budget: usize, n_chunks: usize, kept: usize) -> Vec<usize> {
    let total = tokens.len();
    let mut ends = Vec::with_capacity(kept);
    let mut start = 0;
    for k in 1..=kept {
        let max_end = (start + budget).min(total);
        if k == n_chunks || max_end == total {
            ends.push(max_end);
            start = max_end;
            continue;
        }
        // the n_chunks - k runs after this one must hold the rest
        let min_end = total.saturating_sub((n_chunks - k) * budget).max(start + 1);
        let lowest = max_end.saturating_sub(MAX_BACKOFF).max(min_end);
        let end = (lowest..=max_end).rev().find(|&p| cut_is_clean(tokenizer, tokens, p)).unwrap_or(max_end);
        ends.push(end);
        start = end;
    }
    ends
}

/// Whether the bytes of `tokens[..pos]` end on a UTF-8 character boundary.
fn cut_is_clean(tokenizer: &Tokenizer, tokens: &[TokenId], pos: usize) -> bool {
    let mut from = pos;
    let mut tail = Vec::new();
    while from > 0 && tail.len() < 4 {
        from -= 1;
        let mut bytes = tokenizer.decode_bytes(&tokens[from..from + 1]);
        bytes.extend_from_slice(&tail);
        tail = bytes;
    }
    ends_on_char_boundary(&tail, from == 0)
}

fn ends_on_char_boundary(tail: &[u8], at_start: bool) -> bool {
    let continuation = tail.iter().rev().take_while(|&&b| b & 0xC0 == 0x80).count();
    let Some(&lead) = tail.len().checked_sub(continuation + 1).map(|i| &tail[i]) else {
        return continuation == 0 || !at_start;
    };
    let expected = match lead {
        0xF0.. => 3,
        0xE0.. => 2,
        0xC0.. => 1,
        _ => 0,
    };
    continuation == expected
}
