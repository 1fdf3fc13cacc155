//! Extraction prompt.
//!
//! The system text is fixed apart from the target id in the example output;
//! the user text carries the `TARGETUSER` and `INPUTDATA` sections.

use crate::tokenizer::count_tokens;

const SYSTEM_TEMPLATE: &str = r#"You are an expert in analyzing and estimating a user's domain knowledge based on log data. Focus specifically on the "TARGETUSER" to analyze their knowledge level based on "INPUTDATA". The "TARGETUSER" corresponds to "user" in the "INPUTDATA".

Instructions:
- Extract domain knowledge by analyzing the "text" fields for the target user.
- In the output, list proper nouns related to skills, domains, or key terms (e.g., technology, methods, or concepts).
- For each extracted item, classify the knowledge level:
  - 2 (Known): Strong evidence the user knows this.
  - 1 (Maybe known): Some evidence, moderate confidence.
  - 0 (Unknown): Insufficient evidence of knowledge.
- For each item, give a brief reason for your classification based on INPUTDATA.

Example Output JSON:
"{target_user_id}": {
    "text": "Extracted proper noun or verb from the text in INPUTDATA",
    "level": 2 (Known), 1 (Maybe known), or 0 (Unknown),
    "reason": "Brief explanation for why this knowledge level was assigned based on the INPUTDATA"
}"#;

const TARGET_PREFIX: &str = "TARGETUSER: ";
const INPUT_HEADER: &str = "\n\nINPUTDATA:\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

pub fn system_text(target_user: &str) -> String {
    SYSTEM_TEMPLATE.replace("{target_user_id}", target_user)
}

pub fn user_text(target_user: &str, chunk: &str) -> String {
    format!("{TARGET_PREFIX}{target_user}{INPUT_HEADER}{chunk}")
}

pub fn build_prompt(target_user: &str, chunk: &str) -> Prompt {
    Prompt { system: system_text(target_user), user: user_text(target_user, chunk) }
}

/// Token counts of the fixed parts: (system, user template without chunk).
pub fn overhead_tokens(target_user: &str) -> (u64, u64) {
    (count_tokens(&system_text(target_user)) as u64, count_tokens(&user_text(target_user, "")) as u64)
}

/// Inverse of [`user_text`]: `(target user, chunk)`.
pub fn split_user_message(user: &str) -> Option<(&str, &str)> {
    let rest = user.strip_prefix(TARGET_PREFIX)?;
    let (target, chunk) = rest.split_once(INPUT_HEADER)?;
    Some((target, chunk))
}
