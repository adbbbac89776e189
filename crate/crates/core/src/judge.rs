//! Discriminator I/O protocol: soundness prompts, the K-token output cap,
//! and parsing of analysis-score-rationale responses into binary verdicts.
//!
//! The judge replies with a brief analysis, then a bold YES/NO marker, then a
//! short rationale. Responses are capped at `max_new_tokens` (K) tokens; the
//! cap never splits a marker, so a verdict within the first K tokens always
//! survives truncation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slicer::{Slice, count_whitespace_tokens};

/// System prompt installed into every soundness query. Kept byte-for-byte
/// stable (including trailing spaces inside some lines), so it is written
/// with explicit escapes rather than a multi-line literal.
pub const EVALUATOR_SYSTEM_PROMPT: &str = "You are an evaluator responsible for assessing whether a reasoning\n\
                                           / thinking process is reasonable, rigorous, and accurate. Based on \n\
                                           these criteria, determine if the analysis is of high quality. First, \n\
                                           analyze the reasoning very briefly, then respond with '**YES**' for \n\
                                           high quality or '**NO**' if it is not. Finally, provide a brief but\n\
                                           specific explanation for your judgment. Hint: You can first summarize\n\
                                           the given thinking process to identify the main reasoning chain, then\n\
                                           analyze the reasoning chain sentence by sentence.";

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("empty slice: nothing to judge")]
    EmptySlice,
    #[error("missing verdict: no marker found in response")]
    MissingVerdict,
    #[error("configuration error: {0}")]
    Configuration(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// Output token cap (K).
    pub max_new_tokens: usize,
    pub system_prompt: String,
    /// (yes, no) markers, matched as exact strings.
    pub verdict_markers: (String, String),
    pub include_question: bool,
    /// Number of preceding slices included for context; 0 sends the slice alone.
    pub context_window: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 128,
            system_prompt: EVALUATOR_SYSTEM_PROMPT.to_string(),
            verdict_markers: ("**YES**".to_string(), "**NO**".to_string()),
            include_question: true,
            context_window: 0,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if self.max_new_tokens < 8 {
            return Err(JudgeError::Configuration("max_new_tokens must be >= 8".into()));
        }
        let (yes, no) = &self.verdict_markers;
        if yes.is_empty() || no.is_empty() || yes == no {
            return Err(JudgeError::Configuration(
                "verdict markers must be distinct and non-empty".into(),
            ));
        }
        Ok(())
    }
}

/// A parsed judge response for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub slice_ref: String,
    /// 1 = sound, 0 = unsound. Absent when no marker was found (such records
    /// only arise when callers persist unparseable responses).
    pub verdict: Option<u8>,
    /// Text before the marker, trimmed.
    pub analysis: String,
    /// Text after the marker, trimmed; may be empty.
    pub rationale: String,
    pub truncated: bool,
    pub raw_text: String,
}

/// Two-message prompt for a chat-completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMessages {
    pub system: String,
    pub user: String,
}

/// Builds the soundness query for one slice.
pub fn build_soundness_prompt(
    slice: &Slice,
    question: Option<&str>,
    cfg: &JudgeConfig,
) -> Result<PromptMessages, JudgeError> {
    build_soundness_prompt_with_context(slice, &[], question, cfg)
}

/// As [`build_soundness_prompt`], with up to `cfg.context_window` preceding
/// slices prepended under their own header.
pub fn build_soundness_prompt_with_context(
    slice: &Slice,
    preceding: &[Slice],
    question: Option<&str>,
    cfg: &JudgeConfig,
) -> Result<PromptMessages, JudgeError> {
    if slice.text.trim().is_empty() {
        return Err(JudgeError::EmptySlice);
    }
    let mut user = String::new();
    if cfg.include_question
        && let Some(q) = question
    {
        user.push_str("Question:\n");
        user.push_str(q);
        user.push_str("\n\n");
    }
    let context: Vec<&Slice> =
        preceding.iter().rev().take(cfg.context_window).rev().collect();
    if !context.is_empty() {
        user.push_str("Preceding reasoning:\n");
        for s in context {
            user.push_str(&s.text);
            user.push('\n');
        }
        user.push('\n');
    }
    if user.is_empty() {
        // No headers at all: the user content is exactly the slice text.
        user.push_str(&slice.text);
    } else {
        user.push_str("Reasoning slice:\n");
        user.push_str(&slice.text);
    }
    Ok(PromptMessages { system: cfg.system_prompt.clone(), user })
}

/// Earliest occurrence of either marker: (byte_start, byte_end, verdict).
/// When both markers match at the same position (possible only when one is a
/// prefix of the other), the longer marker wins.
fn first_marker(text: &str, cfg: &JudgeConfig) -> Option<(usize, usize, u8)> {
    let (yes, no) = &cfg.verdict_markers;
    let yes_at = text.find(yes.as_str());
    let no_at = text.find(no.as_str());
    match (yes_at, no_at) {
        (None, None) => None,
        (Some(y), None) => Some((y, y + yes.len(), 1)),
        (None, Some(n)) => Some((n, n + no.len(), 0)),
        (Some(y), Some(n)) if y < n => Some((y, y + yes.len(), 1)),
        (Some(y), Some(n)) if n < y => Some((n, n + no.len(), 0)),
        (Some(y), Some(_)) if yes.len() >= no.len() => Some((y, y + yes.len(), 1)),
        (_, Some(n)) => Some((n, n + no.len(), 0)),
    }
}

/// Parses an analysis-score-rationale response. The first marker occurrence
/// decides the verdict; later occurrences (e.g. quoted in the rationale) are
/// ignored.
pub fn parse_verdict(response: &str, cfg: &JudgeConfig) -> Result<Judgment, JudgeError> {
    let (start, end, verdict) = first_marker(response, cfg).ok_or(JudgeError::MissingVerdict)?;
    Ok(Judgment {
        slice_ref: String::new(),
        verdict: Some(verdict),
        analysis: response[..start].trim().to_string(),
        rationale: response[end..].trim().to_string(),
        truncated: false,
        raw_text: response.to_string(),
    })
}

/// Longest prefix of `response` with at most `cfg.max_new_tokens` whitespace
/// tokens that does not split a verdict marker. Returns the prefix and
/// whether shortening occurred.
pub fn truncate_response(response: &str, cfg: &JudgeConfig) -> (String, bool) {
    let k = cfg.max_new_tokens;
    if count_whitespace_tokens(response) <= k {
        return (response.to_string(), false);
    }
    // Byte position just before the (k+1)-th token starts.
    let mut cut = 0usize;
    let mut seen = 0usize;
    let mut in_token = false;
    for (pos, ch) in response.char_indices() {
        if ch.is_whitespace() {
            in_token = false;
        } else if !in_token {
            in_token = true;
            seen += 1;
            if seen > k {
                cut = pos;
                break;
            }
        }
    }
    // Never split a marker: if an occurrence straddles the cut, move the cut
    // to its start so the marker is wholly absent.
    for marker in [&cfg.verdict_markers.0, &cfg.verdict_markers.1] {
        let mut from = 0usize;
        while let Some(found) = response[from..].find(marker.as_str()) {
            let s = from + found;
            let e = s + marker.len();
            if s < cut && cut < e {
                cut = s;
            }
            from = e;
        }
    }
    (response[..cut].to_string(), true)
}

/// Truncates, parses and labels a raw judge response for `slice_ref`.
pub fn evaluate_response(
    slice_ref: &str,
    response: &str,
    cfg: &JudgeConfig,
) -> Result<Judgment, JudgeError> {
    let (text, truncated) = truncate_response(response, cfg);
    let mut judgment = parse_verdict(&text, cfg)?;
    judgment.slice_ref = slice_ref.to_string();
    judgment.truncated = truncated;
    Ok(judgment)
}
