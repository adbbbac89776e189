//! Reward calculus for both policies.
//!
//! Reasoner side: an exact-match term R^m on the final answer plus the mean
//! R^s of binary slice verdicts, combined as R^rea = lambda1*R^m + lambda2*R^s.
//! Discriminator side: a GAN term R^d (mean log D over reference slices plus
//! mean log(1-D) over generated ones) plus an alignment term R^a (mean
//! agreement between slice verdicts and final-answer correctness), combined
//! as R^dis = lambda3*R^d + lambda4*R^a.

use std::str::FromStr;
use std::sync::LazyLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Pow, Zero};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp applied to discriminator probabilities before taking logs.
pub const DEFAULT_CLAMP_DELTA: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("no slices: verdict list is empty")]
    NoSlices,
    #[error("empty batch: {0} probability list is empty")]
    EmptyBatch(&'static str),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("clamp delta {0} outside (0, 0.5)")]
    InvalidClampDelta(f64),
    #[error("reward weights must be finite and non-negative, got {0}")]
    InvalidWeights(f64),
}

/// Mixing weights for the reward combinations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0, lambda4: 0.5 }
    }
}

impl RewardWeights {
    /// All weights must be finite and non-negative.
    pub fn validate(&self) -> Result<(), RewardError> {
        for w in [self.lambda1, self.lambda2, self.lambda3, self.lambda4] {
            if !w.is_finite() || w < 0.0 {
                return Err(RewardError::InvalidWeights(w));
            }
        }
        Ok(())
    }
}

/// Per-rollout reasoner reward with its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// R^m, 0 or 1.
    #[serde(rename = "r_m")]
    pub exact_match: f64,
    /// R^s, mean of binary slice verdicts.
    #[serde(rename = "r_s")]
    pub slice_mean: f64,
    /// R^rea = lambda1*R^m + lambda2*R^s.
    #[serde(rename = "r_rea")]
    pub reasoner_total: f64,
    /// Number of slices behind slice_mean.
    pub n_slices: usize,
}

impl RewardBreakdown {
    pub fn compute(
        exact: f64,
        verdicts: &[bool],
        weights: &RewardWeights,
    ) -> Result<Self, RewardError> {
        let rs = slice_mean(verdicts)?;
        Ok(Self {
            exact_match: exact,
            slice_mean: rs,
            reasoner_total: reasoner_reward(exact, rs, weights),
            n_slices: verdicts.len(),
        })
    }
}

/// Per-batch discriminator reward with its components. Probabilities are
/// stored post-clamp, so they sit strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorBatchReward {
    pub d_ref_probs: Vec<f64>,
    pub d_gen_probs: Vec<f64>,
    /// R^d, always negative.
    pub gan_term: f64,
    /// R^a in [0, 1].
    pub alignment_term: f64,
    /// R^dis = lambda3*R^d + lambda4*R^a.
    pub total: f64,
}

impl DiscriminatorBatchReward {
    pub fn compute(
        d_ref_probs: Vec<f64>,
        d_gen_probs: Vec<f64>,
        alignment_term: f64,
        weights: &RewardWeights,
        clamp_delta: f64,
    ) -> Result<Self, RewardError> {
        let gan_term = gan_reward(&d_ref_probs, &d_gen_probs, clamp_delta)?;
        let clamp = |p: f64| p.clamp(clamp_delta, 1.0 - clamp_delta);
        Ok(Self {
            d_ref_probs: d_ref_probs.into_iter().map(clamp).collect(),
            d_gen_probs: d_gen_probs.into_iter().map(clamp).collect(),
            gan_term,
            alignment_term,
            total: discriminator_reward(gan_term, alignment_term, weights),
        })
    }
}

/// R^m: 1 iff the canonicalized answers are equal.
///
/// Canonicalization trims whitespace, strips answer-box wrappers
/// (`\boxed{..}`, `$..$`, `\(..\)`, `\[..\]`, surrounding braces) and
/// compares numerically when both sides parse as rationals ("0.5" == "1/2").
/// An empty prediction counts as wrong, never as an error.
pub fn exact_match(answer_pred: &str, answer_gt: &str) -> f64 {
    let pred = canonicalize_answer(answer_pred);
    if pred.is_empty() {
        return 0.0;
    }
    let gt = canonicalize_answer(answer_gt);
    let matched = match (parse_rational(&pred), parse_rational(&gt)) {
        (Some(p), Some(g)) => p == g,
        _ => pred == gt,
    };
    if matched { 1.0 } else { 0.0 }
}

/// R^s: arithmetic mean of binary slice verdicts.
pub fn slice_mean(verdicts: &[bool]) -> Result<f64, RewardError> {
    if verdicts.is_empty() {
        return Err(RewardError::NoSlices);
    }
    let yes = verdicts.iter().filter(|&&v| v).count();
    Ok(yes as f64 / verdicts.len() as f64)
}

/// R^rea = lambda1*rm + lambda2*rs.
pub fn reasoner_reward(rm: f64, rs: f64, w: &RewardWeights) -> f64 {
    w.lambda1 * rm + w.lambda2 * rs
}

/// R^d: mean ln D over reference slices plus mean ln(1-D) over generated
/// ones, with every probability clamped into [delta, 1-delta] first.
///
/// Always negative; bounded by 2*ln(delta) <= R^d <= 2*ln(1-delta).
pub fn gan_reward(d_ref: &[f64], d_gen: &[f64], clamp_delta: f64) -> Result<f64, RewardError> {
    if !(clamp_delta > 0.0 && clamp_delta < 0.5) {
        return Err(RewardError::InvalidClampDelta(clamp_delta));
    }
    if d_ref.is_empty() {
        return Err(RewardError::EmptyBatch("reference"));
    }
    if d_gen.is_empty() {
        return Err(RewardError::EmptyBatch("generated"));
    }
    for &p in d_ref.iter().chain(d_gen) {
        if !(0.0..=1.0).contains(&p) {
            return Err(RewardError::InvalidProbability(p));
        }
    }
    let clamp = |p: f64| p.clamp(clamp_delta, 1.0 - clamp_delta);
    let ref_mean =
        d_ref.iter().map(|&p| clamp(p).ln()).sum::<f64>() / d_ref.len() as f64;
    let gen_mean =
        d_gen.iter().map(|&p| (1.0 - clamp(p)).ln()).sum::<f64>() / d_gen.len() as f64;
    Ok(ref_mean + gen_mean)
}

/// R^a: mean agreement between slice verdicts and final-answer correctness.
pub fn alignment_reward(verdicts: &[bool], final_correct: bool) -> Result<f64, RewardError> {
    if verdicts.is_empty() {
        return Err(RewardError::NoSlices);
    }
    let agree = verdicts.iter().filter(|&&v| v == final_correct).count();
    Ok(agree as f64 / verdicts.len() as f64)
}

/// R^dis = lambda3*rd + lambda4*ra.
pub fn discriminator_reward(rd: f64, ra: f64, w: &RewardWeights) -> f64 {
    w.lambda3 * rd + w.lambda4 * ra
}

static INT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[+-]?\d+$").unwrap());
static DECIMAL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?)(\d*)\.(\d*)$").unwrap());
static FRACTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([+-]?\d+)\s*/\s*([+-]?\d+)$").unwrap());

fn parse_rational(s: &str) -> Option<BigRational> {
    if INT_RE.is_match(s) {
        return BigInt::from_str(s).ok().map(BigRational::from_integer);
    }
    if let Some(c) = DECIMAL_RE.captures(s) {
        let (sign, int_part, frac_part) = (&c[1], &c[2], &c[3]);
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        let digits = format!("{int_part}{frac_part}");
        let numer = BigInt::from_str(&digits).ok()?;
        let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
        let value = BigRational::new(numer, denom);
        return Some(if sign == "-" { -value } else { value });
    }
    if let Some(c) = FRACTION_RE.captures(s) {
        let numer = BigInt::from_str(&c[1]).ok()?;
        let denom = BigInt::from_str(&c[2]).ok()?;
        if denom.is_zero() {
            return None;
        }
        return Some(BigRational::new(numer, denom));
    }
    None
}

fn canonicalize_answer(s: &str) -> String {
    let mut cur = s.trim();
    loop {
        let stripped = strip_wrapper(cur);
        if stripped == cur {
            return cur.to_string();
        }
        cur = stripped;
    }
}

/// Strips one layer of answer-box wrapping, if present.
fn strip_wrapper(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [("\\boxed{", "}"), ("\\(", "\\)"), ("\\[", "\\]"), ("{", "}")] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            // Only unwrap when the braces actually match each other, so
            // "{1} + {2}" is not mangled into "1} + {2".
            if open.ends_with('{') && !braces_balanced(inner) {
                continue;
            }
            return inner;
        }
    }
    if s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
        return &s[1..s.len() - 1];
    }
    s
}

fn braces_balanced(s: &str) -> bool {
    let mut depth = 0i32;
    for ch in s.chars() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}
