//! Entropy diagnostics over reasoning traces: per-trace mean entropy,
//! zero-entropy-filtered means, and correct/wrong split summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Threshold below which a token counts as zero-entropy; exact zeros are the
/// intent, floating point demands a tolerance.
pub const DEFAULT_ZERO_TAU: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("no tokens: entropy list is empty")]
    NoTokens,
    #[error("negative entropy {0} at index {1}")]
    NegativeEntropy(f64, usize),
    #[error("empty profile list")]
    NoProfiles,
}

/// Entropy view of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub trace_id: String,
    /// Mean over all tokens, nats.
    pub mean_entropy: f64,
    /// Mean over tokens with H > tau; absent when every token is at zero.
    pub filtered_mean_entropy: Option<f64>,
    /// |{H <= tau}| / N.
    pub zero_fraction: f64,
    pub correct: u8,
    /// Set when entropies were reconstructed from partial logprob data
    /// rather than recorded exactly at sampling time.
    #[serde(default)]
    pub approximate: bool,
}

/// Computes the entropy profile of one trace.
pub fn profile(
    trace_id: &str,
    entropies: &[f64],
    tau: f64,
    correct: u8,
) -> Result<EntropyProfile, AnalyticsError> {
    if entropies.is_empty() {
        return Err(AnalyticsError::NoTokens);
    }
    if let Some((i, h)) = entropies.iter().enumerate().find(|(_, h)| **h < 0.0) {
        return Err(AnalyticsError::NegativeEntropy(*h, i));
    }
    let n = entropies.len() as f64;
    let mean = entropies.iter().sum::<f64>() / n;
    let live: Vec<f64> = entropies.iter().copied().filter(|h| *h > tau).collect();
    let filtered = if live.is_empty() {
        None
    } else {
        Some(live.iter().sum::<f64>() / live.len() as f64)
    };
    Ok(EntropyProfile {
        trace_id: trace_id.to_string(),
        mean_entropy: mean,
        filtered_mean_entropy: filtered,
        zero_fraction: (entropies.len() - live.len()) as f64 / n,
        correct,
        approximate: false,
    })
}

/// Per-token entropies from per-token logprobs of the sampled tokens
/// (surprisal -logp as an entropy proxy). Marked approximate downstream.
pub fn surprisal_entropies(logprobs: &[f64]) -> Vec<f64> {
    logprobs.iter().map(|lp| (-lp).max(0.0)).collect()
}

/// Moment summary of one group of profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: Option<f64>,
    pub p25: Option<f64>,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
}

impl Stats {
    fn empty() -> Self {
        Self { n: 0, mean: None, p25: None, p50: None, p75: None }
    }

    fn from_values(mut values: Vec<f64>) -> Self {
        if values.is_empty() {
            return Self::empty();
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite entropies"));
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        Self {
            n,
            mean: Some(mean),
            p25: Some(quantile_sorted(&values, 0.25)),
            p50: Some(quantile_sorted(&values, 0.50)),
            p75: Some(quantile_sorted(&values, 0.75)),
        }
    }
}

/// Linear-interpolation quantile at position q*(n-1) of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Mean-entropy summaries grouped by the correct flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub correct: Stats,
    pub wrong: Stats,
}

/// Summarizes mean_entropy distributions of correct vs wrong traces.
pub fn split_summary(profiles: &[EntropyProfile]) -> Result<SplitSummary, AnalyticsError> {
    if profiles.is_empty() {
        return Err(AnalyticsError::NoProfiles);
    }
    let (correct, wrong): (Vec<&EntropyProfile>, Vec<&EntropyProfile>) =
        profiles.iter().partition(|p| p.correct == 1);
    Ok(SplitSummary {
        correct: Stats::from_values(correct.iter().map(|p| p.mean_entropy).collect()),
        wrong: Stats::from_values(wrong.iter().map(|p| p.mean_entropy).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: &str, mean: f64, correct: u8) -> EntropyProfile {
        EntropyProfile {
            trace_id: id.into(),
            mean_entropy: mean,
            filtered_mean_entropy: Some(mean),
            zero_fraction: 0.0,
            correct,
            approximate: false,
        }
    }

    #[test]
    fn profile_mixed_zeros() {
        let ln2 = 2.0_f64.ln();
        let pr = profile("t", &[0.0, 0.0, ln2], DEFAULT_ZERO_TAU, 1).unwrap();
        assert!((pr.mean_entropy - 0.231049).abs() < 1e-6);
        assert!((pr.filtered_mean_entropy.unwrap() - 0.693147).abs() < 1e-6);
        assert!((pr.zero_fraction - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pr.correct, 1);
    }

    #[test]
    fn profile_without_zeros() {
        let pr = profile("t", &[0.5, 0.5], DEFAULT_ZERO_TAU, 0).unwrap();
        assert_eq!(pr.mean_entropy, 0.5);
        assert_eq!(pr.filtered_mean_entropy, Some(0.5));
        assert_eq!(pr.zero_fraction, 0.0);
    }

    #[test]
    fn profile_all_zeros() {
        let pr = profile("t", &[0.0, 0.0], DEFAULT_ZERO_TAU, 0).unwrap();
        assert_eq!(pr.filtered_mean_entropy, None);
        assert_eq!(pr.zero_fraction, 1.0);
    }

    #[test]
    fn profile_errors() {
        assert_eq!(profile("t", &[], DEFAULT_ZERO_TAU, 0).unwrap_err(), AnalyticsError::NoTokens);
        assert_eq!(
            profile("t", &[0.1, -0.2], DEFAULT_ZERO_TAU, 0).unwrap_err(),
            AnalyticsError::NegativeEntropy(-0.2, 1)
        );
    }

    #[test]
    fn filtered_mean_dominates_unfiltered() {
        let pr = profile("t", &[0.0, 0.3, 0.7, 0.0, 1.1], DEFAULT_ZERO_TAU, 1).unwrap();
        assert!(pr.filtered_mean_entropy.unwrap() >= pr.mean_entropy);
    }

    #[test]
    fn split_groups_by_correct_flag() {
        let profiles =
            vec![p("a", 0.2, 1), p("b", 0.4, 1), p("c", 0.3, 1), p("d", 0.9, 0), p("e", 1.1, 0)];
        let s = split_summary(&profiles).unwrap();
        assert_eq!(s.correct.n, 3);
        assert_eq!(s.wrong.n, 2);
        assert!((s.correct.mean.unwrap() - 0.3).abs() < 1e-12);
        assert!((s.wrong.mean.unwrap() - 1.0).abs() < 1e-12);
        assert!(s.wrong.mean.unwrap() > s.correct.mean.unwrap());
    }

    #[test]
    fn split_with_one_empty_group() {
        let s = split_summary(&[p("a", 0.2, 1), p("b", 0.4, 1)]).unwrap();
        assert_eq!(s.wrong.n, 0);
        assert_eq!(s.wrong.mean, None);
        assert_eq!(s.wrong.p50, None);
    }

    #[test]
    fn single_profile_quantiles_collapse() {
        let s = split_summary(&[p("a", 0.42, 1)]).unwrap();
        assert_eq!(s.correct.p25, Some(0.42));
        assert_eq!(s.correct.p50, Some(0.42));
        assert_eq!(s.correct.p75, Some(0.42));
        assert_eq!(s.correct.mean, Some(0.42));
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        // Values 0..=4: p25 at position 1.0, p50 at 2.0, p75 at 3.0.
        let profiles: Vec<EntropyProfile> =
            (0..5).map(|i| p(&format!("t{i}"), i as f64, 1)).collect();
        let s = split_summary(&profiles).unwrap();
        assert_eq!(s.correct.p25, Some(1.0));
        assert_eq!(s.correct.p50, Some(2.0));
        assert_eq!(s.correct.p75, Some(3.0));

        // Two values: interpolated quartiles.
        let s = split_summary(&[p("a", 0.0, 1), p("b", 1.0, 1)]).unwrap();
        assert_eq!(s.correct.p25, Some(0.25));
        assert_eq!(s.correct.p50, Some(0.5));
        assert_eq!(s.correct.p75, Some(0.75));
    }

    #[test]
    fn constructed_shift_is_reproduced() {
        let correct: Vec<EntropyProfile> =
            (0..10).map(|i| p(&format!("c{i}"), 0.2 + 0.01 * i as f64, 1)).collect();
        let wrong: Vec<EntropyProfile> =
            (0..10).map(|i| p(&format!("w{i}"), 0.3 + 0.01 * i as f64, 0)).collect();
        let all: Vec<EntropyProfile> = correct.into_iter().chain(wrong).collect();
        let s = split_summary(&all).unwrap();
        assert!((s.wrong.mean.unwrap() - s.correct.mean.unwrap() - 0.1).abs() < 1e-12);
        assert!((s.wrong.p50.unwrap() - s.correct.p50.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn surprisal_conversion_clamps_at_zero() {
        let hs = surprisal_entropies(&[-1.2, 0.0, -0.3, 1e-17]);
        assert_eq!(hs, vec![1.2, 0.0, 0.3, 0.0]);
    }

    #[test]
    fn serde_defaults_approximate_flag() {
        let json = r#"{"trace_id":"t","mean_entropy":0.5,"filtered_mean_entropy":0.5,"zero_fraction":0.0,"correct":1}"#;
        let pr: EntropyProfile = serde_json::from_str(json).unwrap();
        assert!(!pr.approximate);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn profile_is_permutation_invariant(
                mut entropies in prop::collection::vec(0.0f64..3.0, 1..64),
                seed in 0u64..1000,
            ) {
                let base = profile("t", &entropies, DEFAULT_ZERO_TAU, 1).unwrap();
                // Deterministic shuffle keyed by the seed.
                let n = entropies.len();
                for i in (1..n).rev() {
                    let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % (i + 1);
                    entropies.swap(i, j);
                }
                let shuffled = profile("t", &entropies, DEFAULT_ZERO_TAU, 1).unwrap();
                prop_assert!((base.mean_entropy - shuffled.mean_entropy).abs() < 1e-9);
                prop_assert_eq!(base.zero_fraction, shuffled.zero_fraction);
                match (base.filtered_mean_entropy, shuffled.filtered_mean_entropy) {
                    (None, None) => {}
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                    _ => prop_assert!(false, "filtered presence changed under permutation"),
                }
            }

            #[test]
            fn filtered_never_below_mean(
                entropies in prop::collection::vec(0.0f64..3.0, 1..64),
            ) {
                let pr = profile("t", &entropies, DEFAULT_ZERO_TAU, 0).unwrap();
                if let Some(f) = pr.filtered_mean_entropy {
                    prop_assert!(f >= pr.mean_entropy - 1e-12);
                    if pr.zero_fraction == 0.0 {
                        prop_assert!((f - pr.mean_entropy).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
