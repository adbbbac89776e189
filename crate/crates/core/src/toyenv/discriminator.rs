//! Slice discriminator: a logistic model over hand-built slice features with
//! a shared weight trunk and two biases, one per head. The verdict head
//! scores soundness (R^s source), the provenance head scores
//! real-vs-generated (R^d / R^a source). Sharing the trunk means provenance
//! pressure and verdict pressure shape the same representation, which is the
//! point of training them jointly.

use serde::{Deserialize, Serialize};

use super::policy::{TERSE_TEMPLATES, VERBOSE_TEMPLATES};
use super::task::oracle_step_check;
use crate::grpo::DifferentiablePolicy;
use crate::slicer::count_whitespace_tokens;

pub const N_FEATURES: usize = 5;

/// [arithmetic error, no equation, verbose head, terse head, tokens / 16].
///
/// Verbose templates are tested first: two of them start with terse prefixes,
/// so the order is load-bearing.
pub fn slice_features(text: &str, modulus: u32) -> [f64; N_FEATURES] {
    let (err, no_eq) = match oracle_step_check(text, modulus) {
        Ok(bit) => (f64::from(1 - bit), 0.0),
        Err(_) => (0.0, 1.0),
    };
    let verbose = VERBOSE_TEMPLATES.iter().any(|t| text.starts_with(t));
    let terse = !verbose && TERSE_TEMPLATES.iter().any(|t| text.starts_with(t));
    [err, no_eq, f64::from(verbose), f64::from(terse), count_whitespace_tokens(text) as f64 / 16.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Verdict,
    Provenance,
}

/// One Bernoulli emission: the sampled `bit` under `head` given `features`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscAction {
    pub features: [f64; N_FEATURES],
    pub bit: u8,
    pub head: Head,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyDiscriminatorPolicy {
    pub w: [f64; N_FEATURES],
    pub b_verdict: f64,
    pub b_provenance: f64,
}

impl ToyDiscriminatorPolicy {
    /// P(bit = 1 | features, head), clamped away from 0 and 1 so logprobs
    /// stay finite.
    pub fn prob(&self, features: &[f64; N_FEATURES], head: Head) -> f64 {
        let bias = match head {
            Head::Verdict => self.b_verdict,
            Head::Provenance => self.b_provenance,
        };
        let z: f64 = self.w.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + bias;
        (1.0 / (1.0 + (-z).exp())).clamp(1e-12, 1.0 - 1e-12)
    }
}

impl DifferentiablePolicy for ToyDiscriminatorPolicy {
    type Action = DiscAction;

    fn n_params(&self) -> usize {
        N_FEATURES + 2
    }

    fn logprob(&self, action: &DiscAction) -> f64 {
        let p = self.prob(&action.features, action.head);
        if action.bit == 1 { p.ln() } else { (1.0 - p).ln() }
    }

    fn add_logprob_grad(&self, action: &DiscAction, scale: f64, grad: &mut [f64]) {
        let p = self.prob(&action.features, action.head);
        let residual = f64::from(action.bit) - p;
        for (g, f) in grad[..N_FEATURES].iter_mut().zip(&action.features) {
            *g += scale * residual * f;
        }
        let bias_index = match action.head {
            Head::Verdict => N_FEATURES,
            Head::Provenance => N_FEATURES + 1,
        };
        grad[bias_index] += scale * residual;
    }

    fn apply_step(&mut self, step: &[f64]) {
        for (w, s) in self.w.iter_mut().zip(&step[..N_FEATURES]) {
            *w += s;
        }
        self.b_verdict += step[N_FEATURES];
        self.b_provenance += step[N_FEATURES + 1];
    }
}
