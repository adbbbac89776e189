//! Desk-scale instantiation of the full adversarial reasoning loop: a
//! synthetic arithmetic-chain task with an exact step oracle, a tabular
//! softmax reasoner, a feature-logistic discriminator with shared trunk and
//! two heads (soundness verdict, real-vs-generated provenance), and training
//! modes covering the ablation grid, partial-trace training, and style
//! distillation.
//!
//! Determinism contract: every consumer of randomness draws from its own
//! ChaCha substream derived from (seed, stream id), so ablation switches
//! never perturb an unrelated stream. Identical config + seed produces an
//! identical report.

pub mod discriminator;
pub mod distill;
pub mod policy;
pub mod task;
pub mod trainer;

pub use discriminator::{DiscAction, Head, N_FEATURES, ToyDiscriminatorPolicy, slice_features};
pub use distill::{DistillReport, style_probe_auc, train_distill};
pub use policy::{
    N_TEMPLATES, ReasonerAction, StepRecord, TERSE_TEMPLATES, ToyReasonerPolicy, ToyRollout,
    VERBOSE_TEMPLATES, rollout, template_text,
};
pub use task::{Op, ToyTask, fold_op, oracle_step_check, sample_task};
pub use trainer::{
    EpisodeRow, TrainingReport, evaluate_task_accuracy, held_out_verdict_accuracy, train_joint,
    train_partial_trace,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grpo::{GrpoConfig, LearningRateSchedule};
use crate::rewards::RewardWeights;

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// RNG stream ids. Each concern owns a stream so that enabling or disabling
/// one (an ablation) cannot shift the draws of another.
pub const STREAM_TASKS: u64 = 0;
pub const STREAM_REASONER: u64 = 1;
pub const STREAM_DISC: u64 = 2;
pub const STREAM_REFERENCE: u64 = 3;
pub const STREAM_EVAL_TASKS: u64 = 4;
pub const STREAM_EVAL_ROLLOUTS: u64 = 5;
pub const STREAM_EVAL_DISC: u64 = 6;
pub const STREAM_DISC_WARMUP: u64 = 7;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG for (seed, stream).
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed).wrapping_add(stream)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    StandardRl,
    FixedDiscriminator,
    NoAlignment,
    NoGan,
    PartialTrace,
    Distill,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::StandardRl => "standard_rl",
            Mode::FixedDiscriminator => "fixed_discriminator",
            Mode::NoAlignment => "no_alignment",
            Mode::NoGan => "no_gan",
            Mode::PartialTrace => "partial_trace",
            Mode::Distill => "distill",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = ToyError;

    fn from_str(s: &str) -> Result<Self, ToyError> {
        match s {
            "full" => Ok(Mode::Full),
            "standard_rl" => Ok(Mode::StandardRl),
            "fixed_discriminator" => Ok(Mode::FixedDiscriminator),
            "no_alignment" => Ok(Mode::NoAlignment),
            "no_gan" => Ok(Mode::NoGan),
            "partial_trace" => Ok(Mode::PartialTrace),
            "distill" => Ok(Mode::Distill),
            other => Err(ToyError::Configuration(format!("unknown mode `{other}`"))),
        }
    }
}

fn default_episodes() -> usize {
    800
}
fn default_tasks_per_episode() -> usize {
    4
}
fn default_group_size() -> usize {
    8
}
fn default_ref_chains_per_task() -> usize {
    8
}
fn default_chain_length() -> usize {
    6
}
fn default_modulus() -> u32 {
    97
}
fn default_value_vocab() -> usize {
    16
}
fn default_reasoner_lr() -> f64 {
    6.0
}
fn default_disc_lr() -> f64 {
    12.0
}
fn default_warmup_frac() -> f64 {
    0.1
}
fn default_lr_floor_ratio() -> f64 {
    0.5
}
fn default_clip_epsilon() -> f64 {
    0.2
}
fn default_std_epsilon() -> f64 {
    1e-8
}
fn default_accuracy_threshold() -> f64 {
    0.9
}
fn default_threshold_window() -> usize {
    5
}
fn default_eval_tasks() -> usize {
    32
}
fn default_eval_rollouts_per_task() -> usize {
    4
}
fn default_distill_phase1_episodes() -> usize {
    40
}
fn default_disc_warmup_traces() -> usize {
    64
}
fn default_disc_warmup_iters() -> usize {
    300
}
fn default_init_correct_logit() -> f64 {
    // softmax mass ~0.4 on the correct slot when the other 15 sit at 0:
    // high enough that chains sometimes finish clean, low enough that the
    // final answer alone is a rare learning signal.
    (15.0f64 * 0.4 / 0.6).ln()
}
fn default_init_verbose_logit() -> f64 {
    -4.0
}
fn default_temperature() -> f64 {
    1.0
}
fn default_mode() -> Mode {
    Mode::Full
}

/// Everything a training run needs; fields default individually so config
/// files may state only what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub seed: u64,
    pub episodes: usize,
    pub tasks_per_episode: usize,
    /// Reasoner rollouts per task (G).
    pub group_size: usize,
    /// Discriminator decision rollouts per episode (G_d).
    pub disc_group_size: usize,
    pub ref_chains_per_task: usize,
    /// Steps per chain (T).
    pub chain_length: usize,
    pub modulus: u32,
    /// Candidate results per step (V).
    pub value_vocab: usize,
    pub weights: RewardWeights,
    /// Rollouts halt after this many slices (partial-trace mode).
    pub max_slices: Option<usize>,
    pub reasoner_lr: f64,
    pub disc_lr: f64,
    pub warmup_frac: f64,
    /// Cosine decay floor as a fraction of the initial rate.
    pub lr_floor_ratio: f64,
    pub clip_epsilon: f64,
    pub std_epsilon: f64,
    pub kl_coeff: f64,
    pub accuracy_threshold: f64,
    /// Trailing episodes averaged when testing the threshold.
    pub threshold_window: usize,
    pub stop_at_threshold: bool,
    pub eval_tasks: usize,
    pub eval_rollouts_per_task: usize,
    pub distill_phase1_episodes: usize,
    /// Rollouts labelled by the oracle for the verdict head's supervised
    /// cold start; 0 skips it and the head begins at chance.
    pub disc_warmup_traces: usize,
    pub disc_warmup_iters: usize,
    /// Initial logit advantage of the correct value slot.
    pub init_correct_logit: f64,
    /// Initial logit of verbose templates (terse sit at 0).
    pub init_verbose_logit: f64,
    pub temperature: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            seed: 0,
            episodes: default_episodes(),
            tasks_per_episode: default_tasks_per_episode(),
            group_size: default_group_size(),
            disc_group_size: default_group_size(),
            ref_chains_per_task: default_ref_chains_per_task(),
            chain_length: default_chain_length(),
            modulus: default_modulus(),
            value_vocab: default_value_vocab(),
            weights: RewardWeights::default(),
            max_slices: None,
            reasoner_lr: default_reasoner_lr(),
            disc_lr: default_disc_lr(),
            warmup_frac: default_warmup_frac(),
            lr_floor_ratio: default_lr_floor_ratio(),
            clip_epsilon: default_clip_epsilon(),
            std_epsilon: default_std_epsilon(),
            kl_coeff: 0.0,
            accuracy_threshold: default_accuracy_threshold(),
            threshold_window: default_threshold_window(),
            stop_at_threshold: false,
            eval_tasks: default_eval_tasks(),
            eval_rollouts_per_task: default_eval_rollouts_per_task(),
            distill_phase1_episodes: default_distill_phase1_episodes(),
            disc_warmup_traces: default_disc_warmup_traces(),
            disc_warmup_iters: default_disc_warmup_iters(),
            init_correct_logit: default_init_correct_logit(),
            init_verbose_logit: default_init_verbose_logit(),
            temperature: default_temperature(),
        }
    }
}

impl TrainingConfig {
    /// Default config for `mode`, with the mode's weight/limit presets
    /// applied.
    pub fn for_mode(mode: Mode, seed: u64) -> Self {
        let mut cfg = Self { mode, seed, ..Default::default() };
        match mode {
            Mode::Full | Mode::FixedDiscriminator => {}
            Mode::StandardRl => cfg.weights.lambda2 = 0.0,
            Mode::NoGan => cfg.weights.lambda3 = 0.0,
            Mode::NoAlignment => cfg.weights.lambda4 = 0.0,
            Mode::PartialTrace => {
                cfg.weights.lambda1 = 0.0;
                cfg.max_slices = Some(3);
            }
            Mode::Distill => {
                cfg.weights.lambda1 = 0.0;
                cfg.weights.lambda4 = 0.0;
            }
        }
        cfg
    }

    /// Steps actually emitted per rollout.
    pub fn effective_slices(&self) -> usize {
        self.max_slices.map_or(self.chain_length, |m| m.min(self.chain_length))
    }

    /// The discriminator participates (scores slices) in every mode except
    /// exact-match-only RL.
    pub fn disc_enabled(&self) -> bool {
        self.mode != Mode::StandardRl
    }

    /// The discriminator's parameters move.
    pub fn disc_updates(&self) -> bool {
        !matches!(self.mode, Mode::StandardRl | Mode::FixedDiscriminator)
    }

    /// Rollouts carry a final answer line (and hence a correctness bit).
    pub fn rollout_with_answer(&self) -> bool {
        !matches!(self.mode, Mode::PartialTrace | Mode::Distill)
    }

    /// Slice rewards served from the provenance head instead of the verdict
    /// head (style distillation).
    pub fn serve_from_provenance(&self) -> bool {
        self.mode == Mode::Distill
    }

    /// Reference chains rendered verbose (style A) instead of with the
    /// reasoner's initial template mixture.
    pub fn reference_verbose(&self) -> bool {
        self.mode == Mode::Distill
    }

    fn grpo(&self, lr: f64, total_steps: usize) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_epsilon: self.clip_epsilon,
            std_epsilon: self.std_epsilon,
            kl_coeff: self.kl_coeff,
            schedule: LearningRateSchedule {
                initial: lr,
                warmup_frac: self.warmup_frac,
                floor: lr * self.lr_floor_ratio,
                total_steps: total_steps.max(1),
            },
        }
    }

    pub fn reasoner_grpo(&self, total_steps: usize) -> GrpoConfig {
        self.grpo(self.reasoner_lr, total_steps)
    }

    pub fn disc_grpo(&self, total_steps: usize) -> GrpoConfig {
        let mut cfg = self.grpo(self.disc_lr, total_steps);
        cfg.group_size = self.disc_group_size;
        cfg
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let err = |m: String| Err(ToyError::Configuration(m));
        if self.chain_length == 0 {
            return err("chain_length must be >= 1".into());
        }
        if self.modulus < 11 {
            return err("modulus must exceed the operand range".into());
        }
        if self.value_vocab < 2 || self.value_vocab as u32 > self.modulus {
            return err("value_vocab must be in [2, modulus]".into());
        }
        if self.group_size < 2 || self.disc_group_size < 2 {
            return err("group sizes must be >= 2".into());
        }
        if self.tasks_per_episode == 0 {
            return err("tasks_per_episode must be >= 1".into());
        }
        if !(self.reasoner_lr > 0.0 && self.disc_lr > 0.0) {
            return err("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return err("warmup_frac must be in [0,1)".into());
        }
        if !(0.0..=1.0).contains(&self.lr_floor_ratio) {
            return err("lr_floor_ratio must be in [0,1]".into());
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return err("clip_epsilon must be in (0,1)".into());
        }
        if !(self.accuracy_threshold > 0.0 && self.accuracy_threshold <= 1.0) {
            return err("accuracy_threshold must be in (0,1]".into());
        }
        if self.threshold_window == 0 {
            return err("threshold_window must be >= 1".into());
        }
        if self.eval_tasks == 0 || self.eval_rollouts_per_task == 0 {
            return err("eval sizes must be >= 1".into());
        }
        if !(self.temperature > 0.0) {
            return err("temperature must be positive".into());
        }
        self.weights.validate().map_err(|e| ToyError::Configuration(e.to_string()))?;
        if let Some(m) = self.max_slices
            && m == 0
        {
            return err("max_slices must be >= 1 when set".into());
        }
        if self.mode == Mode::PartialTrace
            && (self.weights.lambda1 != 0.0 || self.max_slices.is_none())
        {
            return err("partial_trace requires lambda1 == 0 and max_slices set".into());
        }
        // Every generated slice must fit into the mixed provenance batch so
        // served rewards cover all slices; the reference pool bounds that.
        if self.disc_enabled()
            && self.ref_chains_per_task * self.chain_length
                < self.group_size * self.effective_slices()
        {
            return err(format!(
                "reference pool too small: {} ref slices per task < {} generated",
                self.ref_chains_per_task * self.chain_length,
                self.group_size * self.effective_slices()
            ));
        }
        Ok(())
    }
}
