//! Group-relative advantage computation and clipped policy-gradient updates,
//! shared by the reasoner and discriminator optimizers.
//!
//! Rewards are standardized within each rollout group (population std); a
//! zero-variance group carries no ranking information and contributes zero
//! gradient. The surrogate is the clipped ratio objective; one optimizer step
//! is taken per batch of groups.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GrpoError {
    #[error("group too small: need >= 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Configuration(String),
}

/// Standardized rewards for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub advantages: Vec<f64>,
    /// True when the group had zero reward variance; advantages are all zero.
    pub degenerate: bool,
}

/// A_i = (r_i - mean) / (population std + std_epsilon).
pub fn group_advantages(rewards: &[f64], std_epsilon: f64) -> Result<GroupAdvantages, GrpoError> {
    let g = rewards.len();
    if g < 2 {
        return Err(GrpoError::GroupTooSmall(g));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::Numerical("non-finite reward in group".into()));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(GroupAdvantages { advantages: vec![0.0; g], degenerate: true });
    }
    let denom = std + std_epsilon;
    Ok(GroupAdvantages {
        advantages: rewards.iter().map(|r| (r - mean) / denom).collect(),
        degenerate: false,
    })
}

/// min(rho*A, clip(rho, 1-eps, 1+eps)*A) with rho = exp(logp_new - logp_old).
pub fn clipped_surrogate(logp_new: f64, logp_old: f64, advantage: f64, clip_epsilon: f64) -> f64 {
    let rho = (logp_new - logp_old).exp();
    let clipped = rho.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
    (rho * advantage).min(clipped * advantage)
}

/// Linear warm-up to `initial`, then cosine decay to `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    pub initial: f64,
    /// Fraction of total_steps spent warming up linearly from 0.
    pub warmup_frac: f64,
    pub floor: f64,
    pub total_steps: usize,
}

impl LearningRateSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { initial: lr, warmup_frac: 0.0, floor: lr, total_steps: 1 }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(GrpoError::Configuration("initial lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(GrpoError::Configuration("warmup_frac must be in [0,1)".into()));
        }
        if !(self.floor >= 0.0 && self.floor <= self.initial) {
            return Err(GrpoError::Configuration("floor must be in [0, initial]".into()));
        }
        if self.total_steps == 0 {
            return Err(GrpoError::Configuration("total_steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1) as f64;
        let warmup_steps = (self.warmup_frac * total).floor();
        let s = step as f64;
        if s < warmup_steps {
            return self.initial * (s + 1.0) / warmup_steps;
        }
        let decay_span = (total - warmup_steps).max(1.0);
        let progress = ((s - warmup_steps) / decay_span).clamp(0.0, 1.0);
        self.floor
            + (self.initial - self.floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub std_epsilon: f64,
    pub kl_coeff: f64,
    pub schedule: LearningRateSchedule,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            std_epsilon: 1e-8,
            kl_coeff: 0.0,
            schedule: LearningRateSchedule {
                initial: 1e-6,
                warmup_frac: 0.1,
                floor: 5e-7,
                total_steps: 1000,
            },
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::Configuration("group_size must be >= 2".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(GrpoError::Configuration("clip_epsilon must be in (0,1)".into()));
        }
        if !(self.std_epsilon > 0.0) {
            return Err(GrpoError::Configuration("std_epsilon must be positive".into()));
        }
        if self.kl_coeff < 0.0 {
            return Err(GrpoError::Configuration("kl_coeff must be >= 0".into()));
        }
        self.schedule.validate()
    }
}

/// One sampled rollout: its scalar reward and the actions taken, each with
/// the log-probability recorded under the sampling policy.
#[derive(Debug, Clone)]
pub struct RolloutSample<A> {
    pub reward: f64,
    pub actions: Vec<(A, f64)>,
}

/// All rollouts answering one question, standardized together.
#[derive(Debug, Clone)]
pub struct RolloutGroup<A> {
    pub question_id: String,
    pub rollouts: Vec<RolloutSample<A>>,
    pub advantages: GroupAdvantages,
}

impl<A> RolloutGroup<A> {
    pub fn new(
        question_id: impl Into<String>,
        rollouts: Vec<RolloutSample<A>>,
        std_epsilon: f64,
    ) -> Result<Self, GrpoError> {
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let advantages = group_advantages(&rewards, std_epsilon)?;
        Ok(Self { question_id: question_id.into(), rollouts, advantages })
    }
}

/// A policy that can recompute action log-probs and accumulate gradients of
/// them with respect to its parameters.
pub trait DifferentiablePolicy {
    type Action;

    fn n_params(&self) -> usize;
    /// Log-probability of `action` under current parameters.
    fn logprob(&self, action: &Self::Action) -> f64;
    /// Adds scale * d(logprob(action))/d(theta) into `grad`.
    fn add_logprob_grad(&self, action: &Self::Action, scale: f64, grad: &mut [f64]);
    /// theta += step (gradient ascent).
    fn apply_step(&mut self, step: &[f64]);
}

/// Metrics for one optimizer step, appended to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub mean_reward: f64,
    pub mean_advantage_abs: f64,
    /// Fraction of actions whose ratio left the clip interval.
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub degenerate_groups: usize,
}

/// One gradient-ascent step on the mean clipped surrogate minus
/// kl_coeff * KL(new || old), estimated per action.
///
/// The objective averages over groups, rollouts within a group, and actions
/// within a rollout. Called with the sampling-time log-probs still current
/// (one step per batch), so rho = 1 at the point of linearization; the
/// clipped-ratio form still guards replayed or off-policy batches.
pub fn update_policy<P: DifferentiablePolicy>(
    policy: &mut P,
    groups: &[RolloutGroup<P::Action>],
    cfg: &GrpoConfig,
    step_index: usize,
) -> Result<UpdateMetrics, GrpoError> {
    let n_params = policy.n_params();
    let mut grad = vec![0.0; n_params];
    let mut adv_abs_sum = 0.0;
    let mut actions_total = 0usize;
    let mut actions_clipped = 0usize;
    let mut degenerate_groups = 0usize;

    let reward_n: usize = groups.iter().map(|g| g.rollouts.len()).sum();
    let reward_sum: f64 =
        groups.iter().flat_map(|g| g.rollouts.iter().map(|r| r.reward)).sum();
    let n_groups = groups.len().max(1) as f64;

    for group in groups {
        if group.advantages.degenerate {
            degenerate_groups += 1;
            continue;
        }
        let group_weight = 1.0 / (n_groups * group.rollouts.len().max(1) as f64);
        for (rollout, &adv) in group.rollouts.iter().zip(&group.advantages.advantages) {
            adv_abs_sum += adv.abs();
            if rollout.actions.is_empty() {
                continue;
            }
            let action_weight = group_weight / rollout.actions.len() as f64;
            for (action, logp_old) in &rollout.actions {
                let logp_new = policy.logprob(action);
                if !logp_new.is_finite() {
                    return Err(GrpoError::Numerical(format!(
                        "non-finite logprob in group {}",
                        group.question_id
                    )));
                }
                let rho = (logp_new - logp_old).exp();
                let clipped = rho.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
                actions_total += 1;
                // d/dtheta min(rho*A, clipped*A): rho*A's branch contributes
                // A*rho*dlogp; the clipped branch is locally constant.
                let unclipped_active = rho * adv <= clipped * adv;
                let mut coeff = if unclipped_active { adv * rho } else { 0.0 };
                if rho != clipped {
                    actions_clipped += 1;
                }
                // KL(new || old) estimated as rho_inv - 1 + (logp_new -
                // logp_old) with rho_inv = exp(logp_old - logp_new); its
                // gradient is (1 - rho_inv) * dlogp.
                if cfg.kl_coeff > 0.0 {
                    let rho_inv = (logp_old - logp_new).exp();
                    coeff -= cfg.kl_coeff * (1.0 - rho_inv);
                }
                if coeff != 0.0 {
                    policy.add_logprob_grad(action, action_weight * coeff, &mut grad);
                }
            }
        }
    }

    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(GrpoError::Numerical("non-finite gradient".into()));
    }
    let lr = cfg.schedule.lr_at(step_index);
    if grad_norm > 0.0 {
        let step: Vec<f64> = grad.iter().map(|g| lr * g).collect();
        policy.apply_step(&step);
    }

    Ok(UpdateMetrics {
        mean_reward: if reward_n > 0 { reward_sum / reward_n as f64 } else { 0.0 },
        mean_advantage_abs: if reward_n > 0 { adv_abs_sum / reward_n as f64 } else { 0.0 },
        clip_fraction: if actions_total > 0 {
            actions_clipped as f64 / actions_total as f64
        } else {
            0.0
        },
        grad_norm,
        lr,
        degenerate_groups,
    })
}
