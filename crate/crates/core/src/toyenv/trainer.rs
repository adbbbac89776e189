//! Joint adversarial training loop over the arithmetic-chain environment.
//!
//! Each episode: sample tasks, roll out a group per task, slice the traces,
//! build a balanced real-vs-generated slice batch, sample discriminator
//! decision rollouts (verdict head over generated slices, provenance head
//! over the mixed batch), serve verdicts into the reasoner reward, then take
//! one group-standardized policy-gradient step per policy. Update frequency
//! is 1:1, one discriminator step per reasoner step.
//!
//! All randomness flows through fixed per-concern substreams, so a mode that
//! skips a computation still leaves every other stream untouched.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::discriminator::{DiscAction, Head, N_FEATURES, ToyDiscriminatorPolicy, slice_features};
use super::policy::{
    TERSE_TEMPLATES, ToyReasonerPolicy, ToyRollout, VERBOSE_TEMPLATES, rollout, template_text,
};
use super::task::{ToyTask, fold_op, sample_task};
use super::{
    Mode, STREAM_DISC, STREAM_DISC_WARMUP, STREAM_EVAL_DISC, STREAM_EVAL_ROLLOUTS,
    STREAM_EVAL_TASKS, STREAM_REASONER, STREAM_REFERENCE, STREAM_TASKS, ToyError, TrainingConfig,
    substream_rng,
};
use crate::analytics::{DEFAULT_ZERO_TAU, EntropyProfile, SplitSummary, profile, split_summary};
use crate::corpus::{Label, SftExample, balance_labels, mix_batch};
use crate::grpo::{
    DifferentiablePolicy, GrpoError, RolloutGroup, RolloutSample, UpdateMetrics, update_policy,
};
use crate::rewards::{
    DEFAULT_CLAMP_DELTA, RewardBreakdown, alignment_reward, discriminator_reward, exact_match,
    gan_reward, reasoner_reward,
};
use crate::slicer::{Provenance, Slice, Slicer, SlicerConfig};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One episode of the training log. Wall time is kept out of the serialized
/// form so reports from repeated runs compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    /// Fraction of rollouts whose final answer matched; absent when rollouts
    /// carry no answer.
    pub task_accuracy: Option<f64>,
    /// Mean served slice-soundness reward; absent without a discriminator.
    pub mean_r_s: Option<f64>,
    /// Served verdicts vs the exact oracle, over generated slices.
    pub verdict_accuracy: Option<f64>,
    /// Log-form provenance score of the mixed batch.
    pub r_d: Option<f64>,
    pub mean_reasoner_reward: f64,
    /// Per-rollout rewards, task-major then rollout order.
    pub reasoner_rewards: Vec<f64>,
    pub degenerate_groups: usize,
    pub mean_entropy: f64,
    pub reasoner_update: Option<UpdateMetrics>,
    pub disc_update: Option<UpdateMetrics>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainingConfig,
    pub episodes: Vec<EpisodeRow>,
    pub baseline_task_accuracy: f64,
    pub final_task_accuracy: f64,
    /// 1-based episode count at which the trailing-window mean task accuracy
    /// first reached the threshold; None when never reached (censored).
    pub episodes_to_threshold: Option<usize>,
    pub baseline_verdict_accuracy: Option<f64>,
    pub final_verdict_accuracy: Option<f64>,
    /// Entropy split of the last episode's rollouts.
    pub entropy_summary: Option<SplitSummary>,
    /// Set when a numerical failure stopped training early; rows up to the
    /// failure are retained.
    pub aborted: Option<String>,
    #[serde(skip)]
    pub mean_episode_wall_time_s: f64,
}

pub(super) struct TrainState {
    pub(super) cfg: TrainingConfig,
    pub(super) reasoner: ToyReasonerPolicy,
    pub(super) disc: ToyDiscriminatorPolicy,
    rng_tasks: ChaCha8Rng,
    rng_reasoner: ChaCha8Rng,
    rng_disc: ChaCha8Rng,
    rng_reference: ChaCha8Rng,
    slicer: Slicer,
    pub(super) last_profiles: Vec<EntropyProfile>,
}

/// Slice span of one rollout within the episode's flat generated-slice list.
struct Bundle {
    start: usize,
    len: usize,
    final_correct: Option<u8>,
}

impl TrainState {
    pub(super) fn new(cfg: TrainingConfig) -> Result<Self, ToyError> {
        cfg.validate()?;
        let reasoner = ToyReasonerPolicy::init(
            cfg.chain_length,
            cfg.value_vocab,
            cfg.init_correct_logit,
            cfg.init_verbose_logit,
            cfg.temperature,
        );
        let seed = cfg.seed;
        let mut state = Self {
            cfg,
            reasoner,
            disc: ToyDiscriminatorPolicy::default(),
            rng_tasks: substream_rng(seed, STREAM_TASKS),
            rng_reasoner: substream_rng(seed, STREAM_REASONER),
            rng_disc: substream_rng(seed, STREAM_DISC),
            rng_reference: substream_rng(seed, STREAM_REFERENCE),
            slicer: Slicer::new(SlicerConfig::default()).expect("default slicer config is valid"),
            last_profiles: Vec::new(),
        };
        if state.cfg.disc_enabled() && state.cfg.disc_warmup_traces > 0 {
            state.cold_start_verdict_head()?;
        }
        Ok(state)
    }

    /// Supervised cold start of the verdict head: label slices from initial
    /// rollouts with the oracle, balance the two classes, and fit the head by
    /// logistic regression. Joint training then starts from a judge that is
    /// already better than chance, the same way the full-scale pipeline fits
    /// the judge on labelled slices before adversarial training begins.
    ///
    /// Draws only from its own substream, so training streams are identical
    /// with the cold start on or off.
    fn cold_start_verdict_head(&mut self) -> Result<(), ToyError> {
        let mut rng = substream_rng(self.cfg.seed, STREAM_DISC_WARMUP);
        let mut examples = Vec::new();
        for ti in 0..self.cfg.disc_warmup_traces {
            let task = sample_task(&mut rng, self.cfg.chain_length, self.cfg.modulus)
                .expect("validated chain length");
            let r = rollout(
                &self.reasoner,
                &task,
                &mut rng,
                self.cfg.max_slices,
                false,
                &format!("warm-t{ti}"),
            );
            let slices =
                self.slicer.segment(&r.trace.id, &r.trace.think_text, Provenance::Generated);
            debug_assert_eq!(slices.len(), r.steps.len());
            for (slice, step) in slices.iter().zip(&r.steps) {
                examples.push(SftExample {
                    slice_text: slice.text.clone(),
                    label: if step.oracle_correct == 1 { Label::Yes } else { Label::No },
                    analysis: String::new(),
                    rationale: String::new(),
                    source: r.trace.id.clone(),
                });
            }
        }
        let balance_seed = rng.random::<u64>();
        let balanced = balance_labels(&examples, balance_seed).map_err(|e| {
            ToyError::Configuration(format!("verdict cold start needs both labels: {e}"))
        })?;
        let data: Vec<([f64; N_FEATURES], f64)> = balanced
            .iter()
            .map(|ex| {
                let y = if ex.label == Label::Yes { 1.0 } else { 0.0 };
                (slice_features(&ex.slice_text, self.cfg.modulus), y)
            })
            .collect();
        let n = data.len() as f64;
        for _ in 0..self.cfg.disc_warmup_iters {
            let mut step = vec![0.0; N_FEATURES + 2];
            for (f, y) in &data {
                let resid = y - self.disc.prob(f, Head::Verdict);
                for (s, fi) in step.iter_mut().zip(f) {
                    *s += resid * fi / n;
                }
                step[N_FEATURES] += resid / n;
            }
            self.disc.apply_step(&step);
        }
        Ok(())
    }

    /// Renders one locally-correct reference chain for `task` and slices it.
    fn reference_chain(&mut self, task: &ToyTask, trace_id: &str) -> Vec<Slice> {
        let verbose = self.cfg.reference_verbose();
        let mut running = task.start_value;
        let mut lines = Vec::with_capacity(task.ops.len());
        for &(op, operand) in &task.ops {
            let template = if verbose {
                TERSE_TEMPLATES.len() + self.rng_reference.random_range(0..VERBOSE_TEMPLATES.len())
            } else {
                self.rng_reference.random_range(0..TERSE_TEMPLATES.len())
            };
            let next = fold_op(running, op, operand, task.modulus);
            lines.push(format!(
                "{}{} {} {} = {}",
                template_text(template),
                running,
                op.symbol(),
                operand,
                next
            ));
            running = next;
        }
        self.slicer.segment(trace_id, &lines.join("\n\n"), Provenance::Reference)
    }

    /// One full episode. `update_reasoner` is false during the distillation
    /// warm phase; discriminator updates follow the mode.
    pub(super) fn run_episode(
        &mut self,
        episode: usize,
        total_steps: usize,
        update_reasoner: bool,
    ) -> Result<EpisodeRow, GrpoError> {
        let started = Instant::now();
        let cfg = self.cfg.clone();
        let with_answer = cfg.rollout_with_answer();

        let tasks: Vec<ToyTask> = (0..cfg.tasks_per_episode)
            .map(|_| {
                sample_task(&mut self.rng_tasks, cfg.chain_length, cfg.modulus)
                    .expect("validated chain length")
            })
            .collect();

        let mut rollouts: Vec<Vec<ToyRollout>> = Vec::with_capacity(tasks.len());
        for (ti, task) in tasks.iter().enumerate() {
            let group = (0..cfg.group_size)
                .map(|gi| {
                    rollout(
                        &self.reasoner,
                        task,
                        &mut self.rng_reasoner,
                        cfg.max_slices,
                        with_answer,
                        &format!("e{episode}-t{ti}-r{gi}"),
                    )
                })
                .collect();
            rollouts.push(group);
        }

        // Flatten generated slices, remembering each rollout's span.
        let mut gen_slices: Vec<Slice> = Vec::new();
        let mut gen_oracle: Vec<u8> = Vec::new();
        let mut bundles: Vec<Bundle> = Vec::new();
        for group in &rollouts {
            for r in group {
                let slices =
                    self.slicer.segment(&r.trace.id, &r.trace.think_text, Provenance::Generated);
                debug_assert_eq!(slices.len(), r.steps.len());
                bundles.push(Bundle {
                    start: gen_slices.len(),
                    len: slices.len(),
                    final_correct: r.trace.final_correct,
                });
                gen_oracle.extend(r.steps.iter().map(|s| s.oracle_correct));
                gen_slices.extend(slices);
            }
        }

        let mut mean_r_s = None;
        let mut verdict_accuracy = None;
        let mut r_d = None;
        let mut disc_update = None;
        let mut served_bits: Vec<Vec<bool>> = Vec::new();

        if cfg.disc_enabled() {
            let mut ref_slices: Vec<Slice> = Vec::new();
            for (ti, task) in tasks.iter().enumerate() {
                for c in 0..cfg.ref_chains_per_task {
                    let slices = self.reference_chain(task, &format!("e{episode}-t{ti}-ref{c}"));
                    ref_slices.extend(slices);
                }
            }
            let mix_seed = self.rng_reference.random::<u64>();
            let mixed = mix_batch(&gen_slices, &ref_slices, mix_seed)
                .expect("episode always yields slices on both sides");
            // The reference pool is sized so every generated slice survives
            // the mix in its original order; bundle spans stay valid.
            debug_assert_eq!(mixed.generated_slices.len(), gen_slices.len());

            let gen_features: Vec<[f64; 5]> =
                gen_slices.iter().map(|s| slice_features(&s.text, cfg.modulus)).collect();
            let mixed_ref_features: Vec<[f64; 5]> =
                mixed.reference_slices.iter().map(|s| slice_features(&s.text, cfg.modulus)).collect();

            let p_ref: Vec<f64> =
                mixed_ref_features.iter().map(|f| self.disc.prob(f, Head::Provenance)).collect();
            let p_gen: Vec<f64> =
                gen_features.iter().map(|f| self.disc.prob(f, Head::Provenance)).collect();
            r_d = Some(
                gan_reward(&p_ref, &p_gen, DEFAULT_CLAMP_DELTA)
                    .expect("probabilities are clamped into range"),
            );

            // Decision rollouts: verdict bits over generated slices, then
            // provenance claims over the mixed batch (reference side first).
            let alignment_live = with_answer;
            let mut samples: Vec<RolloutSample<DiscAction>> =
                Vec::with_capacity(cfg.disc_group_size);
            for _ in 0..cfg.disc_group_size {
                let mut actions = Vec::with_capacity(gen_features.len() * 2 + p_ref.len());
                let mut verdicts = Vec::with_capacity(gen_features.len());
                for f in &gen_features {
                    let p = self.disc.prob(f, Head::Verdict);
                    let bit = u8::from(self.rng_disc.random::<f64>() < p);
                    verdicts.push(bit == 1);
                    let action = DiscAction { features: *f, bit, head: Head::Verdict };
                    let logp = if bit == 1 { p.ln() } else { (1.0 - p).ln() };
                    actions.push((action, logp));
                }
                let mut ref_claims = Vec::with_capacity(mixed_ref_features.len());
                for f in &mixed_ref_features {
                    let p = self.disc.prob(f, Head::Provenance);
                    let bit = u8::from(self.rng_disc.random::<f64>() < p);
                    ref_claims.push(bit == 1);
                    let action = DiscAction { features: *f, bit, head: Head::Provenance };
                    let logp = if bit == 1 { p.ln() } else { (1.0 - p).ln() };
                    actions.push((action, logp));
                }
                let mut gen_claims = Vec::with_capacity(gen_features.len());
                for f in &gen_features {
                    let p = self.disc.prob(f, Head::Provenance);
                    let bit = u8::from(self.rng_disc.random::<f64>() < p);
                    gen_claims.push(bit == 1);
                    let action = DiscAction { features: *f, bit, head: Head::Provenance };
                    let logp = if bit == 1 { p.ln() } else { (1.0 - p).ln() };
                    actions.push((action, logp));
                }

                // Indicator-form provenance reward mirrors the log-form
                // objective's optimum and keeps group rewards bounded.
                let ref_hit =
                    ref_claims.iter().filter(|&&b| b).count() as f64 / ref_claims.len() as f64;
                let gen_hit =
                    gen_claims.iter().filter(|&&b| !b).count() as f64 / gen_claims.len() as f64;
                let rd_sample = ref_hit + gen_hit;
                let ra_sample = if alignment_live {
                    let mut sum = 0.0;
                    for b in &bundles {
                        let bits = &verdicts[b.start..b.start + b.len];
                        sum += alignment_reward(bits, b.final_correct == Some(1))
                            .expect("bundles are non-empty");
                    }
                    sum / bundles.len() as f64
                } else {
                    0.0
                };
                let reward = discriminator_reward(rd_sample, ra_sample, &cfg.weights);
                samples.push(RolloutSample { reward, actions });
            }

            // Served bits feed the reasoner reward. The feature-logistic head
            // gives an exact probability, so serving takes its thresholded
            // decision; sampling is reserved for the discriminator's own
            // policy-gradient rollouts above.
            let decided_verdicts: Vec<bool> =
                gen_features.iter().map(|f| self.disc.prob(f, Head::Verdict) >= 0.5).collect();
            let served: Vec<bool> = if cfg.serve_from_provenance() {
                gen_features.iter().map(|f| self.disc.prob(f, Head::Provenance) >= 0.5).collect()
            } else {
                decided_verdicts.clone()
            };
            served_bits = bundles
                .iter()
                .map(|b| served[b.start..b.start + b.len].to_vec())
                .collect();
            verdict_accuracy = Some(
                decided_verdicts
                    .iter()
                    .zip(&gen_oracle)
                    .filter(|&(&v, &o)| v == (o == 1))
                    .count() as f64
                    / gen_oracle.len() as f64,
            );

            let group = RolloutGroup::new(format!("e{episode}-disc"), samples, cfg.std_epsilon)
                .expect("disc group size is validated >= 2");
            if cfg.disc_updates() {
                disc_update = Some(update_policy(
                    &mut self.disc,
                    &[group],
                    &cfg.disc_grpo(total_steps),
                    episode,
                )?);
            }
        }

        // Reasoner rewards and groups.
        let mut reasoner_rewards = Vec::with_capacity(tasks.len() * cfg.group_size);
        let mut groups: Vec<RolloutGroup<super::policy::ReasonerAction>> =
            Vec::with_capacity(tasks.len());
        let mut r_s_sum = 0.0;
        let mut bundle_index = 0usize;
        for (ti, group_rollouts) in rollouts.iter().enumerate() {
            let mut samples = Vec::with_capacity(cfg.group_size);
            for r in group_rollouts {
                let r_m = if with_answer {
                    exact_match(&r.trace.answer_text, &r.trace.ground_truth_answer)
                } else {
                    0.0
                };
                let reward = if cfg.disc_enabled() {
                    let bits = &served_bits[bundle_index];
                    let breakdown = RewardBreakdown::compute(r_m, bits, &cfg.weights)
                        .expect("rollouts emit at least one slice");
                    r_s_sum += breakdown.slice_mean;
                    breakdown.reasoner_total
                } else {
                    reasoner_reward(r_m, 0.0, &cfg.weights)
                };
                bundle_index += 1;
                reasoner_rewards.push(reward);
                samples.push(RolloutSample { reward, actions: r.actions.clone() });
            }
            groups.push(
                RolloutGroup::new(format!("e{episode}-t{ti}"), samples, cfg.std_epsilon)
                    .expect("group size is validated >= 2"),
            );
        }
        if cfg.disc_enabled() {
            mean_r_s = Some(r_s_sum / (tasks.len() * cfg.group_size) as f64);
        }

        let degenerate_groups = groups.iter().filter(|g| g.advantages.degenerate).count();
        let reasoner_update = if update_reasoner {
            Some(update_policy(
                &mut self.reasoner,
                &groups,
                &cfg.reasoner_grpo(total_steps),
                episode,
            )?)
        } else {
            None
        };

        let n_rollouts = (tasks.len() * cfg.group_size) as f64;
        let task_accuracy = with_answer.then(|| {
            rollouts
                .iter()
                .flatten()
                .filter(|r| r.trace.final_correct == Some(1))
                .count() as f64
                / n_rollouts
        });
        let all_steps: Vec<&super::policy::StepRecord> =
            rollouts.iter().flatten().flat_map(|r| r.steps.iter()).collect();
        let mean_entropy =
            all_steps.iter().map(|s| s.entropy).sum::<f64>() / all_steps.len() as f64;

        if with_answer {
            self.last_profiles = rollouts
                .iter()
                .flatten()
                .map(|r| {
                    profile(
                        &r.trace.id,
                        r.trace.per_token_entropies.as_deref().unwrap_or_default(),
                        DEFAULT_ZERO_TAU,
                        r.trace.final_correct.unwrap_or(0),
                    )
                    .expect("step entropies are non-empty and non-negative")
                })
                .collect();
        }

        Ok(EpisodeRow {
            episode,
            task_accuracy,
            mean_r_s,
            verdict_accuracy,
            r_d,
            mean_reasoner_reward: reasoner_rewards.iter().sum::<f64>() / n_rollouts,
            reasoner_rewards,
            degenerate_groups,
            mean_entropy,
            reasoner_update,
            disc_update,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
    }
}

/// Task accuracy of `policy` on a fresh, seed-fixed evaluation set of
/// full-length answered rollouts.
pub fn evaluate_task_accuracy(policy: &ToyReasonerPolicy, cfg: &TrainingConfig) -> f64 {
    let mut task_rng = substream_rng(cfg.seed, STREAM_EVAL_TASKS);
    let mut roll_rng = substream_rng(cfg.seed, STREAM_EVAL_ROLLOUTS);
    let mut correct = 0usize;
    let mut total = 0usize;
    for ti in 0..cfg.eval_tasks {
        let task = sample_task(&mut task_rng, cfg.chain_length, cfg.modulus)
            .expect("validated chain length");
        for ri in 0..cfg.eval_rollouts_per_task {
            let r = rollout(policy, &task, &mut roll_rng, None, true, &format!("ev-t{ti}-r{ri}"));
            correct += usize::from(r.trace.final_correct == Some(1));
            total += 1;
        }
    }
    correct as f64 / total as f64
}

/// Verdict-head accuracy against the oracle on held-out steps: fresh chains
/// with each step corrupted independently with probability one half, errors
/// carrying through the running value.
pub fn held_out_verdict_accuracy(disc: &ToyDiscriminatorPolicy, cfg: &TrainingConfig) -> f64 {
    let mut rng = substream_rng(cfg.seed, STREAM_EVAL_DISC);
    let mut hits = 0usize;
    let mut total = 0usize;
    for _ in 0..cfg.eval_tasks {
        let task = sample_task(&mut rng, cfg.chain_length, cfg.modulus)
            .expect("validated chain length");
        let mut running = task.start_value;
        for &(op, operand) in &task.ops {
            let template = rng.random_range(0..TERSE_TEMPLATES.len());
            let correct = fold_op(running, op, operand, task.modulus);
            let corrupt = rng.random::<f64>() < 0.5;
            let emitted = if corrupt {
                (correct + rng.random_range(1..cfg.value_vocab as u32)) % task.modulus
            } else {
                correct
            };
            let line = format!(
                "{}{} {} {} = {}",
                template_text(template),
                running,
                op.symbol(),
                operand,
                emitted
            );
            let sound = disc.prob(&slice_features(&line, cfg.modulus), Head::Verdict) >= 0.5;
            hits += usize::from(sound == !corrupt);
            total += 1;
            running = emitted;
        }
    }
    hits as f64 / total as f64
}

fn threshold_reached(rows: &[EpisodeRow], cfg: &TrainingConfig) -> bool {
    if rows.len() < cfg.threshold_window {
        return false;
    }
    let tail = &rows[rows.len() - cfg.threshold_window..];
    let mut sum = 0.0;
    for row in tail {
        match row.task_accuracy {
            Some(a) => sum += a,
            None => return false,
        }
    }
    sum / cfg.threshold_window as f64 >= cfg.accuracy_threshold
}

/// Runs the configured mode's training loop end to end. Style distillation
/// has its own two-phase driver.
pub fn train_joint(cfg: &TrainingConfig) -> Result<TrainingReport, ToyError> {
    cfg.validate()?;
    if cfg.mode == Mode::Distill {
        return Err(ToyError::Configuration(
            "distill mode trains via train_distill".into(),
        ));
    }
    let mut state = TrainState::new(cfg.clone())?;
    let baseline_task_accuracy = evaluate_task_accuracy(&state.reasoner, cfg);
    let baseline_verdict_accuracy =
        cfg.disc_enabled().then(|| held_out_verdict_accuracy(&state.disc, cfg));

    let mut rows: Vec<EpisodeRow> = Vec::new();
    let mut aborted = None;
    let mut episodes_to_threshold = None;
    for episode in 0..cfg.episodes {
        match state.run_episode(episode, cfg.episodes, true) {
            Ok(row) => rows.push(row),
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        }
        if episodes_to_threshold.is_none() && threshold_reached(&rows, cfg) {
            episodes_to_threshold = Some(rows.len());
            if cfg.stop_at_threshold {
                break;
            }
        }
    }

    let final_task_accuracy = evaluate_task_accuracy(&state.reasoner, cfg);
    let final_verdict_accuracy =
        cfg.disc_enabled().then(|| held_out_verdict_accuracy(&state.disc, cfg));
    let entropy_summary = (!state.last_profiles.is_empty())
        .then(|| split_summary(&state.last_profiles).expect("profiles are non-empty"));
    let mean_episode_wall_time_s = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.wall_time_s).sum::<f64>() / rows.len() as f64
    };
    Ok(TrainingReport {
        config: cfg.clone(),
        episodes: rows,
        baseline_task_accuracy,
        final_task_accuracy,
        episodes_to_threshold,
        baseline_verdict_accuracy,
        final_verdict_accuracy,
        entropy_summary,
        aborted,
        mean_episode_wall_time_s,
    })
}

/// Partial-trace training: rollouts halt after `max_slices` steps, emit no
/// final answer, and earn only the slice-soundness reward.
pub fn train_partial_trace(cfg: &TrainingConfig) -> Result<TrainingReport, ToyError> {
    if cfg.mode != Mode::PartialTrace {
        return Err(ToyError::Configuration("train_partial_trace requires partial_trace mode".into()));
    }
    train_joint(cfg)
}
