//! Tabular softmax reasoner over arithmetic chains.
//!
//! Per chain position the policy owns a categorical over the emitted result
//! value (slot 0 is the locally-correct continuation, slot k emits
//! correct + k mod m) for each operator, plus a categorical over eight step
//! templates. Every template opens with a segmentation cue, so a rendered
//! trace slices back into exactly one slice per step.
//!
//! Errors carry: the running value continues from whatever was emitted, so a
//! locally-sound step stays sound even after an earlier mistake.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::task::{ToyTask, fold_op, oracle_step_check};
use crate::corpus::ReasoningTrace;
use crate::grpo::DifferentiablePolicy;

pub const TERSE_TEMPLATES: [&str; 4] = ["Now, ", "Next, ", "So, ", "Therefore, "];
pub const VERBOSE_TEMPLATES: [&str; 4] = [
    "Let me carefully work through the next step of the chain: ",
    "Now, taking stock of the running value so far, we compute ",
    "Therefore, proceeding methodically and double-checking the arithmetic, ",
    "Since the chain continues from the previous result, we evaluate ",
];
pub const N_TEMPLATES: usize = TERSE_TEMPLATES.len() + VERBOSE_TEMPLATES.len();
const N_OPS: usize = 3;

pub fn template_text(index: usize) -> &'static str {
    if index < TERSE_TEMPLATES.len() {
        TERSE_TEMPLATES[index]
    } else {
        VERBOSE_TEMPLATES[index - TERSE_TEMPLATES.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReasonerAction {
    /// Emitted-value choice at `position` under operator `op_index`.
    Value { position: usize, op_index: usize, slot: usize },
    /// Step-template choice at `position`.
    Template { position: usize, template: usize },
}

#[derive(Debug, Clone)]
pub struct ToyReasonerPolicy {
    positions: usize,
    value_vocab: usize,
    temperature: f64,
    /// `positions * 3 * value_vocab`, position-major then op then slot.
    value_logits: Vec<f64>,
    /// `positions * N_TEMPLATES`.
    template_logits: Vec<f64>,
}

fn softmax(logits: &[f64], temperature: f64, out: &mut Vec<f64>) {
    out.clear();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &l in logits {
        let e = ((l - max) / temperature).exp();
        out.push(e);
        sum += e;
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

impl ToyReasonerPolicy {
    /// Warm start: slot 0 at `correct_logit` over a zero background;
    /// verbose templates at `verbose_logit`, terse at zero.
    pub fn init(
        positions: usize,
        value_vocab: usize,
        correct_logit: f64,
        verbose_logit: f64,
        temperature: f64,
    ) -> Self {
        let mut value_logits = vec![0.0; positions * N_OPS * value_vocab];
        for pos in 0..positions {
            for op in 0..N_OPS {
                value_logits[(pos * N_OPS + op) * value_vocab] = correct_logit;
            }
        }
        let mut template_logits = vec![0.0; positions * N_TEMPLATES];
        for pos in 0..positions {
            for t in TERSE_TEMPLATES.len()..N_TEMPLATES {
                template_logits[pos * N_TEMPLATES + t] = verbose_logit;
            }
        }
        Self { positions, value_vocab, temperature, value_logits, template_logits }
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn value_vocab(&self) -> usize {
        self.value_vocab
    }

    fn value_row(&self, position: usize, op_index: usize) -> &[f64] {
        let base = (position * N_OPS + op_index) * self.value_vocab;
        &self.value_logits[base..base + self.value_vocab]
    }

    pub fn value_probs(&self, position: usize, op_index: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.value_vocab);
        softmax(self.value_row(position, op_index), self.temperature, &mut out);
        out
    }

    pub fn template_probs(&self, position: usize) -> Vec<f64> {
        let base = position * N_TEMPLATES;
        let mut out = Vec::with_capacity(N_TEMPLATES);
        softmax(&self.template_logits[base..base + N_TEMPLATES], self.temperature, &mut out);
        out
    }

    /// Shannon entropy (nats) of the value head at (position, op).
    pub fn value_entropy(&self, position: usize, op_index: usize) -> f64 {
        self.value_probs(position, op_index)
            .iter()
            .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
            .sum()
    }
}

impl DifferentiablePolicy for ToyReasonerPolicy {
    type Action = ReasonerAction;

    fn n_params(&self) -> usize {
        self.value_logits.len() + self.template_logits.len()
    }

    fn logprob(&self, action: &ReasonerAction) -> f64 {
        match *action {
            ReasonerAction::Value { position, op_index, slot } => {
                self.value_probs(position, op_index)[slot].ln()
            }
            ReasonerAction::Template { position, template } => {
                self.template_probs(position)[template].ln()
            }
        }
    }

    fn add_logprob_grad(&self, action: &ReasonerAction, scale: f64, grad: &mut [f64]) {
        match *action {
            ReasonerAction::Value { position, op_index, slot } => {
                let base = (position * N_OPS + op_index) * self.value_vocab;
                let probs = self.value_probs(position, op_index);
                for (j, &p) in probs.iter().enumerate() {
                    let indicator = if j == slot { 1.0 } else { 0.0 };
                    grad[base + j] += scale * (indicator - p) / self.temperature;
                }
            }
            ReasonerAction::Template { position, template } => {
                let base = self.value_logits.len() + position * N_TEMPLATES;
                let probs = self.template_probs(position);
                for (j, &p) in probs.iter().enumerate() {
                    let indicator = if j == template { 1.0 } else { 0.0 };
                    grad[base + j] += scale * (indicator - p) / self.temperature;
                }
            }
        }
    }

    fn apply_step(&mut self, step: &[f64]) {
        let nv = self.value_logits.len();
        for (p, s) in self.value_logits.iter_mut().zip(&step[..nv]) {
            *p += s;
        }
        for (p, s) in self.template_logits.iter_mut().zip(&step[nv..]) {
            *p += s;
        }
    }
}

/// One rendered chain step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub position: usize,
    pub op_index: usize,
    pub slot: usize,
    pub template: usize,
    pub line: String,
    /// Value-head entropy at sampling time.
    pub entropy: f64,
    pub oracle_correct: u8,
}

/// A sampled trace plus everything the trainer needs to score and update.
#[derive(Debug, Clone)]
pub struct ToyRollout {
    pub trace: ReasoningTrace,
    pub steps: Vec<StepRecord>,
    /// (action, logprob at sampling time), template before value per step.
    pub actions: Vec<(ReasonerAction, f64)>,
    /// Running value after the last emitted step; None for halted traces.
    pub final_value: Option<u32>,
}

/// Sample a trace. Draw order per step is fixed (template, then value) so
/// ablations that ignore templates still consume identical randomness.
pub fn rollout(
    policy: &ToyReasonerPolicy,
    task: &ToyTask,
    rng: &mut ChaCha8Rng,
    max_slices: Option<usize>,
    with_answer: bool,
    trace_id: &str,
) -> ToyRollout {
    let total = task.ops.len();
    let emit = max_slices.map_or(total, |m| m.min(total));
    let mut running = task.start_value;
    let mut steps = Vec::with_capacity(emit);
    let mut actions = Vec::with_capacity(emit * 2);
    let mut entropies = Vec::with_capacity(emit);
    for position in 0..emit {
        let (op, operand) = task.ops[position];
        let op_index = op as usize;

        let template_probs = policy.template_probs(position);
        let template = sample_categorical(rng, &template_probs);
        actions.push((
            ReasonerAction::Template { position, template },
            template_probs[template].ln(),
        ));

        let value_probs = policy.value_probs(position, op_index);
        let slot = sample_categorical(rng, &value_probs);
        actions.push((ReasonerAction::Value { position, op_index, slot }, value_probs[slot].ln()));

        let correct = fold_op(running, op, operand, task.modulus);
        let emitted = (correct + slot as u32) % task.modulus;
        let line = format!(
            "{}{} {} {} = {}",
            template_text(template),
            running,
            op.symbol(),
            operand,
            emitted
        );
        let oracle_correct = oracle_step_check(&line, task.modulus)
            .expect("rendered steps always contain an equation");
        let entropy = policy.value_entropy(position, op_index);
        entropies.push(entropy);
        steps.push(StepRecord { position, op_index, slot, template, line, entropy, oracle_correct });
        running = emitted;
    }
    let complete = emit == total;
    let final_value = (with_answer && complete).then_some(running);
    let think_text = steps.iter().map(|s| s.line.as_str()).collect::<Vec<_>>().join("\n\n");
    let trace = ReasoningTrace {
        id: trace_id.to_string(),
        question: task.question(),
        ground_truth_answer: task.ground_truth(),
        think_text,
        answer_text: final_value.map(|v| v.to_string()).unwrap_or_default(),
        final_correct: final_value.map(|v| u8::from(v == task.target_answer)),
        per_token_entropies: Some(entropies),
        extra: serde_json::Map::new(),
    };
    ToyRollout { trace, steps, actions, final_value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicer::{Provenance, Slicer, SlicerConfig};
    use crate::toyenv::{STREAM_REASONER, STREAM_TASKS, sample_task, substream_rng};

    fn demo_task() -> ToyTask {
        sample_task(&mut substream_rng(3, STREAM_TASKS), 6, 97).unwrap()
    }

    #[test]
    fn uniform_value_head_is_exactly_uniform() {
        let policy = ToyReasonerPolicy::init(6, 16, 0.0, 0.0, 1.0);
        for p in policy.value_probs(2, 1) {
            assert_eq!(p, 1.0 / 16.0);
        }
        assert!((policy.value_entropy(0, 0) - 16f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn warm_start_puts_the_intended_mass_on_slot_zero() {
        let policy = ToyReasonerPolicy::init(6, 16, (15.0f64 * 0.6 / 0.4).ln(), -4.0, 1.0);
        let probs = policy.value_probs(0, 2);
        assert!((probs[0] - 0.6).abs() < 1e-12);
        let t = policy.template_probs(0);
        let verbose_mass: f64 = t[4..].iter().sum();
        assert!(verbose_mass < 0.05, "verbose mass {verbose_mass}");
        assert!((t[0] - t[3]).abs() < 1e-15);
    }

    #[test]
    fn every_template_opens_with_a_segmentation_cue() {
        let cues = SlicerConfig::default().cue_prefixes;
        for i in 0..N_TEMPLATES {
            let text = template_text(i);
            assert!(
                cues.iter().any(|c| text.starts_with(c.as_str())),
                "template {i:?} lacks a cue head: {text:?}"
            );
        }
    }

    #[test]
    fn rollout_is_seed_deterministic() {
        let policy = ToyReasonerPolicy::init(6, 16, 1.0, -4.0, 1.0);
        let task = demo_task();
        let a = rollout(&policy, &task, &mut substream_rng(9, STREAM_REASONER), None, true, "t");
        let b = rollout(&policy, &task, &mut substream_rng(9, STREAM_REASONER), None, true, "t");
        assert_eq!(a.trace.think_text, b.trace.think_text);
        assert_eq!(a.trace.final_correct, b.trace.final_correct);
        let c = rollout(&policy, &task, &mut substream_rng(10, STREAM_REASONER), None, true, "t");
        assert_ne!(a.actions, c.actions);
    }

    #[test]
    fn slot_zero_matches_the_oracle_on_every_step() {
        let policy = ToyReasonerPolicy::init(6, 16, 0.5, 0.0, 1.0);
        let mut rng = substream_rng(4, STREAM_REASONER);
        let mut task_rng = substream_rng(4, STREAM_TASKS);
        for i in 0..50 {
            let task = sample_task(&mut task_rng, 6, 97).unwrap();
            let r = rollout(&policy, &task, &mut rng, None, true, &format!("t{i}"));
            for step in &r.steps {
                assert_eq!(step.oracle_correct == 1, step.slot == 0, "step {step:?}");
            }
        }
    }

    #[test]
    fn near_greedy_correct_policy_answers_correctly() {
        let policy = ToyReasonerPolicy::init(6, 16, 50.0, -4.0, 1.0);
        let task = demo_task();
        let r = rollout(&policy, &task, &mut substream_rng(1, STREAM_REASONER), None, true, "t");
        assert_eq!(r.trace.final_correct, Some(1));
        assert_eq!(r.trace.answer_text, task.ground_truth());
        assert_eq!(r.final_value, Some(task.target_answer));
    }

    #[test]
    fn errors_carry_through_the_running_value() {
        // Force slot 1 everywhere: each step emits correct+1, and the next
        // step starts from the emitted value.
        let mut policy = ToyReasonerPolicy::init(2, 16, 0.0, -4.0, 1.0);
        let bump = 500.0;
        let step: Vec<f64> = (0..policy.n_params())
            .map(|i| {
                let in_values = i < 2 * 3 * 16;
                if in_values && i % 16 == 1 { bump } else { 0.0 }
            })
            .collect();
        policy.apply_step(&step);
        let task = ToyTask {
            start_value: 10,
            ops: vec![(super::super::task::Op::Add, 2), (super::super::task::Op::Add, 3)],
            target_answer: 15,
            modulus: 97,
        };
        let r = rollout(&policy, &task, &mut substream_rng(0, STREAM_REASONER), None, true, "t");
        assert_eq!(r.steps[0].line.contains("10 + 2 = 13"), true);
        assert_eq!(r.steps[1].line.contains("13 + 3 = 17"), true);
        assert_eq!(r.trace.answer_text, "17");
        assert_eq!(r.trace.final_correct, Some(0));
    }

    #[test]
    fn partial_rollout_halts_without_an_answer() {
        let policy = ToyReasonerPolicy::init(6, 16, 1.0, -4.0, 1.0);
        let task = demo_task();
        let r =
            rollout(&policy, &task, &mut substream_rng(2, STREAM_REASONER), Some(3), false, "t");
        assert_eq!(r.steps.len(), 3);
        assert_eq!(r.actions.len(), 6);
        assert_eq!(r.trace.answer_text, "");
        assert_eq!(r.trace.final_correct, None);
        assert_eq!(r.final_value, None);
        assert_eq!(r.trace.think_text.matches("\n\n").count(), 2);
    }

    #[test]
    fn rendered_traces_slice_back_one_slice_per_step() {
        let slicer = Slicer::new(SlicerConfig::default()).unwrap();
        let policy = ToyReasonerPolicy::init(6, 16, 1.0, 0.5, 1.0);
        let mut rng = substream_rng(6, STREAM_REASONER);
        let mut task_rng = substream_rng(6, STREAM_TASKS);
        for i in 0..20 {
            let task = sample_task(&mut task_rng, 6, 97).unwrap();
            let r = rollout(&policy, &task, &mut rng, None, true, &format!("t{i}"));
            let slices = slicer.segment(&r.trace.id, &r.trace.think_text, Provenance::Generated);
            assert_eq!(slices.len(), r.steps.len());
            for (slice, step) in slices.iter().zip(&r.steps) {
                assert_eq!(slice.text.trim_end_matches('\n'), step.line);
            }
        }
    }

    #[test]
    fn per_token_entropies_cover_each_step() {
        let policy = ToyReasonerPolicy::init(6, 16, 0.0, -4.0, 1.0);
        let task = demo_task();
        let r = rollout(&policy, &task, &mut substream_rng(5, STREAM_REASONER), None, true, "t");
        let ent = r.trace.per_token_entropies.as_ref().unwrap();
        assert_eq!(ent.len(), 6);
        for &e in ent {
            assert!((e - 16f64.ln()).abs() <= 1e-12);
        }
    }

    #[test]
    fn logprob_gradient_matches_finite_differences() {
        let policy = ToyReasonerPolicy::init(3, 8, 0.7, -0.3, 1.3);
        let actions = [
            ReasonerAction::Value { position: 1, op_index: 2, slot: 3 },
            ReasonerAction::Template { position: 2, template: 5 },
        ];
        for action in actions {
            let mut grad = vec![0.0; policy.n_params()];
            policy.add_logprob_grad(&action, 1.0, &mut grad);
            let h = 1e-6;
            for i in 0..policy.n_params() {
                let mut plus = policy.clone();
                let mut step = vec![0.0; policy.n_params()];
                step[i] = h;
                plus.apply_step(&step);
                let mut minus = policy.clone();
                step[i] = -h;
                minus.apply_step(&step);
                let fd = (plus.logprob(&action) - minus.logprob(&action)) / (2.0 * h);
                assert!(
                    (fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {i}: fd {fd} vs analytic {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn apply_step_shifts_probability_toward_raised_logits() {
        let mut policy = ToyReasonerPolicy::init(1, 4, 0.0, 0.0, 1.0);
        let before = policy.value_probs(0, 0)[2];
        let mut step = vec![0.0; policy.n_params()];
        step[2] = 1.0;
        policy.apply_step(&step);
        assert!(policy.value_probs(0, 0)[2] > before);
    }
}
