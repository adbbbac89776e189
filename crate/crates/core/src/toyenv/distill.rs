//! Reasoning-style distillation: the reference corpus is rendered in a
//! distinct verbose style (style A), slice rewards are served from the
//! provenance head, and the reasoner is pressured to become indistinguishable
//! from the reference style.
//!
//! Phase 1 trains the discriminator alone against the frozen initial
//! reasoner; phase 2 runs the joint loop. A style probe fitted from scratch
//! on fresh data before and after quantifies how separable the two styles
//! remain (AUC 0.5 = indistinguishable).

use serde::{Deserialize, Serialize};

use super::discriminator::slice_features;
use super::policy::{TERSE_TEMPLATES, ToyReasonerPolicy, VERBOSE_TEMPLATES, rollout, template_text};
use super::task::{fold_op, sample_task};
use super::trainer::{EpisodeRow, TrainState};
use super::{
    Mode, STREAM_EVAL_DISC, STREAM_EVAL_ROLLOUTS, STREAM_EVAL_TASKS, ToyError, TrainingConfig,
    substream_rng,
};
use crate::slicer::{Provenance, Slicer, SlicerConfig};

use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub config: TrainingConfig,
    /// Discriminator-only warm-up episodes.
    pub phase1: Vec<EpisodeRow>,
    /// Joint episodes.
    pub phase2: Vec<EpisodeRow>,
    /// Style-probe AUC before any training.
    pub before_auc: f64,
    /// Style-probe AUC after both phases.
    pub after_auc: f64,
    pub aborted: Option<String>,
}

/// Style features only: template family and length, soundness excluded, so
/// the probe measures style separability and nothing else.
fn style_features(text: &str, modulus: u32) -> [f64; 3] {
    let f = slice_features(text, modulus);
    [f[2], f[3], f[4]]
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fits a fresh logistic probe on half the slices of each side and returns
/// the rank AUC (reference scored above generated) on the held-out half.
/// Stateless: repeated calls with an unchanged policy return identical AUC.
pub fn style_probe_auc(policy: &ToyReasonerPolicy, cfg: &TrainingConfig) -> f64 {
    let mut task_rng = substream_rng(cfg.seed, STREAM_EVAL_TASKS);
    let mut roll_rng = substream_rng(cfg.seed, STREAM_EVAL_ROLLOUTS);
    let mut ref_rng = substream_rng(cfg.seed, STREAM_EVAL_DISC);
    let slicer = Slicer::new(SlicerConfig::default()).expect("default slicer config is valid");
    let chains = cfg.eval_tasks.max(2);

    let mut ref_feats: Vec<[f64; 3]> = Vec::new();
    let mut gen_feats: Vec<[f64; 3]> = Vec::new();
    for ci in 0..chains {
        let task = sample_task(&mut task_rng, cfg.chain_length, cfg.modulus)
            .expect("validated chain length");

        let mut running = task.start_value;
        let mut lines = Vec::with_capacity(task.ops.len());
        for &(op, operand) in &task.ops {
            let template =
                TERSE_TEMPLATES.len() + ref_rng.random_range(0..VERBOSE_TEMPLATES.len());
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
        let text = lines.join("\n\n");
        for s in slicer.segment(&format!("probe-ref{ci}"), &text, Provenance::Reference) {
            ref_feats.push(style_features(&s.text, cfg.modulus));
        }

        let r = rollout(policy, &task, &mut roll_rng, None, false, &format!("probe-gen{ci}"));
        for s in slicer.segment(&r.trace.id, &r.trace.think_text, Provenance::Generated) {
            gen_feats.push(style_features(&s.text, cfg.modulus));
        }
    }

    let split = |v: &[[f64; 3]]| -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let mid = v.len() / 2;
        (v[..mid].to_vec(), v[mid..].to_vec())
    };
    let (ref_train, ref_test) = split(&ref_feats);
    let (gen_train, gen_test) = split(&gen_feats);

    // Full-batch logistic regression, reference labeled 1.
    let mut w = [0.0f64; 3];
    let mut b = 0.0f64;
    let n = (ref_train.len() + gen_train.len()) as f64;
    for _ in 0..300 {
        let mut gw = [0.0f64; 3];
        let mut gb = 0.0f64;
        for (feats, y) in
            ref_train.iter().map(|f| (f, 1.0)).chain(gen_train.iter().map(|f| (f, 0.0)))
        {
            let z = w.iter().zip(feats).map(|(wi, fi)| wi * fi).sum::<f64>() + b;
            let resid = sigmoid(z) - y;
            for (g, f) in gw.iter_mut().zip(feats) {
                *g += resid * f / n;
            }
            gb += resid / n;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 1.0 * g;
        }
        b -= 1.0 * gb;
    }

    let score =
        |f: &[f64; 3]| -> f64 { w.iter().zip(f).map(|(wi, fi)| wi * fi).sum::<f64>() + b };
    let mut favorable = 0.0;
    for rf in &ref_test {
        let sr = score(rf);
        for gf in &gen_test {
            let sg = score(gf);
            favorable += if sr > sg {
                1.0
            } else if sr == sg {
                0.5
            } else {
                0.0
            };
        }
    }
    favorable / (ref_test.len() * gen_test.len()) as f64
}

/// Two-phase distillation driver. A numerical failure in either phase stops
/// the run and leaves the rows collected so far in the report.
pub fn train_distill(cfg: &TrainingConfig) -> Result<DistillReport, ToyError> {
    cfg.validate()?;
    if cfg.mode != Mode::Distill {
        return Err(ToyError::Configuration("train_distill requires distill mode".into()));
    }
    let mut state = TrainState::new(cfg.clone())?;
    let before_auc = style_probe_auc(&state.reasoner, cfg);

    let total_steps = cfg.distill_phase1_episodes + cfg.episodes;
    let mut phase1 = Vec::new();
    let mut phase2 = Vec::new();
    let mut aborted = None;
    for episode in 0..cfg.distill_phase1_episodes {
        match state.run_episode(episode, total_steps, false) {
            Ok(row) => phase1.push(row),
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        }
    }
    if aborted.is_none() {
        for episode in 0..cfg.episodes {
            match state.run_episode(cfg.distill_phase1_episodes + episode, total_steps, true) {
                Ok(row) => phase2.push(row),
                Err(e) => {
                    aborted = Some(e.to_string());
                    break;
                }
            }
        }
    }

    let after_auc = style_probe_auc(&state.reasoner, cfg);
    Ok(DistillReport { config: cfg.clone(), phase1, phase2, before_auc, after_auc, aborted })
}
