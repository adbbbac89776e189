//! Subcommand implementations. Each loads its inputs up front, resolves a
//! config struct that is hashed into the manifest, and streams records to the
//! sink. Human-facing notes go to stderr so stdout stays a clean data stream.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use gar_core::analytics::{self, EntropyProfile, SplitSummary, Stats};
use gar_core::corpus::{self, Label, ReasoningTrace, SftExample};
use gar_core::judge::{
    JudgeConfig, JudgeError, Judgment, build_soundness_prompt, evaluate_response,
    truncate_response,
};
use gar_core::rewards::{RewardBreakdown, RewardWeights, exact_match};
use gar_core::slicer::{Slice, Slicer, SlicerConfig};
use gar_core::toyenv::{
    DistillReport, EpisodeRow, Mode, ToyError, TrainingConfig, TrainingReport, train_distill,
    train_joint, train_partial_trace,
};
use gar_gateway::{Client, GatewayConfig, GenerationRequest, Message};

use crate::manifest::{Sink, ensure_distinct, load_records, manifest_line};
use crate::{
    CliError, EntropyArgs, JudgeArgs, MixArgs, RewardArgs, SftBuildArgs, SliceArgs, TrainToyArgs,
};

fn slice_ref(trace_id: &str, index: usize) -> String {
    format!("{trace_id}#{index}")
}

/// Splits "trace#index" back into its parts. The separator binds rightmost
/// so trace ids may themselves contain '#'.
fn parse_slice_ref(r: &str) -> Result<(&str, usize), CliError> {
    let bad = || CliError::Runtime(format!("malformed slice_ref {r:?}: want <trace_id>#<index>"));
    let (trace_id, idx) = r.rsplit_once('#').ok_or_else(bad)?;
    let index = idx.parse::<usize>().map_err(|_| bad())?;
    Ok((trace_id, index))
}

pub(crate) fn slice(a: &SliceArgs) -> Result<(), CliError> {
    let cfg = SlicerConfig { max_tokens: a.max_tokens, ..SlicerConfig::default() };
    let slicer = Slicer::new(cfg.clone()).map_err(|e| CliError::Validation(e.to_string()))?;
    let provenance = a.provenance.into();
    let traces: Vec<ReasoningTrace> = load_records(&a.input)?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        slicer: &'a SlicerConfig,
        provenance: gar_core::slicer::Provenance,
    }
    let mut sink = Sink::open(a.output.as_deref(), &[&a.input])?;
    sink.line(&manifest_line("slice", &Resolved { slicer: &cfg, provenance }, None))?;
    for trace in &traces {
        for s in slicer.segment(&trace.id, &trace.think_text, provenance) {
            sink.record(&s)?;
        }
    }
    sink.finish()
}

pub(crate) fn judge(a: &JudgeArgs) -> Result<(), CliError> {
    let jcfg = JudgeConfig { max_new_tokens: a.max_new_tokens, ..JudgeConfig::default() };
    jcfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let endpoint = a
        .endpoint
        .clone()
        .or_else(|| std::env::var("GAR_ENDPOINT").ok())
        .ok_or_else(|| CliError::Validation("no endpoint: pass --endpoint or set GAR_ENDPOINT".into()))?;
    let model = a
        .model
        .clone()
        .or_else(|| std::env::var("GAR_MODEL").ok())
        .ok_or_else(|| CliError::Validation("no model: pass --model or set GAR_MODEL".into()))?;

    let slices: Vec<Slice> = load_records(&a.input)?;
    let mut requests = Vec::with_capacity(slices.len());
    for s in &slices {
        let prompt = build_soundness_prompt(s, None, &jcfg)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", slice_ref(&s.trace_id, s.index))))?;
        requests.push(GenerationRequest::new(
            &model,
            vec![Message::system(prompt.system), Message::user(prompt.user)],
            a.max_new_tokens as u32,
        ));
    }

    let mut gcfg = GatewayConfig::new(endpoint);
    gcfg.model = Some(model.clone());
    gcfg.api_key = std::env::var("GAR_API_KEY").ok();
    gcfg.timeout = Duration::from_secs(a.timeout_secs);
    gcfg.max_in_flight = a.max_in_flight;
    gcfg.max_attempts = a.max_attempts;
    let client = Client::new(gcfg);
    let results = client.generate_batch(&requests);

    #[derive(Serialize)]
    struct Resolved<'a> {
        judge: &'a JudgeConfig,
        model: &'a str,
        max_in_flight: usize,
        max_attempts: u32,
        timeout_secs: u64,
    }
    let mut sink = Sink::open(a.output.as_deref(), &[&a.input])?;
    sink.line(&manifest_line(
        "judge",
        &Resolved {
            judge: &jcfg,
            model: &model,
            max_in_flight: a.max_in_flight,
            max_attempts: a.max_attempts,
            timeout_secs: a.timeout_secs,
        },
        None,
    ))?;
    for (s, result) in slices.iter().zip(results) {
        let sref = slice_ref(&s.trace_id, s.index);
        let generation =
            result.map_err(|e| CliError::Runtime(format!("{sref}: endpoint failure: {e}")))?;
        let judgment = match evaluate_response(&sref, &generation.text, &jcfg) {
            Ok(j) => j,
            // A response with no verdict marker is still worth keeping; the
            // record carries the raw text and a null verdict.
            Err(JudgeError::MissingVerdict) => {
                let (text, truncated) = truncate_response(&generation.text, &jcfg);
                Judgment {
                    slice_ref: sref,
                    verdict: None,
                    analysis: String::new(),
                    rationale: String::new(),
                    truncated,
                    raw_text: text,
                }
            }
            Err(e) => return Err(CliError::Runtime(format!("{sref}: {e}"))),
        };
        sink.record(&judgment)?;
    }
    sink.finish()
}

#[derive(Serialize)]
struct RewardRow<'a> {
    trace_id: &'a str,
    #[serde(flatten)]
    breakdown: RewardBreakdown,
}

pub(crate) fn reward(a: &RewardArgs) -> Result<(), CliError> {
    let weights = RewardWeights {
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        lambda3: a.lambda3,
        lambda4: a.lambda4,
    };
    weights.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let traces: Vec<ReasoningTrace> = load_records(&a.traces)?;
    let judgments: Vec<Judgment> = load_records(&a.judgments)?;

    // Unparseable responses (null verdicts) count as unsound.
    let mut by_trace: HashMap<&str, Vec<(usize, bool)>> = HashMap::new();
    for j in &judgments {
        let (trace_id, index) = parse_slice_ref(&j.slice_ref)?;
        by_trace.entry(trace_id).or_default().push((index, j.verdict == Some(1)));
    }
    let known: std::collections::HashSet<&str> = traces.iter().map(|t| t.id.as_str()).collect();
    if let Some(orphan) = by_trace.keys().find(|id| !known.contains(*id)) {
        return Err(CliError::Runtime(format!(
            "judgments reference trace {orphan:?} which is not in {}",
            a.traces.display()
        )));
    }

    let mut sink = Sink::open(a.output.as_deref(), &[&a.traces, &a.judgments])?;
    sink.line(&manifest_line("reward", &weights, None))?;
    for trace in &traces {
        // Traces with no judged slices have no R^s and are skipped.
        let Some(mut items) = by_trace.remove(trace.id.as_str()) else { continue };
        items.sort_by_key(|(index, _)| *index);
        let verdicts: Vec<bool> = items.iter().map(|(_, v)| *v).collect();
        let exact = exact_match(&trace.answer_text, &trace.ground_truth_answer);
        let breakdown = RewardBreakdown::compute(exact, &verdicts, &weights)
            .map_err(|e| CliError::Runtime(format!("trace {}: {e}", trace.id)))?;
        sink.record(&RewardRow { trace_id: &trace.id, breakdown })?;
    }
    sink.finish()
}

pub(crate) fn sft_build(a: &SftBuildArgs) -> Result<(), CliError> {
    let slices: Vec<Slice> = load_records(&a.slices)?;
    let judgments: Vec<Judgment> = load_records(&a.judgments)?;
    let by_ref: HashMap<String, &Slice> =
        slices.iter().map(|s| (slice_ref(&s.trace_id, s.index), s)).collect();

    let mut examples = Vec::new();
    for j in &judgments {
        // Verdict-free judgments carry no label.
        let Some(v) = j.verdict else { continue };
        let s = by_ref.get(&j.slice_ref).ok_or_else(|| {
            CliError::Runtime(format!(
                "judgment references slice {:?} which is not in {}",
                j.slice_ref,
                a.slices.display()
            ))
        })?;
        examples.push(SftExample {
            slice_text: s.text.clone(),
            label: if v == 1 { Label::Yes } else { Label::No },
            analysis: j.analysis.clone(),
            rationale: j.rationale.clone(),
            source: j.slice_ref.clone(),
        });
    }
    let balanced = corpus::balance_labels(&examples, a.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    #[derive(Serialize)]
    struct Resolved {
        seed: u64,
    }
    let mut sink = Sink::open(a.output.as_deref(), &[&a.slices, &a.judgments])?;
    sink.line(&manifest_line("sft-build", &Resolved { seed: a.seed }, Some(a.seed)))?;
    for ex in &balanced {
        sink.record(ex)?;
    }
    sink.finish()
}

pub(crate) fn mix(a: &MixArgs) -> Result<(), CliError> {
    let generated: Vec<Slice> = load_records(&a.generated)?;
    let reference: Vec<Slice> = load_records(&a.reference)?;
    let batch = corpus::mix_batch(&generated, &reference, a.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    #[derive(Serialize)]
    struct Resolved {
        seed: u64,
    }
    let mut sink = Sink::open(a.output.as_deref(), &[&a.generated, &a.reference])?;
    sink.line(&manifest_line("mix", &Resolved { seed: a.seed }, Some(a.seed)))?;
    sink.record(&batch)?;
    sink.finish()
}

fn toy_error(e: ToyError) -> CliError {
    match e {
        ToyError::Configuration(msg) => CliError::Validation(msg),
        ToyError::Parse(msg) => CliError::Runtime(msg),
    }
}

pub(crate) fn train_toy(a: &TrainToyArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
            serde_json::from_str::<TrainingConfig>(&text)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?
        }
        None => TrainingConfig::for_mode(
            a.mode.map(Mode::from).unwrap_or(Mode::Full),
            a.seed.unwrap_or(0),
        ),
    };
    if let Some(mode) = a.mode {
        cfg.mode = mode.into();
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(episodes) = a.episodes {
        cfg.episodes = episodes;
    }
    if let Some(l) = a.lambda1 {
        cfg.weights.lambda1 = l;
    }
    if let Some(l) = a.lambda2 {
        cfg.weights.lambda2 = l;
    }
    if let Some(l) = a.lambda3 {
        cfg.weights.lambda3 = l;
    }
    if let Some(l) = a.lambda4 {
        cfg.weights.lambda4 = l;
    }
    cfg.validate().map_err(toy_error)?;

    let inputs: Vec<&Path> = a.config.iter().map(|p| p.as_path()).collect();
    if let Some(timing) = &a.timing_out {
        ensure_distinct(timing, &inputs)?;
        if let Some(out) = &a.output {
            ensure_distinct(timing, &[out.as_path()])?;
        }
    }
    let mut sink = Sink::open(a.output.as_deref(), &inputs)?;
    sink.line(&manifest_line("train-toy", &cfg, Some(cfg.seed)))?;

    match cfg.mode {
        Mode::Distill => {
            let report = train_distill(&cfg).map_err(toy_error)?;
            sink.record(&report)?;
            sink.finish()?;
            write_timings(a.timing_out.as_deref(), &cfg, report.phase1.iter().chain(&report.phase2))?;
            report_distill(&report);
        }
        mode => {
            let report = if mode == Mode::PartialTrace {
                train_partial_trace(&cfg).map_err(toy_error)?
            } else {
                train_joint(&cfg).map_err(toy_error)?
            };
            sink.record(&report)?;
            sink.finish()?;
            write_timings(a.timing_out.as_deref(), &cfg, report.episodes.iter())?;
            report_joint(&report);
        }
    }
    Ok(())
}

/// Wall times never enter the report, so byte-identical reruns hold; the
/// sidecar is where they go instead.
fn write_timings<'a>(
    path: Option<&Path>,
    cfg: &TrainingConfig,
    rows: impl Iterator<Item = &'a EpisodeRow>,
) -> Result<(), CliError> {
    let Some(path) = path else { return Ok(()) };
    let wall_times: Vec<f64> = rows.map(|r| r.wall_time_s).collect();
    let mean = wall_times.iter().sum::<f64>() / wall_times.len().max(1) as f64;

    #[derive(Serialize)]
    struct Timings {
        episodes: usize,
        mean_episode_wall_time_s: f64,
        episode_wall_times_s: Vec<f64>,
    }
    let mut sink = Sink::open(Some(path), &[])?;
    sink.line(&manifest_line("train-toy", cfg, Some(cfg.seed)))?;
    sink.record(&Timings {
        episodes: wall_times.len(),
        mean_episode_wall_time_s: mean,
        episode_wall_times_s: wall_times,
    })?;
    sink.finish()
}

fn report_joint(report: &TrainingReport) {
    let threshold = match report.episodes_to_threshold {
        Some(e) => format!("threshold at episode {e}"),
        None => "threshold not reached".to_string(),
    };
    eprintln!(
        "task accuracy {:.3} -> {:.3} over {} episodes; {}",
        report.baseline_task_accuracy,
        report.final_task_accuracy,
        report.episodes.len(),
        threshold,
    );
    if let (Some(b), Some(f)) = (report.baseline_verdict_accuracy, report.final_verdict_accuracy) {
        eprintln!("verdict accuracy {b:.3} -> {f:.3}");
    }
    if let Some(reason) = &report.aborted {
        eprintln!("aborted early: {reason}");
    }
}

fn report_distill(report: &DistillReport) {
    eprintln!(
        "style-probe AUC {:.3} -> {:.3} ({} + {} episodes)",
        report.before_auc,
        report.after_auc,
        report.phase1.len(),
        report.phase2.len(),
    );
    if let Some(reason) = &report.aborted {
        eprintln!("aborted early: {reason}");
    }
}

pub(crate) fn entropy(a: &EntropyArgs) -> Result<(), CliError> {
    if a.bins == 0 {
        return Err(CliError::Validation("bins must be >= 1".into()));
    }
    if !a.tau.is_finite() || a.tau < 0.0 {
        return Err(CliError::Validation("tau must be finite and >= 0".into()));
    }
    let traces: Vec<ReasoningTrace> = load_records(&a.input)?;
    let mut profiles = Vec::new();
    for t in &traces {
        // Only traces that recorded entropies and a correctness flag profile.
        let (Some(entropies), Some(correct)) = (&t.per_token_entropies, t.final_correct) else {
            continue;
        };
        if entropies.is_empty() {
            continue;
        }
        let p = analytics::profile(&t.id, entropies, a.tau, correct)
            .map_err(|e| CliError::Runtime(format!("trace {}: {e}", t.id)))?;
        profiles.push(p);
    }
    if profiles.is_empty() {
        return Err(CliError::Runtime(
            "no trace carries per_token_entropies and final_correct".into(),
        ));
    }
    let summary =
        analytics::split_summary(&profiles).map_err(|e| CliError::Runtime(e.to_string()))?;

    #[derive(Serialize)]
    struct Resolved {
        tau: f64,
        bins: usize,
    }
    #[derive(Serialize)]
    struct SummaryLine<'a> {
        split_summary: &'a SplitSummary,
    }
    let mut sink = Sink::open(a.output.as_deref(), &[&a.input])?;
    sink.line(&manifest_line("entropy", &Resolved { tau: a.tau, bins: a.bins }, None))?;
    for p in &profiles {
        sink.record(p)?;
    }
    sink.record(&SummaryLine { split_summary: &summary })?;
    sink.finish()?;

    eprint!("{}", render_table(&profiles, &summary, a.bins));
    Ok(())
}

/// Histogram of mean entropies plus the correct-vs-wrong split, plain text.
fn render_table(profiles: &[EntropyProfile], summary: &SplitSummary, bins: usize) -> String {
    let mut out = String::new();
    let values: Vec<f64> = profiles.iter().map(|p| p.mean_entropy).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.push_str(&format!("mean entropy over {} traces (nats)\n", values.len()));
    if hi > lo {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in &values {
            // The maximum lands in the last bin.
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let peak = counts.iter().copied().max().unwrap_or(1).max(1);
        for (i, count) in counts.iter().enumerate() {
            let left = lo + width * i as f64;
            let right = lo + width * (i + 1) as f64;
            let bar = "#".repeat((count * 40).div_ceil(peak).min(40) * usize::from(*count > 0));
            out.push_str(&format!("{left:>9.4} .. {right:<9.4} {count:>5}  {bar}\n"));
        }
    } else {
        out.push_str(&format!("all at {lo:.4}\n"));
    }
    out.push_str(&format!("correct: {}\n", stats_line(&summary.correct)));
    out.push_str(&format!("wrong:   {}\n", stats_line(&summary.wrong)));
    out
}

fn stats_line(stats: &Stats) -> String {
    fn fmt(v: Option<f64>) -> String {
        v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
    }
    format!(
        "n={} mean={} p25={} p50={} p75={}",
        stats.n,
        fmt(stats.mean),
        fmt(stats.p25),
        fmt(stats.p50),
        fmt(stats.p75),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_refs_round_trip() {
        let r = slice_ref("trace-7", 3);
        assert_eq!(r, "trace-7#3");
        assert_eq!(parse_slice_ref(&r).unwrap(), ("trace-7", 3));
        // Rightmost separator wins, so ids may contain '#'.
        assert_eq!(parse_slice_ref("a#b#2").unwrap(), ("a#b", 2));
        assert!(parse_slice_ref("no-separator").is_err());
        assert!(parse_slice_ref("x#notanumber").is_err());
    }

    #[test]
    fn histogram_renders_counts_and_split() {
        let profiles: Vec<EntropyProfile> = [(0.1, 1), (0.2, 1), (0.9, 0)]
            .iter()
            .enumerate()
            .map(|(i, (h, c))| EntropyProfile {
                trace_id: format!("t{i}"),
                mean_entropy: *h,
                filtered_mean_entropy: Some(*h),
                zero_fraction: 0.0,
                correct: *c,
                approximate: false,
            })
            .collect();
        let summary = analytics::split_summary(&profiles).unwrap();
        let table = render_table(&profiles, &summary, 4);
        assert!(table.contains("mean entropy over 3 traces"));
        assert!(table.contains('#'));
        assert!(table.contains("correct: n=2"));
        assert!(table.contains("wrong:   n=1"));
    }

    #[test]
    fn degenerate_histogram_has_no_bars() {
        let profiles = vec![EntropyProfile {
            trace_id: "t".into(),
            mean_entropy: 0.5,
            filtered_mean_entropy: Some(0.5),
            zero_fraction: 0.0,
            correct: 1,
            approximate: false,
        }];
        let summary = analytics::split_summary(&profiles).unwrap();
        let table = render_table(&profiles, &summary, 4);
        assert!(table.contains("all at 0.5000"));
        assert!(table.contains("wrong:   n=0 mean=- p25=- p50=- p75=-"));
    }
}
