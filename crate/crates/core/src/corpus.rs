//! Corpus persistence and dataset construction: JSONL round-trips for
//! traces/slices/judgments, SFT label balancing, and balanced
//! reference/generated batch mixing.
//!
//! Loaders skip manifest records (single-key `{"manifest": ...}` lines
//! written by the CLI) and blank lines; everything else must parse.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slicer::{Provenance, Slice};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("imbalance error: {0}")]
    Imbalance(String),
    #[error("empty batch: no slices on either side")]
    EmptyBatch,
}

/// One reasoner output: question, think text, answer, and optional
/// diagnostics. Unknown JSON fields survive a round-trip untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub id: String,
    pub question: String,
    pub ground_truth_answer: String,
    pub think_text: String,
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_correct: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_token_entropies: Option<Vec<f64>>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
}

/// One labeled slice for discriminator SFT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub slice_text: String,
    pub label: Label,
    pub analysis: String,
    pub rationale: String,
    pub source: String,
}

/// Equal-sized reference and generated slice sets for one discriminator
/// provenance batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceBatch {
    pub reference_slices: Vec<Slice>,
    pub generated_slices: Vec<Slice>,
}

impl ProvenanceBatch {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.reference_slices.len() != self.generated_slices.len() {
            return Err(CorpusError::Imbalance(format!(
                "{} reference vs {} generated slices",
                self.reference_slices.len(),
                self.generated_slices.len()
            )));
        }
        Ok(())
    }
}

/// Writes records as JSONL, one per line.
pub fn store<T: Serialize>(records: &[T], path: &Path) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| CorpusError::Parse { line: 0, message: e.to_string() })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn is_manifest(value: &serde_json::Value) -> bool {
    value.as_object().is_some_and(|o| o.len() == 1 && o.contains_key("manifest"))
}

/// Reads a JSONL file, skipping blank and manifest lines. Line numbers in
/// errors are 1-based.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        if is_manifest(&value) {
            continue;
        }
        let record = serde_json::from_value(value)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_traces(path: &Path) -> Result<Vec<ReasoningTrace>, CorpusError> {
    load(path)
}

/// Downsamples the majority label to the minority count (seeded, without
/// replacement) and shuffles the result. Both labels must be present.
pub fn balance_labels(examples: &[SftExample], rng_seed: u64) -> Result<Vec<SftExample>, CorpusError> {
    let (yes, no): (Vec<&SftExample>, Vec<&SftExample>) =
        examples.iter().partition(|e| e.label == Label::Yes);
    if yes.is_empty() || no.is_empty() {
        return Err(CorpusError::Imbalance(format!(
            "need both labels: {} yes, {} no",
            yes.len(),
            no.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let k = yes.len().min(no.len());
    let mut take = |side: Vec<&SftExample>| -> Vec<SftExample> {
        if side.len() == k {
            return side.into_iter().cloned().collect();
        }
        rand::seq::index::sample(&mut rng, side.len(), k)
            .into_iter()
            .map(|i| side[i].clone())
            .collect()
    };
    let mut balanced = take(yes);
    balanced.extend(take(no));
    balanced.shuffle(&mut rng);
    Ok(balanced)
}

/// Draws min(|generated|, |ref_pool|) slices from each side (seeded, without
/// replacement) so the batch is exactly 1:1.
pub fn mix_batch(
    generated: &[Slice],
    ref_pool: &[Slice],
    rng_seed: u64,
) -> Result<ProvenanceBatch, CorpusError> {
    if generated.is_empty() && ref_pool.is_empty() {
        return Err(CorpusError::EmptyBatch);
    }
    let k = generated.len().min(ref_pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut draw = |side: &[Slice], provenance: Provenance| -> Vec<Slice> {
        let picked = if side.len() == k {
            side.to_vec()
        } else {
            rand::seq::index::sample(&mut rng, side.len(), k)
                .into_iter()
                .map(|i| side[i].clone())
                .collect()
        };
        picked
            .into_iter()
            .map(|mut s| {
                s.provenance = provenance;
                s
            })
            .collect()
    };
    let generated = draw(generated, Provenance::Generated);
    let reference = draw(ref_pool, Provenance::Reference);
    Ok(ProvenanceBatch { reference_slices: reference, generated_slices: generated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(id: &str) -> ReasoningTrace {
        ReasoningTrace {
            id: id.into(),
            question: format!("q-{id}"),
            ground_truth_answer: "42".into(),
            think_text: "step one\n\nstep two".into(),
            answer_text: "42".into(),
            final_correct: Some(1),
            per_token_entropies: Some(vec![0.0, 0.5]),
            extra: serde_json::Map::new(),
        }
    }

    fn sft(label: Label, n: usize) -> Vec<SftExample> {
        (0..n)
            .map(|i| SftExample {
                slice_text: format!("s{i}"),
                label,
                analysis: "a".into(),
                rationale: "r".into(),
                source: "test".into(),
            })
            .collect()
    }

    fn slice(id: &str, index: usize, provenance: Provenance) -> Slice {
        Slice {
            trace_id: id.into(),
            index,
            text: format!("text {id} {index}"),
            token_count: 3,
            start_char: 0,
            end_char: 1,
            provenance,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let traces: Vec<ReasoningTrace> = (0..20).map(|i| trace(&format!("t{i}"))).collect();
        store(&traces, &path).unwrap();
        let loaded: Vec<ReasoningTrace> = load(&path).unwrap();
        assert_eq!(loaded, traces);
    }

    #[test]
    fn unknown_fields_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traces.jsonl");
        let mut t = trace("t0");
        t.extra.insert("annotator".into(), serde_json::json!({"name": "ext", "version": 3}));
        store(&[t.clone()], &path).unwrap();
        let loaded: Vec<ReasoningTrace> = load(&path).unwrap();
        assert_eq!(loaded[0], t);
        assert_eq!(loaded[0].extra["annotator"]["version"], 3);
    }

    #[test]
    fn corrupt_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut f = File::create(&path).unwrap();
        for i in 0..10 {
            if i == 6 {
                writeln!(f, "{{not json").unwrap();
            } else {
                writeln!(f, "{}", serde_json::to_string(&trace(&format!("t{i}"))).unwrap())
                    .unwrap();
            }
        }
        drop(f);
        match load::<ReasoningTrace>(&path).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 7),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn wrong_shape_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\": 7}\n").unwrap();
        match load::<ReasoningTrace>(&path).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_file_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load::<ReasoningTrace>(&path).unwrap().is_empty());
    }

    #[test]
    fn manifest_and_blank_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        let body = format!(
            "{}\n\n{}\n",
            r#"{"manifest":{"version":"0.1.0","seed":7}}"#,
            serde_json::to_string(&trace("t0")).unwrap()
        );
        std::fs::write(&path, body).unwrap();
        let loaded: Vec<ReasoningTrace> = load(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].id, "t0");
    }

    #[test]
    fn balance_downsamples_majority() {
        let mut examples = sft(Label::Yes, 30);
        examples.extend(sft(Label::No, 10));
        let balanced = balance_labels(&examples, 7).unwrap();
        assert_eq!(balanced.len(), 20);
        assert_eq!(balanced.iter().filter(|e| e.label == Label::Yes).count(), 10);
        assert_eq!(balanced.iter().filter(|e| e.label == Label::No).count(), 10);
        for e in &balanced {
            assert!(examples.contains(e));
        }
    }

    #[test]
    fn balance_keeps_already_balanced_sets() {
        let mut examples = sft(Label::Yes, 5);
        examples.extend(sft(Label::No, 5));
        let balanced = balance_labels(&examples, 7).unwrap();
        assert_eq!(balanced.len(), 10);
    }

    #[test]
    fn balance_requires_both_labels() {
        let examples = sft(Label::Yes, 5);
        assert!(matches!(
            balance_labels(&examples, 7).unwrap_err(),
            CorpusError::Imbalance(_)
        ));
        assert!(matches!(balance_labels(&[], 7).unwrap_err(), CorpusError::Imbalance(_)));
    }

    #[test]
    fn balance_is_seed_deterministic() {
        let mut examples = sft(Label::Yes, 25);
        examples.extend(sft(Label::No, 9));
        assert_eq!(balance_labels(&examples, 11).unwrap(), balance_labels(&examples, 11).unwrap());
        assert_ne!(balance_labels(&examples, 11).unwrap(), balance_labels(&examples, 12).unwrap());
    }

    #[test]
    fn mix_downsamples_reference_pool() {
        let generated: Vec<Slice> = (0..8).map(|i| slice("g", i, Provenance::Generated)).collect();
        let ref_pool: Vec<Slice> = (0..20).map(|i| slice("r", i, Provenance::Reference)).collect();
        let batch = mix_batch(&generated, &ref_pool, 3).unwrap();
        assert_eq!(batch.generated_slices.len(), 8);
        assert_eq!(batch.reference_slices.len(), 8);
        batch.validate().unwrap();
    }

    #[test]
    fn mix_downsamples_generated_side() {
        let generated: Vec<Slice> = (0..20).map(|i| slice("g", i, Provenance::Generated)).collect();
        let ref_pool: Vec<Slice> = (0..8).map(|i| slice("r", i, Provenance::Reference)).collect();
        let batch = mix_batch(&generated, &ref_pool, 3).unwrap();
        assert_eq!(batch.generated_slices.len(), 8);
        assert_eq!(batch.reference_slices.len(), 8);
    }

    #[test]
    fn mix_requires_some_input() {
        assert!(matches!(mix_batch(&[], &[], 3).unwrap_err(), CorpusError::EmptyBatch));
        let generated: Vec<Slice> = (0..3).map(|i| slice("g", i, Provenance::Generated)).collect();
        let batch = mix_batch(&generated, &[], 3).unwrap();
        assert!(batch.generated_slices.is_empty());
        assert!(batch.reference_slices.is_empty());
    }

    #[test]
    fn mix_is_seed_deterministic() {
        let generated: Vec<Slice> = (0..12).map(|i| slice("g", i, Provenance::Generated)).collect();
        let ref_pool: Vec<Slice> = (0..30).map(|i| slice("r", i, Provenance::Reference)).collect();
        assert_eq!(mix_batch(&generated, &ref_pool, 5).unwrap(), mix_batch(&generated, &ref_pool, 5).unwrap());
        assert_ne!(mix_batch(&generated, &ref_pool, 5).unwrap(), mix_batch(&generated, &ref_pool, 6).unwrap());
    }

    #[test]
    fn mix_normalizes_provenance() {
        // A generated slice routed through the reference pool is relabeled.
        let generated: Vec<Slice> = (0..2).map(|i| slice("g", i, Provenance::Generated)).collect();
        let ref_pool: Vec<Slice> = (0..2).map(|i| slice("r", i, Provenance::Generated)).collect();
        let batch = mix_batch(&generated, &ref_pool, 1).unwrap();
        assert!(batch.reference_slices.iter().all(|s| s.provenance == Provenance::Reference));
        assert!(batch.generated_slices.iter().all(|s| s.provenance == Provenance::Generated));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn balance_histogram_is_uniform(
                n_yes in 1usize..40,
                n_no in 1usize..40,
                seed in 0u64..1000,
            ) {
                let mut examples = sft(Label::Yes, n_yes);
                examples.extend(sft(Label::No, n_no));
                let balanced = balance_labels(&examples, seed).unwrap();
                let k = n_yes.min(n_no);
                prop_assert_eq!(balanced.len(), 2 * k);
                prop_assert_eq!(
                    balanced.iter().filter(|e| e.label == Label::Yes).count(), k
                );
                for e in &balanced {
                    prop_assert!(examples.contains(e));
                }
                // Without replacement: no duplicate slice_texts per label.
                let mut yes_texts: Vec<&str> = balanced
                    .iter()
                    .filter(|e| e.label == Label::Yes)
                    .map(|e| e.slice_text.as_str())
                    .collect();
                yes_texts.sort_unstable();
                yes_texts.dedup();
                prop_assert_eq!(yes_texts.len(), k);
            }

            #[test]
            fn mix_always_equal_cardinality(
                n_gen in 0usize..30,
                n_ref in 0usize..30,
                seed in 0u64..1000,
            ) {
                let generated: Vec<Slice> =
                    (0..n_gen).map(|i| slice("g", i, Provenance::Generated)).collect();
                let ref_pool: Vec<Slice> =
                    (0..n_ref).map(|i| slice("r", i, Provenance::Reference)).collect();
                match mix_batch(&generated, &ref_pool, seed) {
                    Ok(batch) => {
                        prop_assert_eq!(
                            batch.generated_slices.len(),
                            batch.reference_slices.len()
                        );
                        prop_assert_eq!(
                            batch.generated_slices.len(),
                            n_gen.min(n_ref)
                        );
                    }
                    Err(CorpusError::EmptyBatch) => {
                        prop_assert!(n_gen == 0 && n_ref == 0);
                    }
                    Err(e) => prop_assert!(false, "unexpected error {}", e),
                }
            }
        }
    }
}
