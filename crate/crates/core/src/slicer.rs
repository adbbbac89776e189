//! Trace segmentation into logically complete, token-budgeted slices.
//!
//! A trace is split into atomic segments by the primary delimiter, and the
//! atoms are merged greedily: a slice grows until appending the next atom
//! would exceed `max_tokens`, or until the next atom opens with a discourse
//! cue ("Wait", "Therefore", ...), which forces a new slice. An atom that
//! exceeds the budget on its own is re-packed the same way under the next
//! delimiter in the list, in isolation: its pieces never merge with
//! neighboring atoms, so raising the budget can only coarsen the partition
//! and slice counts stay monotone in `max_tokens`. Delimiters stay attached
//! to the preceding segment, so concatenating slice texts reproduces the
//! input byte-for-byte.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlicerError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("corrupt slices: {0}")]
    CorruptSlices(String),
}

/// How tokens are counted when applying the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    /// Maximal non-whitespace runs.
    #[default]
    Whitespace,
    /// Delegates to a counter registered via [`Slicer::with_external_counter`].
    BytePairExternal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicerConfig {
    /// Token budget per slice (L).
    pub max_tokens: usize,
    /// Segment-boundary strings; the first is the primary delimiter, later
    /// ones are fallbacks for atoms that still exceed the budget.
    pub delimiters: Vec<String>,
    /// A segment whose trimmed head starts with one of these opens a new
    /// slice. Case-sensitive.
    pub cue_prefixes: Vec<String>,
    pub tokenizer_mode: TokenizerMode,
}

impl Default for SlicerConfig {
    fn default() -> Self {
        Self {
            max_tokens: 320,
            delimiters: vec!["\n\n".into(), "\n".into()],
            cue_prefixes: [
                "Wait",
                "But wait",
                "Alternatively",
                "However",
                "Therefore",
                "So,",
                "Since",
                "Let me",
                "Now,",
                "Next,",
            ]
            .map(String::from)
            .to_vec(),
            tokenizer_mode: TokenizerMode::Whitespace,
        }
    }
}

impl SlicerConfig {
    pub fn validate(&self) -> Result<(), SlicerError> {
        if self.max_tokens < 1 {
            return Err(SlicerError::Configuration("max_tokens must be >= 1".into()));
        }
        if self.delimiters.iter().any(String::is_empty) {
            return Err(SlicerError::Configuration("delimiters must be non-empty strings".into()));
        }
        Ok(())
    }
}

/// Whether a slice came from the trained reasoner or the reference corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Generated,
    Reference,
}

/// One contiguous span of a trace. `start_char`/`end_char` are byte offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub trace_id: String,
    pub index: usize,
    pub text: String,
    pub token_count: usize,
    pub start_char: usize,
    pub end_char: usize,
    pub provenance: Provenance,
}

pub type TokenCountFn = Arc<dyn Fn(&str) -> usize + Send + Sync>;

/// Counts maximal non-whitespace runs.
pub fn count_whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Mode-dispatching token count for configurations without an external
/// counter. External mode requires a registered counter and therefore a
/// [`Slicer`] built with [`Slicer::with_external_counter`].
pub fn count_tokens(text: &str, mode: TokenizerMode) -> Result<usize, SlicerError> {
    match mode {
        TokenizerMode::Whitespace => Ok(count_whitespace_tokens(text)),
        TokenizerMode::BytePairExternal => Err(SlicerError::Configuration(
            "byte-pair-external token counting requires a registered counter".into(),
        )),
    }
}

/// Segments traces under a fixed configuration.
pub struct Slicer {
    cfg: SlicerConfig,
    external_counter: Option<TokenCountFn>,
}

impl Slicer {
    pub fn new(cfg: SlicerConfig) -> Result<Self, SlicerError> {
        cfg.validate()?;
        if cfg.tokenizer_mode == TokenizerMode::BytePairExternal {
            return Err(SlicerError::Configuration(
                "byte-pair-external mode requires with_external_counter".into(),
            ));
        }
        Ok(Self { cfg, external_counter: None })
    }

    pub fn with_external_counter(cfg: SlicerConfig, counter: TokenCountFn) -> Result<Self, SlicerError> {
        cfg.validate()?;
        Ok(Self { cfg, external_counter: Some(counter) })
    }

    pub fn config(&self) -> &SlicerConfig {
        &self.cfg
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        match (self.cfg.tokenizer_mode, &self.external_counter) {
            (TokenizerMode::BytePairExternal, Some(f)) => f(text),
            // Whitespace mode ignores any registered counter.
            _ => count_whitespace_tokens(text),
        }
    }

    /// Partitions `text` into slices. Empty input yields an empty list.
    pub fn segment(&self, trace_id: &str, text: &str, provenance: Provenance) -> Vec<Slice> {
        if text.is_empty() {
            return Vec::new();
        }
        let mut ranges = Vec::new();
        self.pack(text, 0..text.len(), 0, &mut ranges);
        ranges
            .into_iter()
            .enumerate()
            .map(|(index, range)| {
                let slice_text = &text[range.clone()];
                Slice {
                    trace_id: trace_id.to_string(),
                    index,
                    text: slice_text.to_string(),
                    token_count: self.count_tokens(slice_text),
                    start_char: range.start,
                    end_char: range.end,
                    provenance,
                }
            })
            .collect()
    }

    /// Splits `range` by the `level`-th delimiter and merges the resulting
    /// atoms greedily. Merged ranges are within budget by construction, so
    /// only a single atom can close over budget; [`Self::emit`] descends
    /// into such atoms with the next delimiter. Atoms never merge across
    /// their parent range, which keeps slice counts monotone in the budget.
    fn pack(&self, text: &str, range: Range<usize>, level: usize, out: &mut Vec<Range<usize>>) {
        if level == self.cfg.delimiters.len() {
            out.push(range);
            return;
        }
        let mut atoms = Vec::new();
        split_retaining(text, range, &self.cfg.delimiters[level], &mut atoms);
        let mut cur: Option<Range<usize>> = None;
        for atom in atoms {
            let Some(open) = cur.take() else {
                cur = Some(atom);
                continue;
            };
            if self.head_is_cue(&text[atom.clone()]) {
                self.emit(text, open, level, out);
                cur = Some(atom);
                continue;
            }
            if self.candidate_count(text, &open, &atom) <= self.cfg.max_tokens {
                cur = Some(open.start..atom.end);
            } else {
                self.emit(text, open, level, out);
                cur = Some(atom);
            }
        }
        if let Some(open) = cur {
            self.emit(text, open, level, out);
        }
    }

    /// Closes one packed range: within budget (or with no fallback
    /// delimiter left) it becomes a slice, otherwise it is re-packed under
    /// the next delimiter.
    fn emit(&self, text: &str, range: Range<usize>, level: usize, out: &mut Vec<Range<usize>>) {
        if level + 1 < self.cfg.delimiters.len()
            && self.count_tokens(&text[range.clone()]) > self.cfg.max_tokens
        {
            self.pack(text, range, level + 1, out);
        } else {
            out.push(range);
        }
    }

    /// Token count of `open` extended by `atom`. Whitespace counts are
    /// additive when the join point touches whitespace; otherwise (or under
    /// an external counter) the joined text is recounted, since token
    /// boundaries can shift across the join.
    fn candidate_count(&self, text: &str, open: &Range<usize>, atom: &Range<usize>) -> usize {
        if self.cfg.tokenizer_mode == TokenizerMode::Whitespace {
            let boundary_ws = text[open.clone()].ends_with(|c: char| c.is_whitespace())
                || text[atom.clone()].starts_with(|c: char| c.is_whitespace());
            if boundary_ws {
                return count_whitespace_tokens(&text[open.clone()])
                    + count_whitespace_tokens(&text[atom.clone()]);
            }
        }
        self.count_tokens(&text[open.start..atom.end])
    }

    fn head_is_cue(&self, atom_text: &str) -> bool {
        let head = atom_text.trim_start();
        self.cfg.cue_prefixes.iter().any(|cue| head.starts_with(cue.as_str()))
    }
}

/// Appends the subranges of `range` delimited by `delim`, with each
/// delimiter occurrence attached to the atom it terminates.
fn split_retaining(text: &str, range: Range<usize>, delim: &str, out: &mut Vec<Range<usize>>) {
    let mut start = range.start;
    let mut search_from = range.start;
    while search_from < range.end {
        match text[search_from..range.end].find(delim) {
            Some(pos) => {
                let boundary = search_from + pos + delim.len();
                out.push(start..boundary);
                start = boundary;
                search_from = boundary;
            }
            None => break,
        }
    }
    if start < range.end {
        out.push(start..range.end);
    }
}

/// Rebuilds the original trace text from its slices.
pub fn reassemble(slices: &[Slice]) -> Result<String, SlicerError> {
    if slices.is_empty() {
        return Ok(String::new());
    }
    let mut ordered: Vec<&Slice> = slices.iter().collect();
    ordered.sort_by_key(|s| s.index);
    let trace_id = &ordered[0].trace_id;
    let mut text = String::new();
    let mut expected_start = 0usize;
    for (i, slice) in ordered.iter().enumerate() {
        if slice.trace_id != *trace_id {
            return Err(SlicerError::CorruptSlices(format!(
                "mixed trace ids: {} and {}",
                trace_id, slice.trace_id
            )));
        }
        if slice.index != i {
            return Err(SlicerError::CorruptSlices(format!(
                "index gap: expected {i}, found {}",
                slice.index
            )));
        }
        if slice.start_char != expected_start {
            return Err(SlicerError::CorruptSlices(format!(
                "offset mismatch at index {i}: expected start {expected_start}, found {}",
                slice.start_char
            )));
        }
        if slice.end_char.checked_sub(slice.start_char) != Some(slice.text.len()) {
            return Err(SlicerError::CorruptSlices(format!(
                "span length mismatch at index {i}"
            )));
        }
        text.push_str(&slice.text);
        expected_start = slice.end_char;
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slicer(max_tokens: usize) -> Slicer {
        Slicer::new(SlicerConfig { max_tokens, ..Default::default() }).unwrap()
    }

    fn texts(slices: &[Slice]) -> Vec<&str> {
        slices.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn whitespace_token_counting() {
        assert_eq!(count_whitespace_tokens(""), 0);
        assert_eq!(count_whitespace_tokens("a b  c"), 3);
        assert_eq!(count_whitespace_tokens("  a\tb\nc  "), 3);
        let long = vec!["x"; 500].join(" ");
        assert_eq!(count_whitespace_tokens(&long), 500);
    }

    #[test]
    fn external_mode_needs_counter() {
        let cfg = SlicerConfig {
            tokenizer_mode: TokenizerMode::BytePairExternal,
            ..Default::default()
        };
        assert!(matches!(count_tokens("a", cfg.tokenizer_mode), Err(SlicerError::Configuration(_))));
        assert!(matches!(Slicer::new(cfg.clone()), Err(SlicerError::Configuration(_))));
        let s = Slicer::with_external_counter(cfg, Arc::new(|t: &str| t.chars().count())).unwrap();
        assert_eq!(s.count_tokens("abc d"), 5);
    }

    #[test]
    fn empty_text_yields_no_slices() {
        assert!(slicer(320).segment("t", "", Provenance::Generated).is_empty());
    }

    #[test]
    fn nine_hundred_token_segments_merge_in_threes() {
        let seg = vec!["w"; 100].join(" ");
        let text = vec![seg; 9].join("\n\n");
        let slices = slicer(320).segment("t", &text, Provenance::Generated);
        assert_eq!(slices.len(), 3);
        for s in &slices {
            assert_eq!(s.token_count, 300);
        }
        assert_eq!(reassemble(&slices).unwrap(), text);
    }

    #[test]
    fn cue_prefix_forces_boundary() {
        let text = "The sum is even.\n\nWait, check the odd case.";
        let slices = slicer(320).segment("t", text, Provenance::Generated);
        assert_eq!(texts(&slices), vec!["The sum is even.\n\n", "Wait, check the odd case."]);
    }

    #[test]
    fn oversized_atom_stays_whole() {
        let text = vec!["w"; 500].join(" ");
        let slices = slicer(320).segment("t", &text, Provenance::Generated);
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].token_count, 500);
    }

    #[test]
    fn fallback_delimiter_splits_oversized_atoms_only() {
        // Two atoms after the primary split; the second exceeds the budget
        // and contains single newlines, so the fallback applies to it alone
        // and its pieces pack separately from the first atom.
        let small = "a b";
        let big = format!("{}\n{}", vec!["x"; 6].join(" "), vec!["y"; 6].join(" "));
        let text = format!("{small}\n\n{big}");
        let slices = slicer(8).segment("t", &text, Provenance::Generated);
        assert_eq!(
            texts(&slices),
            vec![
                format!("{small}\n\n").as_str(),
                format!("{}\n", vec!["x"; 6].join(" ")).as_str(),
                vec!["y"; 6].join(" ").as_str(),
            ]
        );
        assert_eq!(reassemble(&slices).unwrap(), text);
    }

    #[test]
    fn fallback_pieces_never_merge_across_atoms() {
        // Letting fallback pieces merge into neighbors would give 2 slices
        // at budget 9 ("p p p" absorbs the x-piece, "c c c" the y-piece)
        // but 3 at budget 12, where the middle atom no longer splits yet
        // fits with neither neighbor. Isolated re-packing keeps counts
        // monotone: 4 at 9, 3 at 12.
        let text = format!("p p p\n\n{x}\n{y}\n\nc c c", x = vec!["x"; 6].join(" "), y = vec!["y"; 4].join(" "));
        let at_9 = slicer(9).segment("t", &text, Provenance::Generated);
        let at_12 = slicer(12).segment("t", &text, Provenance::Generated);
        assert_eq!(at_9.len(), 4);
        assert_eq!(at_12.len(), 3);
        assert_eq!(reassemble(&at_9).unwrap(), text);
        assert_eq!(reassemble(&at_12).unwrap(), text);
    }

    #[test]
    fn small_atoms_keep_internal_newlines() {
        let text = "a\nb\n\nc";
        let slices = slicer(320).segment("t", text, Provenance::Generated);
        assert_eq!(texts(&slices), vec!["a\nb\n\nc"]);
    }

    #[test]
    fn close_before_exceed() {
        // Atoms of 3 tokens each with budget 5: no pair fits.
        let text = "a b c\n\nd e f\n\ng h i";
        let slices = slicer(5).segment("t", text, Provenance::Generated);
        assert_eq!(slices.len(), 3);
        for s in &slices {
            assert_eq!(s.token_count, 3);
        }
    }

    #[test]
    fn offsets_are_exact_spans() {
        let text = "alpha beta\n\nWait, gamma\n\ndelta";
        let slices = slicer(4).segment("tr", text, Provenance::Reference);
        for s in &slices {
            assert_eq!(s.text, &text[s.start_char..s.end_char]);
            assert_eq!(s.provenance, Provenance::Reference);
        }
        assert_eq!(reassemble(&slices).unwrap(), text);
    }

    #[test]
    fn whitespace_only_text_is_one_empty_slice() {
        let slices = slicer(320).segment("t", " \n\n ", Provenance::Generated);
        assert_eq!(reassemble(&slices).unwrap(), " \n\n ");
        assert!(slices.iter().all(|s| s.token_count == 0));
    }

    #[test]
    fn reassemble_rejects_gaps_and_overlaps() {
        let text = "a b\n\nc d";
        let mut slices = slicer(2).segment("t", text, Provenance::Generated);
        assert_eq!(slices.len(), 2);
        slices[1].index = 2;
        assert!(matches!(reassemble(&slices), Err(SlicerError::CorruptSlices(_))));

        let mut overlapping = slicer(2).segment("t", text, Provenance::Generated);
        overlapping[1].start_char = 2;
        assert!(matches!(reassemble(&overlapping), Err(SlicerError::CorruptSlices(_))));

        let mut mixed = slicer(2).segment("t", text, Provenance::Generated);
        mixed[1].trace_id = "other".into();
        assert!(matches!(reassemble(&mixed), Err(SlicerError::CorruptSlices(_))));
    }

    #[test]
    fn reassemble_empty_is_empty() {
        assert_eq!(reassemble(&[]).unwrap(), "");
    }

    #[test]
    fn budget_holds_for_multi_segment_slices() {
        let text = (0..40).map(|i| format!("word{i} extra")).collect::<Vec<_>>().join("\n\n");
        for budget in [2, 3, 5, 9] {
            for s in slicer(budget).segment("t", &text, Provenance::Generated) {
                let atoms = s.text.matches("\n\n").count() + 1;
                if atoms >= 2 {
                    assert!(s.token_count <= budget, "budget {budget} violated: {:?}", s.text);
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_config() {
        assert!(Slicer::new(SlicerConfig { max_tokens: 0, ..Default::default() }).is_err());
        assert!(
            Slicer::new(SlicerConfig { delimiters: vec![String::new()], ..Default::default() })
                .is_err()
        );
    }

    #[test]
    fn non_whitespace_delimiter_recounts_joined_text() {
        let cfg = SlicerConfig {
            max_tokens: 3,
            delimiters: vec!["###".into()],
            cue_prefixes: vec![],
            tokenizer_mode: TokenizerMode::Whitespace,
        };
        let slicer = Slicer::new(cfg).unwrap();
        // Joining "a b###" and "c d###" fuses "b###c" into one whitespace
        // token, so the merged text is 3 tokens, not 2+2; "e" then fuses
        // into "d###e" keeping the total at 3. Everything fits one slice.
        let text = "a b###c d###e";
        let slices = slicer.segment("t", text, Provenance::Generated);
        assert_eq!(texts(&slices), vec!["a b###c d###e"]);
        assert_eq!(reassemble(&slices).unwrap(), text);

        // "e f" pushes the true joined count to 4: close before exceeding.
        let text = "a b###c d###e f";
        let slices = slicer.segment("t", text, Provenance::Generated);
        assert_eq!(texts(&slices), vec!["a b###c d###", "e f"]);
        assert_eq!(reassemble(&slices).unwrap(), text);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_text() -> impl Strategy<Value = String> {
            let word = prop::string::string_regex("[a-zA-Z0-9]{1,8}").unwrap();
            // A quarter of the joins use a single newline, so atoms over
            // the budget exercise the fallback delimiter.
            let atom = prop::collection::vec((word, 0u8..4), 1..30).prop_map(|ws| {
                let mut s = String::new();
                for (i, (w, sep)) in ws.iter().enumerate() {
                    if i > 0 {
                        s.push(if *sep == 0 { '\n' } else { ' ' });
                    }
                    s.push_str(w);
                }
                s
            });
            prop::collection::vec(atom, 0..20).prop_map(|atoms| atoms.join("\n\n"))
        }

        proptest! {
            #[test]
            fn losslessness(text in arb_text(), budget in 1usize..40) {
                let slices = slicer(budget).segment("t", &text, Provenance::Generated);
                prop_assert_eq!(reassemble(&slices).unwrap(), text);
            }

            #[test]
            fn monotone_in_budget(text in arb_text(), budget in 1usize..40) {
                let n_small = slicer(budget).segment("t", &text, Provenance::Generated).len();
                let n_large = slicer(budget + 7).segment("t", &text, Provenance::Generated).len();
                prop_assert!(n_large <= n_small);
            }

            #[test]
            fn deterministic(text in arb_text()) {
                let a = slicer(16).segment("t", &text, Provenance::Generated);
                let b = slicer(16).segment("t", &text, Provenance::Generated);
                prop_assert_eq!(a, b);
            }
        }
    }
}
