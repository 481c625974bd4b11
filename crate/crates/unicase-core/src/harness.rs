//! Casing-noise audits: corpus case transforms, invariance checks, and
//! fragmentation comparison against a conventional cased tokenizer.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::encoder::viterbi_segment;
use crate::normalize::{self, classify_shape, ShapeClass, UnitKind};
use crate::trainer::BaseVocab;
use crate::vocab::UniCaseVocab;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("surface budgets differ: {unicase} unicase entries vs {baseline} baseline pieces")]
    BudgetMismatch { unicase: usize, baseline: usize },
}

/// Whole-corpus case transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CasingMode {
    Original,
    Lower,
    Upper,
}

impl CasingMode {
    pub const ALL: [CasingMode; 3] = [CasingMode::Original, CasingMode::Lower, CasingMode::Upper];

    pub fn name(self) -> &'static str {
        match self {
            CasingMode::Original => "original",
            CasingMode::Lower => "lower",
            CasingMode::Upper => "upper",
        }
    }
}

/// Character-wise case mapping; `Original` is the identity.
pub fn transform(corpus: &str, mode: CasingMode) -> String {
    match mode {
        CasingMode::Original => corpus.to_string(),
        CasingMode::Lower => corpus.chars().flat_map(|c| c.to_lowercase()).collect(),
        CasingMode::Upper => corpus.chars().flat_map(|c| c.to_uppercase()).collect(),
    }
}

/// Either tokenizer the harness can drive: the case-invariant one, or a flat
/// cased unigram baseline trained on raw surfaces.
pub enum Segmenter<'a> {
    UniCase(&'a UniCaseVocab),
    CasedBaseline(&'a BaseVocab),
}

impl Segmenter<'_> {
    /// Surface-entry budget, the fairness measure for comparisons.
    pub fn surface_budget(&self) -> usize {
        match self {
            Segmenter::UniCase(v) => v.n_entries(),
            Segmenter::CasedBaseline(v) => v.len(),
        }
    }

    /// Base-id sequence of one word unit; `None` when some chunk is not
    /// coverable by the vocabulary.
    pub fn word_base_ids(&self, word: &str) -> Option<Vec<u32>> {
        match self {
            Segmenter::UniCase(v) => {
                let mut ids = Vec::new();
                for chunk in normalize::chunk_word(word).ok()? {
                    ids.extend(viterbi_segment(&chunk.base, v.base()).ok()?);
                }
                Some(ids)
            }
            Segmenter::CasedBaseline(v) => viterbi_segment(word, v).ok(),
        }
    }

    fn unit_token_count(&self, unit_text: &str, kind: UnitKind) -> Option<usize> {
        match kind {
            UnitKind::Word => self.word_base_ids(unit_text).map(|ids| ids.len()),
            UnitKind::Neutral => match self {
                Segmenter::UniCase(v) => viterbi_segment(unit_text, v.base()).ok().map(|i| i.len()),
                Segmenter::CasedBaseline(v) => viterbi_segment(unit_text, v).ok().map(|i| i.len()),
            },
        }
    }
}

/// Token statistics of one corpus under one casing mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeStats {
    pub tokens: usize,
    pub words: usize,
    /// Units that could not be segmented; they are excluded from the ratio.
    pub unknown_chunks: usize,
    pub tokens_per_word: f64,
}

/// A word whose base-id sequence changes across casing transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceViolation {
    pub word: String,
    /// Per-mode base ids; `None` marks an unsegmentable transform.
    pub sequences: Vec<(CasingMode, Option<Vec<u32>>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentationReport {
    pub per_mode: Vec<(CasingMode, ModeStats)>,
    pub violations: Vec<InvarianceViolation>,
    /// Mixed-case words are exempt from the invariance condition; they are
    /// counted here instead of being audited.
    pub mixed_words: usize,
}

impl FragmentationReport {
    pub fn stats(&self, mode: CasingMode) -> &ModeStats {
        &self
            .per_mode
            .iter()
            .find(|(m, _)| *m == mode)
            .expect("all modes present")
            .1
    }

    /// Machine-readable lines: `mode<TAB>tokens_per_word<TAB>violations`.
    pub fn records(&self) -> String {
        let mut out = String::new();
        for (mode, stats) in &self.per_mode {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                mode.name(),
                stats.tokens_per_word,
                self.violations.len()
            );
        }
        out
    }

    /// Human-readable table.
    pub fn table(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>8} {:>9} {:>15}",
            "mode", "tokens", "words", "unknown", "tokens/word"
        );
        for (mode, s) in &self.per_mode {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>8} {:>9} {:>15.4}",
                mode.name(),
                s.tokens,
                s.words,
                s.unknown_chunks,
                s.tokens_per_word
            );
        }
        let _ = writeln!(out, "invariance violations: {}", self.violations.len());
        let _ = writeln!(out, "mixed-case words excluded: {}", self.mixed_words);
        out
    }
}

fn mode_stats(corpus: &str, segmenter: &Segmenter) -> ModeStats {
    let pt = normalize::pre_tokenize(corpus);
    let mut tokens = 0usize;
    let mut words = 0usize;
    let mut unknown = 0usize;
    for unit in &pt.units {
        let is_word = unit.kind == UnitKind::Word;
        match segmenter.unit_token_count(&unit.text, unit.kind) {
            Some(n) => {
                tokens += n;
                if is_word {
                    words += 1;
                }
            }
            None => unknown += 1,
        }
    }
    let tokens_per_word = if words == 0 {
        0.0
    } else {
        tokens as f64 / words as f64
    };
    ModeStats {
        tokens,
        words,
        unknown_chunks: unknown,
        tokens_per_word,
    }
}

/// Compare every distinct non-mixed word's base-id sequence under the three
/// casing transforms and compute per-mode fragmentation.
pub fn audit_invariance(corpus: &str, segmenter: &Segmenter) -> FragmentationReport {
    let per_mode = CasingMode::ALL
        .iter()
        .map(|&mode| (mode, mode_stats(&transform(corpus, mode), segmenter)))
        .collect();

    let pt = normalize::pre_tokenize(corpus);
    let mut distinct_words: BTreeSet<&str> = BTreeSet::new();
    for unit in &pt.units {
        if unit.kind == UnitKind::Word {
            distinct_words.insert(&unit.text);
        }
    }

    let mut violations = Vec::new();
    let mut mixed_words = 0usize;
    for word in distinct_words {
        if classify_shape(word) == Ok(ShapeClass::Mixed) {
            mixed_words += 1;
            continue;
        }
        let sequences: Vec<(CasingMode, Option<Vec<u32>>)> = CasingMode::ALL
            .iter()
            .map(|&mode| (mode, segmenter.word_base_ids(&transform(word, mode))))
            .collect();
        let first = &sequences[0].1;
        if sequences.iter().any(|(_, ids)| ids != first) {
            violations.push(InvarianceViolation {
                word: word.to_string(),
                sequences,
            });
        }
    }
    FragmentationReport {
        per_mode,
        violations,
        mixed_words,
    }
}

/// Side-by-side audit of both tokenizers, plus the two directional claims.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub unicase: FragmentationReport,
    pub baseline: FragmentationReport,
}

impl Comparison {
    /// Uppercasing must not change the case-invariant tokenizer's
    /// fragmentation at all.
    pub fn unicase_upper_equals_lower(&self) -> bool {
        let upper = self.unicase.stats(CasingMode::Upper);
        let lower = self.unicase.stats(CasingMode::Lower);
        upper.tokens == lower.tokens && upper.words == lower.words
    }

    /// The cased baseline fragments uppercased text more than original text
    /// when trained on a natural-cased corpus.
    pub fn baseline_upper_exceeds_original(&self) -> bool {
        let upper = self.baseline.stats(CasingMode::Upper);
        let original = self.baseline.stats(CasingMode::Original);
        upper.tokens_per_word > original.tokens_per_word
    }
}

/// Audit both tokenizers over the same corpus. Errors unless the two surface
/// budgets are equal, since the comparison is unfair otherwise.
pub fn compare(
    corpus: &str,
    unicase: &UniCaseVocab,
    baseline: &BaseVocab,
) -> Result<Comparison, HarnessError> {
    let uc = Segmenter::UniCase(unicase);
    let bl = Segmenter::CasedBaseline(baseline);
    if uc.surface_budget() != bl.surface_budget() {
        return Err(HarnessError::BudgetMismatch {
            unicase: uc.surface_budget(),
            baseline: bl.surface_budget(),
        });
    }
    Ok(Comparison {
        unicase: audit_invariance(corpus, &uc),
        baseline: audit_invariance(corpus, &bl),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::expand_variants;

    fn base(entries: &[(&str, f64)]) -> BaseVocab {
        BaseVocab::new(
            entries
                .iter()
                .map(|(p, pr)| (p.to_string(), pr.ln()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn transform_examples() {
        assert_eq!(transform("Other words.", CasingMode::Upper), "OTHER WORDS.");
        assert_eq!(transform("Other words.", CasingMode::Lower), "other words.");
        assert_eq!(
            transform("AnyThing 42%", CasingMode::Original),
            "AnyThing 42%"
        );
    }

    #[test]
    fn transforms_are_idempotent() {
        let lines = ["Hello World", "MIXED case Text.", "42% off!", "camelCase"];
        for line in lines {
            for mode in [CasingMode::Lower, CasingMode::Upper] {
                let once = transform(line, mode);
                assert_eq!(transform(&once, mode), once);
            }
        }
    }

    #[test]
    fn unicase_corpus_has_zero_violations() {
        let b = base(&[
            ("hello", 0.4),
            ("world", 0.3),
            ("h", 0.05),
            ("e", 0.05),
            ("l", 0.05),
            ("o", 0.05),
            ("w", 0.03),
            ("r", 0.03),
            ("d", 0.04),
        ]);
        let (v, _) = expand_variants(b, "hello world HELLO World", 1).unwrap();
        let report = audit_invariance("Hello world HELLO", &Segmenter::UniCase(&v));
        assert!(
            report.violations.is_empty(),
            "violations: {:?}",
            report.violations
        );
        assert_eq!(report.mixed_words, 0);
    }

    #[test]
    fn cased_baseline_violates_invariance() {
        // The baseline knows "hello" but can only spell "HELLO" char by char.
        let b = base(&[
            ("hello", 0.5),
            ("h", 0.1),
            ("e", 0.1),
            ("l", 0.1),
            ("o", 0.1),
            ("H", 0.02),
            ("E", 0.02),
            ("L", 0.04),
            ("O", 0.02),
        ]);
        let report = audit_invariance("hello", &Segmenter::CasedBaseline(&b));
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].word, "hello");
    }

    #[test]
    fn mixed_words_are_excluded_and_counted() {
        let b = base(&[
            ("camel", 0.4),
            ("case", 0.4),
            ("c", 0.04),
            ("a", 0.04),
            ("m", 0.03),
            ("e", 0.03),
            ("l", 0.03),
            ("s", 0.03),
        ]);
        let (v, _) = expand_variants(b, "camelCase camel case", 1).unwrap();
        let report = audit_invariance("camelCase camel", &Segmenter::UniCase(&v));
        assert_eq!(report.mixed_words, 1);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn empty_corpus_gives_empty_report() {
        let b = base(&[("a", 1.0)]);
        let (v, _) = expand_variants(b, "a", 1).unwrap();
        let report = audit_invariance("", &Segmenter::UniCase(&v));
        assert!(report.violations.is_empty());
        assert_eq!(report.mixed_words, 0);
        for (_, stats) in &report.per_mode {
            assert_eq!(stats.tokens, 0);
            assert_eq!(stats.words, 0);
        }
    }

    #[test]
    fn compare_requires_equal_budgets() {
        let ub = base(&[("a", 0.6), ("b", 0.4)]);
        let (v, _) = expand_variants(ub, "a b", 1).unwrap();
        let bl = base(&[("a", 0.3), ("b", 0.3), ("c", 0.4)]);
        assert!(matches!(
            compare("a b", &v, &bl),
            Err(HarnessError::BudgetMismatch {
                unicase: 2,
                baseline: 3
            })
        ));
    }

    #[test]
    fn all_uppercase_corpus_is_a_degenerate_control() {
        // When the corpus is already uppercase, the upper transform is the
        // identity and the baseline sees no extra fragmentation.
        let b = base(&[("AB", 0.5), ("A", 0.25), ("B", 0.25)]);
        let report = audit_invariance("AB AB", &Segmenter::CasedBaseline(&b));
        let upper = report.stats(CasingMode::Upper);
        let original = report.stats(CasingMode::Original);
        assert_eq!(upper.tokens, original.tokens);
        assert_eq!(upper.tokens_per_word, original.tokens_per_word);
    }

    #[test]
    fn records_format() {
        let b = base(&[("a", 1.0)]);
        let (v, _) = expand_variants(b, "a", 1).unwrap();
        let report = audit_invariance("a a", &Segmenter::UniCase(&v));
        let records = report.records();
        let lines: Vec<&str> = records.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("original\t"));
        assert!(lines[1].starts_with("lower\t"));
        assert!(lines[2].starts_with("upper\t"));
        for line in lines {
            assert_eq!(line.split('\t').count(), 3);
        }
    }
}
