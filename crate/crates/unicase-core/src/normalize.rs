//! Pre-tokenization and case-shape handling.
//!
//! Text is split into maximal letter runs (word units) and maximal
//! non-letter, non-whitespace runs (neutral units). Word units carry one of
//! three case shapes — lowercase (`aaa`), uppercase (`AAA`), titlecase
//! (`Aaa`) — and mixed-case words are split at the positions where the case
//! class changes, so every chunk downstream has a uniform shape.
//!
//! Only bicameral letters participate in shape logic; caseless letters count
//! as lowercase. Unicode titlecase digraphs and locale-dependent folding
//! (e.g. the Turkish dotted I) are out of scope.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Case class of a token: three letter shapes plus a neutral class for
/// units that contain no letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Shape {
    Lower,
    Upper,
    Title,
    Neutral,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Lower, Shape::Upper, Shape::Title, Shape::Neutral];
    pub const COUNT: usize = 4;

    /// Stable small id used by the model and file formats.
    pub fn id(self) -> usize {
        match self {
            Shape::Lower => 0,
            Shape::Upper => 1,
            Shape::Title => 2,
            Shape::Neutral => 3,
        }
    }

    pub fn from_id(id: usize) -> Option<Shape> {
        Shape::ALL.get(id).copied().filter(|s| s.id() == id)
    }

    /// One-letter code used in vocab files and the CLI token format.
    pub fn letter(self) -> char {
        match self {
            Shape::Lower => 'L',
            Shape::Upper => 'U',
            Shape::Title => 'T',
            Shape::Neutral => 'N',
        }
    }

    pub fn from_letter(c: char) -> Option<Shape> {
        match c {
            'L' => Some(Shape::Lower),
            'U' => Some(Shape::Upper),
            'T' => Some(Shape::Title),
            'N' => Some(Shape::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Result of classifying the letters of a word unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    /// All letters share one case class.
    Uniform(Shape),
    /// More than one case class present; the word must be split.
    Mixed,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("empty word unit")]
    EmptyWordUnit,
    #[error("not mixed case: {0:?}")]
    NotMixedCase(String),
}

/// Kind of a pre-tokenized unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    /// Maximal run of letters.
    Word,
    /// Maximal run of non-letter, non-whitespace characters.
    Neutral,
}

/// One pre-tokenized unit of the normalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordUnit {
    pub text: String,
    pub kind: UnitKind,
    /// True when the unit is preceded by whitespace or start-of-text; this is
    /// the word-boundary marker rendered as `_` in token dumps.
    pub leading_space: bool,
    /// Byte range into the normalized text.
    pub span: (usize, usize),
}

/// A uniformly-shaped fragment of a word unit, case-folded.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedChunk {
    /// Fully case-folded text of the chunk.
    pub base: String,
    pub shape: Shape,
    /// True when the chunk was produced by splitting a mixed-case word.
    pub is_mixed_fragment: bool,
    /// Byte range into the surface word the chunk came from.
    pub span: (usize, usize),
}

/// Pre-tokenized view of one document: the whitespace-normalized text and
/// the units that partition it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreTokenized {
    pub normalized: String,
    pub units: Vec<WordUnit>,
}

impl PreTokenized {
    /// Rebuild the normalized text from the units: one space before each unit
    /// with `leading_space`, minus the leading one.
    pub fn reconstruct(&self) -> String {
        reconstruct_units(
            self.units
                .iter()
                .map(|u| (u.text.as_str(), u.leading_space)),
        )
    }
}

pub(crate) fn reconstruct_units<'a>(units: impl Iterator<Item = (&'a str, bool)>) -> String {
    let mut out = String::new();
    for (text, leading_space) in units {
        if leading_space {
            out.push(' ');
        }
        out.push_str(text);
    }
    if out.starts_with(' ') {
        out.remove(0);
    }
    out
}

fn is_upper(c: char) -> bool {
    c.is_uppercase()
}

/// Classify the letters of a word unit into one shape, or `Mixed` when more
/// than one case class is present. Caseless letters count as lowercase, and a
/// single uppercase letter is titlecase, never uppercase.
pub fn classify_shape(word: &str) -> Result<ShapeClass, NormalizeError> {
    let mut chars = word.chars();
    let first = chars.next().ok_or(NormalizeError::EmptyWordUnit)?;
    let first_upper = is_upper(first);
    let mut rest_upper = 0usize;
    let mut rest_lower = 0usize;
    for c in chars {
        if is_upper(c) {
            rest_upper += 1;
        } else {
            rest_lower += 1;
        }
    }
    Ok(match (first_upper, rest_upper, rest_lower) {
        (false, 0, _) => ShapeClass::Uniform(Shape::Lower),
        (true, _, 0) if rest_upper > 0 => ShapeClass::Uniform(Shape::Upper),
        (true, 0, _) => ShapeClass::Uniform(Shape::Title),
        _ => ShapeClass::Mixed,
    })
}

/// Lowercase every cased letter.
pub fn fold_case(surface: &str) -> String {
    surface.chars().flat_map(|c| c.to_lowercase()).collect()
}

/// Render a folded base string in the given shape. Total on valid inputs:
/// `Lower` and `Neutral` are the identity, `Upper` uppercases every letter,
/// `Title` uppercases the first letter only.
pub fn apply_shape(base: &str, shape: Shape) -> String {
    match shape {
        Shape::Lower | Shape::Neutral => base.to_string(),
        Shape::Upper => base.chars().flat_map(|c| c.to_uppercase()).collect(),
        Shape::Title => {
            let mut chars = base.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
    }
}

/// Split a mixed-case word into uniformly-shaped chunks.
///
/// The word is decomposed into maximal same-case letter runs. An uppercase
/// run of length 1 followed by a lowercase run merges with it into one
/// titlecase chunk; an uppercase run of length >= 2 stays whole and the
/// following lowercase run becomes a separate chunk. This reproduces the
/// `Ro/BERT/a` split of `RoBERTa`.
pub fn split_mixed(word: &str) -> Result<Vec<ShapedChunk>, NormalizeError> {
    match classify_shape(word)? {
        ShapeClass::Mixed => {}
        ShapeClass::Uniform(_) => return Err(NormalizeError::NotMixedCase(word.to_string())),
    }

    // Maximal same-case runs as (is_upper, byte_start, byte_end, char_len).
    let mut runs: Vec<(bool, usize, usize, usize)> = Vec::new();
    for (idx, c) in word.char_indices() {
        let upper = is_upper(c);
        let end = idx + c.len_utf8();
        match runs.last_mut() {
            Some(run) if run.0 == upper => {
                run.2 = end;
                run.3 += 1;
            }
            _ => runs.push((upper, idx, end, 1)),
        }
    }

    let mut chunks = Vec::new();
    let mut i = 0;
    while i < runs.len() {
        let (upper, start, end, char_len) = runs[i];
        let (span, shape) = if upper && char_len == 1 && i + 1 < runs.len() && !runs[i + 1].0 {
            // Single capital + following lowercase run: one titlecase chunk.
            let next = runs[i + 1];
            i += 2;
            ((start, next.2), Shape::Title)
        } else if upper {
            i += 1;
            (
                (start, end),
                if char_len == 1 {
                    Shape::Title
                } else {
                    Shape::Upper
                },
            )
        } else {
            i += 1;
            ((start, end), Shape::Lower)
        };
        chunks.push(ShapedChunk {
            base: fold_case(&word[span.0..span.1]),
            shape,
            is_mixed_fragment: true,
            span,
        });
    }
    Ok(chunks)
}

/// Chunk a word unit: one chunk when its shape is uniform, a mixed split
/// otherwise.
pub fn chunk_word(word: &str) -> Result<Vec<ShapedChunk>, NormalizeError> {
    match classify_shape(word)? {
        ShapeClass::Uniform(shape) => Ok(vec![ShapedChunk {
            base: fold_case(word),
            shape,
            is_mixed_fragment: false,
            span: (0, word.len()),
        }]),
        ShapeClass::Mixed => split_mixed(word),
    }
}

/// Collapse whitespace runs to single spaces and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Split text into word and neutral units over the whitespace-normalized
/// form. Word units are maximal letter runs; neutral units are maximal
/// non-letter, non-whitespace runs; `leading_space` marks units preceded by
/// whitespace or start-of-text.
pub fn pre_tokenize(text: &str) -> PreTokenized {
    let normalized = normalize_whitespace(text);
    let mut units = Vec::new();
    let mut run_start: Option<(usize, UnitKind)> = None;
    let mut after_space = true;
    let mut run_leading = true;

    let flush =
        |units: &mut Vec<WordUnit>, normalized: &str, start: usize, end: usize, kind, leading| {
            units.push(WordUnit {
                text: normalized[start..end].to_string(),
                kind,
                leading_space: leading,
                span: (start, end),
            });
        };

    for (idx, c) in normalized.char_indices() {
        if c == ' ' {
            if let Some((start, kind)) = run_start.take() {
                flush(&mut units, &normalized, start, idx, kind, run_leading);
            }
            after_space = true;
            continue;
        }
        let kind = if c.is_alphabetic() {
            UnitKind::Word
        } else {
            UnitKind::Neutral
        };
        match run_start {
            Some((start, run_kind)) if run_kind != kind => {
                flush(&mut units, &normalized, start, idx, run_kind, run_leading);
                run_start = Some((idx, kind));
                run_leading = after_space;
            }
            Some(_) => {}
            None => {
                run_start = Some((idx, kind));
                run_leading = after_space;
            }
        }
        after_space = false;
    }
    if let Some((start, kind)) = run_start {
        flush(
            &mut units,
            &normalized,
            start,
            normalized.len(),
            kind,
            run_leading,
        );
    }
    PreTokenized { normalized, units }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classify_basic_shapes() {
        assert_eq!(
            classify_shape("hello").unwrap(),
            ShapeClass::Uniform(Shape::Lower)
        );
        assert_eq!(
            classify_shape("Acknowledgement").unwrap(),
            ShapeClass::Uniform(Shape::Title)
        );
        assert_eq!(
            classify_shape("OTHER").unwrap(),
            ShapeClass::Uniform(Shape::Upper)
        );
        assert_eq!(classify_shape("camelCase").unwrap(), ShapeClass::Mixed);
        // Single uppercase letter is titlecase, never uppercase.
        assert_eq!(
            classify_shape("A").unwrap(),
            ShapeClass::Uniform(Shape::Title)
        );
        assert_eq!(
            classify_shape("a").unwrap(),
            ShapeClass::Uniform(Shape::Lower)
        );
        assert_eq!(classify_shape(""), Err(NormalizeError::EmptyWordUnit));
    }

    #[test]
    fn classify_caseless_counts_as_lower() {
        assert_eq!(
            classify_shape("你好").unwrap(),
            ShapeClass::Uniform(Shape::Lower)
        );
        // Leading capital followed by caseless letters is titlecase.
        assert_eq!(
            classify_shape("A你").unwrap(),
            ShapeClass::Uniform(Shape::Title)
        );
    }

    #[test]
    fn apply_shape_surfaces() {
        assert_eq!(
            apply_shape("acknowledgement", Shape::Upper),
            "ACKNOWLEDGEMENT"
        );
        assert_eq!(apply_shape("other", Shape::Title), "Other");
        assert_eq!(apply_shape("other", Shape::Lower), "other");
        assert_eq!(apply_shape("x7!", Shape::Neutral), "x7!");
        assert_eq!(apply_shape("a", Shape::Title), "A");
    }

    #[test]
    fn fold_case_examples() {
        assert_eq!(fold_case("OTHER"), "other");
        assert_eq!(fold_case("other"), "other");
        assert_eq!(fold_case("ABC123"), "abc123");
    }

    #[test]
    fn shape_roundtrip_on_uniform_words() {
        for word in [
            "hello",
            "OTHER",
            "Other",
            "A",
            "acknowledgement",
            "ACKNOWLEDGEMENT",
        ] {
            let shape = match classify_shape(word).unwrap() {
                ShapeClass::Uniform(s) => s,
                ShapeClass::Mixed => panic!("unexpected mixed word {word}"),
            };
            assert_eq!(apply_shape(&fold_case(word), shape), word);
        }
    }

    #[test]
    fn split_roberta() {
        let chunks = split_mixed("RoBERTa").unwrap();
        let got: Vec<(&str, Shape)> = chunks.iter().map(|c| (c.base.as_str(), c.shape)).collect();
        assert_eq!(
            got,
            vec![
                ("ro", Shape::Title),
                ("bert", Shape::Upper),
                ("a", Shape::Lower)
            ]
        );
        assert!(chunks.iter().all(|c| c.is_mixed_fragment));
    }

    #[test]
    fn split_camel_case() {
        let chunks = split_mixed("camelCase").unwrap();
        let got: Vec<(&str, Shape)> = chunks.iter().map(|c| (c.base.as_str(), c.shape)).collect();
        assert_eq!(got, vec![("camel", Shape::Lower), ("case", Shape::Title)]);
    }

    #[test]
    fn split_upper_run_stays_whole() {
        let chunks = split_mixed("HTTPserver").unwrap();
        let got: Vec<(&str, Shape)> = chunks.iter().map(|c| (c.base.as_str(), c.shape)).collect();
        assert_eq!(got, vec![("http", Shape::Upper), ("server", Shape::Lower)]);
    }

    #[test]
    fn split_trailing_single_capital() {
        let chunks = split_mixed("camelC").unwrap();
        let got: Vec<(&str, Shape)> = chunks.iter().map(|c| (c.base.as_str(), c.shape)).collect();
        assert_eq!(got, vec![("camel", Shape::Lower), ("c", Shape::Title)]);
    }

    #[test]
    fn split_rejects_uniform_words() {
        assert_eq!(
            split_mixed("hello"),
            Err(NormalizeError::NotMixedCase("hello".to_string()))
        );
    }

    #[test]
    fn split_reconstruction() {
        for word in [
            "RoBERTa",
            "camelCase",
            "HTTPserver",
            "aB",
            "McDonald",
            "iPhoneX",
        ] {
            let chunks = split_mixed(word).unwrap();
            let rebuilt: String = chunks
                .iter()
                .map(|c| apply_shape(&c.base, c.shape))
                .collect();
            assert_eq!(rebuilt, word, "split of {word} does not reconstruct");
            assert!(chunks.iter().all(|c| !c.base.is_empty()));
            // Spans tile the word.
            let mut pos = 0;
            for c in &chunks {
                assert_eq!(c.span.0, pos);
                pos = c.span.1;
            }
            assert_eq!(pos, word.len());
        }
    }

    #[test]
    fn pre_tokenize_words_and_punctuation() {
        let pt = pre_tokenize("Other words.");
        let got: Vec<(&str, UnitKind, bool)> = pt
            .units
            .iter()
            .map(|u| (u.text.as_str(), u.kind, u.leading_space))
            .collect();
        assert_eq!(
            got,
            vec![
                ("Other", UnitKind::Word, true),
                ("words", UnitKind::Word, true),
                (".", UnitKind::Neutral, false),
            ]
        );
        assert_eq!(pt.reconstruct(), pt.normalized);
    }

    #[test]
    fn pre_tokenize_empty() {
        let pt = pre_tokenize("");
        assert!(pt.units.is_empty());
        assert_eq!(pt.normalized, "");
    }

    #[test]
    fn pre_tokenize_neutral_run_kept_whole() {
        let pt = pre_tokenize("42%");
        let got: Vec<(&str, UnitKind, bool)> = pt
            .units
            .iter()
            .map(|u| (u.text.as_str(), u.kind, u.leading_space))
            .collect();
        assert_eq!(got, vec![("42%", UnitKind::Neutral, true)]);
    }

    #[test]
    fn pre_tokenize_collapses_whitespace() {
        let pt = pre_tokenize("  a\t\tb \n c ");
        assert_eq!(pt.normalized, "a b c");
        assert_eq!(pt.units.len(), 3);
        assert!(pt.units.iter().all(|u| u.leading_space));
    }

    #[test]
    fn pre_tokenize_mixed_letters_digits() {
        let pt = pre_tokenize("x7 it's");
        let got: Vec<(&str, UnitKind, bool)> = pt
            .units
            .iter()
            .map(|u| (u.text.as_str(), u.kind, u.leading_space))
            .collect();
        assert_eq!(
            got,
            vec![
                ("x", UnitKind::Word, true),
                ("7", UnitKind::Neutral, false),
                ("it", UnitKind::Word, true),
                ("'", UnitKind::Neutral, false),
                ("s", UnitKind::Word, false),
            ]
        );
    }

    #[test]
    fn unit_spans_tile_the_normalized_text() {
        let pt = pre_tokenize("Ab cd-ef 42% gh");
        for u in &pt.units {
            assert_eq!(&pt.normalized[u.span.0..u.span.1], u.text);
        }
    }

    fn ascii_word() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-zA-Z]{1,12}").unwrap()
    }

    proptest! {
        #[test]
        fn roundtrip_uniform(word in ascii_word()) {
            if let ShapeClass::Uniform(shape) = classify_shape(&word).unwrap() {
                prop_assert_eq!(apply_shape(&fold_case(&word), shape), word);
            }
        }

        #[test]
        fn mixed_split_reconstructs(word in ascii_word()) {
            if classify_shape(&word).unwrap() == ShapeClass::Mixed {
                let chunks = split_mixed(&word).unwrap();
                prop_assert!(chunks.len() >= 2);
                let rebuilt: String =
                    chunks.iter().map(|c| apply_shape(&c.base, c.shape)).collect();
                prop_assert_eq!(rebuilt, word);
                for c in &chunks {
                    prop_assert!(!c.base.is_empty());
                    prop_assert!(c.base.chars().all(|ch| !ch.is_uppercase()));
                    // Every chunk itself has a uniform shape.
                    let surface = apply_shape(&c.base, c.shape);
                    prop_assert_eq!(classify_shape(&surface).unwrap(), ShapeClass::Uniform(c.shape));
                }
            }
        }

        #[test]
        fn pre_tokenize_idempotent(text in "[ a-zA-Z0-9.,!%-]{0,60}") {
            let pt = pre_tokenize(&text);
            prop_assert_eq!(pt.reconstruct(), pt.normalized.clone());
            let again = pre_tokenize(&pt.normalized);
            prop_assert_eq!(again.units, pt.units);
            prop_assert_eq!(again.normalized, pt.normalized);
        }

        #[test]
        fn units_partition_kinds(text in "[ a-zA-Z0-9.,!%-]{0,60}") {
            let pt = pre_tokenize(&text);
            for u in &pt.units {
                match u.kind {
                    UnitKind::Word => prop_assert!(u.text.chars().all(|c| c.is_alphabetic())),
                    UnitKind::Neutral => prop_assert!(u.text.chars().all(|c| !c.is_alphabetic() && !c.is_whitespace())),
                }
            }
        }
    }
}
