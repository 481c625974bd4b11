//! Viterbi encoding of text into `(base_id, shape)` tokens and the exact
//! inverse.
//!
//! Every chunk is segmented over the case-folded base vocabulary, so the
//! base-id sequence of a word is identical no matter how it is cased; the
//! case information travels in the token's shape field. A titlecase chunk
//! attaches the titlecase shape only to its first token: the uppercase
//! letter lives in the first piece, and later pieces are plain lowercase.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::lattice;
use crate::normalize::{self, apply_shape, reconstruct_units, Shape, UnitKind};
use crate::trainer::BaseVocab;
use crate::vocab::UniCaseVocab;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("chunk {0:?} has no segmentation with positive probability")]
    Uncoverable(String),
    #[error("token id {0} is out of range")]
    InvalidTokenId(u32),
    #[error("text contains no word units")]
    NoWords,
}

/// One encoded unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub base_id: u32,
    pub shape: Shape,
    /// Byte range into the normalized text.
    pub span: (usize, usize),
    /// Carries the word-boundary marker (`_` in dumps): set on the first
    /// token of a unit with leading whitespace.
    pub word_initial: bool,
}

/// Result of encoding one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub normalized: String,
    pub tokens: Vec<Token>,
}

/// Maximum-probability segmentation of a folded chunk into base piece ids.
pub fn viterbi_segment(folded_chunk: &str, base: &BaseVocab) -> Result<Vec<u32>, EncodeError> {
    lattice::viterbi(folded_chunk, base)
        .map(|(ids, _)| ids)
        .ok_or_else(|| EncodeError::Uncoverable(folded_chunk.to_string()))
}

/// Byte offset in `raw` for each char boundary of its case-folded form.
/// When folding expands a character, the extra boundaries stay on that
/// character, so adjacent piece spans always tile.
fn fold_boundaries(raw: &str) -> Vec<usize> {
    let mut bounds = Vec::with_capacity(raw.len() + 1);
    for (byte, c) in raw.char_indices() {
        for _ in c.to_lowercase() {
            bounds.push(byte);
        }
    }
    bounds.push(raw.len());
    bounds
}

pub fn encode(text: &str, vocab: &UniCaseVocab) -> Result<Encoding, EncodeError> {
    let pt = normalize::pre_tokenize(text);
    let base = vocab.base();
    let mut tokens = Vec::new();
    for unit in &pt.units {
        let chunks: Vec<(String, Shape, usize)> = match unit.kind {
            UnitKind::Word => normalize::chunk_word(&unit.text)
                .expect("word units are non-empty")
                .into_iter()
                .map(|c| (c.base, c.shape, c.span.0))
                .collect(),
            UnitKind::Neutral => vec![(unit.text.clone(), Shape::Neutral, 0)],
        };
        for (chunk_idx, (folded, chunk_shape, chunk_start)) in chunks.iter().enumerate() {
            let ids = viterbi_segment(folded, base)?;
            let raw_chunk_start = unit.span.0 + chunk_start;
            let raw_chunk = &pt.normalized[raw_chunk_start..];
            let raw_chunk = {
                // The chunk's surface ends where the next chunk (or unit) begins.
                let chunk_bytes = match unit.kind {
                    UnitKind::Word => {
                        let end = chunks
                            .get(chunk_idx + 1)
                            .map_or(unit.span.1 - unit.span.0, |next| next.2);
                        end - chunk_start
                    }
                    UnitKind::Neutral => unit.text.len(),
                };
                &raw_chunk[..chunk_bytes]
            };
            let bounds = fold_boundaries(raw_chunk);
            let mut pos = 0usize;
            for (tok_idx, id) in ids.iter().enumerate() {
                let piece_chars = base
                    .piece(*id)
                    .expect("viterbi ids are in range")
                    .chars()
                    .count();
                let start = bounds[pos];
                let end = bounds[pos + piece_chars];
                pos += piece_chars;
                let shape = match chunk_shape {
                    Shape::Title if tok_idx > 0 => Shape::Lower,
                    s => *s,
                };
                tokens.push(Token {
                    base_id: *id,
                    shape,
                    span: (raw_chunk_start + start, raw_chunk_start + end),
                    word_initial: unit.leading_space && chunk_idx == 0 && tok_idx == 0,
                });
            }
        }
    }
    Ok(Encoding {
        normalized: pt.normalized,
        tokens,
    })
}

/// Exact inverse of [`encode`] on normalized text.
pub fn decode(tokens: &[Token], vocab: &UniCaseVocab) -> Result<String, EncodeError> {
    let base = vocab.base();
    let surfaces: Vec<(String, bool)> = tokens
        .iter()
        .map(|t| {
            base.piece(t.base_id)
                .map(|piece| (apply_shape(piece, t.shape), t.word_initial))
                .ok_or(EncodeError::InvalidTokenId(t.base_id))
        })
        .collect::<Result<_, _>>()?;
    Ok(reconstruct_units(
        surfaces.iter().map(|(s, w)| (s.as_str(), *w)),
    ))
}

/// Tokens-per-word statistic with a per-shape breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentationStats {
    pub tokens: usize,
    pub words: usize,
    pub tokens_per_word: f64,
    /// Token counts by shape.
    pub by_shape: BTreeMap<Shape, usize>,
}

pub fn fragmentation(text: &str, vocab: &UniCaseVocab) -> Result<FragmentationStats, EncodeError> {
    let pt = normalize::pre_tokenize(text);
    let words = pt.units.iter().filter(|u| u.kind == UnitKind::Word).count();
    if words == 0 {
        return Err(EncodeError::NoWords);
    }
    let encoding = encode(text, vocab)?;
    let mut by_shape = BTreeMap::new();
    for token in &encoding.tokens {
        *by_shape.entry(token.shape).or_insert(0) += 1;
    }
    Ok(FragmentationStats {
        tokens: encoding.tokens.len(),
        words,
        tokens_per_word: encoding.tokens.len() as f64 / words as f64,
        by_shape,
    })
}
