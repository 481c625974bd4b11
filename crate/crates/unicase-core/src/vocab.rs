//! Surface vocabulary: one entry per (base piece, observed shape).
//!
//! Letter pieces always carry their lowercase entry; uppercase and titlecase
//! entries are added only when that shaped surface is actually observed in
//! the raw corpus, inside a chunk of the same shape. Pieces containing any
//! non-letter keep exactly one neutral entry. Surface entries carry no
//! probability of their own: segmentation always runs over base logprobs,
//! which is what makes encoding case-invariant.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::lattice::PieceIndex;
use crate::normalize::{self, apply_shape, classify_shape, Shape, ShapeClass, UnitKind};
use crate::trainer::BaseVocab;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: duplicate surface {surface:?}")]
    DuplicateSurface {
        path: String,
        line: usize,
        surface: String,
    },
    #[error("base piece {0} has no lowercase or neutral entry")]
    MissingBaseEntry(u32),
}

/// One surface entry of the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub surface: String,
    pub base_id: u32,
    pub shape: Shape,
}

/// Base vocabulary expanded with per-shape surface entries.
#[derive(Debug, Clone)]
pub struct UniCaseVocab {
    base: BaseVocab,
    entries: Vec<VocabEntry>,
    surface_index: HashMap<String, u32>,
    pair_index: HashMap<(u32, Shape), u32>,
    shapes_by_base: Vec<Vec<Shape>>,
}

/// Observations from `expand_variants` worth surfacing to the caller.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpandReport {
    /// Letter pieces that never occurred in the corpus; they still received
    /// their lowercase entry.
    pub unobserved_pieces: Vec<String>,
}

impl UniCaseVocab {
    fn from_parts(base: BaseVocab, entries: Vec<VocabEntry>) -> Result<UniCaseVocab, VocabError> {
        let mut surface_index = HashMap::with_capacity(entries.len());
        let mut pair_index = HashMap::with_capacity(entries.len());
        let mut shapes_by_base = vec![Vec::new(); base.len()];
        for (idx, entry) in entries.iter().enumerate() {
            if surface_index
                .insert(entry.surface.clone(), idx as u32)
                .is_some()
            {
                return Err(VocabError::DuplicateSurface {
                    path: "<memory>".into(),
                    line: 0,
                    surface: entry.surface.clone(),
                });
            }
            pair_index.insert((entry.base_id, entry.shape), idx as u32);
            shapes_by_base[entry.base_id as usize].push(entry.shape);
        }
        for (base_id, shapes) in shapes_by_base.iter().enumerate() {
            if !shapes.contains(&Shape::Lower) && !shapes.contains(&Shape::Neutral) {
                return Err(VocabError::MissingBaseEntry(base_id as u32));
            }
        }
        Ok(UniCaseVocab {
            base,
            entries,
            surface_index,
            pair_index,
            shapes_by_base,
        })
    }

    pub fn base(&self) -> &BaseVocab {
        &self.base
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn lookup_surface(&self, surface: &str) -> Option<(u32, Shape)> {
        self.surface_index.get(surface).map(|&idx| {
            (
                self.entries[idx as usize].base_id,
                self.entries[idx as usize].shape,
            )
        })
    }

    pub fn lookup_ids(&self, base_id: u32, shape: Shape) -> Option<&str> {
        self.pair_index
            .get(&(base_id, shape))
            .map(|&idx| self.entries[idx as usize].surface.as_str())
    }

    pub fn shapes_of(&self, base_id: u32) -> &[Shape] {
        self.shapes_by_base
            .get(base_id as usize)
            .map_or(&[], |s| s.as_slice())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#unicase-vocab v1 base={} entries={}",
            self.base.len(),
            self.entries.len()
        );
        for entry in &self.entries {
            let lp = self
                .base
                .logprob(entry.base_id)
                .expect("entry base_id in range");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                entry.surface,
                entry.base_id,
                entry.shape.letter(),
                lp
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        fs::write(path, self.to_tsv()).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_tsv(text: &str, path: &str) -> Result<UniCaseVocab, VocabError> {
        let parse_err = |line: usize, msg: String| VocabError::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let rest = header
            .strip_prefix("#unicase-vocab v1 base=")
            .ok_or_else(|| parse_err(1, format!("unrecognized header {header:?}")))?;
        let (n_base, n_entries) = rest
            .split_once(" entries=")
            .and_then(|(b, e)| Some((b.parse::<usize>().ok()?, e.parse::<usize>().ok()?)))
            .ok_or_else(|| parse_err(1, format!("unrecognized header {header:?}")))?;

        struct Row {
            line: usize,
            surface: String,
            base_id: u32,
            shape: Shape,
            logprob: f64,
        }
        let mut rows: Vec<Row> = Vec::with_capacity(n_entries);
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut fields = line.split('\t');
            let (surface, base_id, shape, logprob) = match (
                fields.next(),
                fields.next(),
                fields.next(),
                fields.next(),
                fields.next(),
            ) {
                (Some(s), Some(b), Some(sh), Some(lp), None) => (s, b, sh, lp),
                _ => {
                    return Err(parse_err(
                        lineno,
                        "expected surface<TAB>base_id<TAB>shape<TAB>base_logprob".into(),
                    ))
                }
            };
            let base_id: u32 = base_id
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad base_id: {e}")))?;
            if base_id as usize >= n_base {
                return Err(parse_err(
                    lineno,
                    format!("base_id {base_id} out of range (base={n_base})"),
                ));
            }
            let shape = match shape.chars().collect::<Vec<_>>()[..] {
                [c] => Shape::from_letter(c).ok_or_else(|| {
                    parse_err(lineno, format!("shape {shape:?} not in {{L,U,T,N}}"))
                })?,
                _ => {
                    return Err(parse_err(
                        lineno,
                        format!("shape {shape:?} not in {{L,U,T,N}}"),
                    ))
                }
            };
            let logprob: f64 = logprob
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad logprob: {e}")))?;
            rows.push(Row {
                line: lineno,
                surface: surface.to_string(),
                base_id,
                shape,
                logprob,
            });
        }
        if rows.len() != n_entries {
            return Err(parse_err(
                1,
                format!("header claims {} entries, found {}", n_entries, rows.len()),
            ));
        }

        // Base pieces are recovered from the identity-shape entries.
        let mut pieces: Vec<Option<(String, f64)>> = vec![None; n_base];
        for row in &rows {
            if matches!(row.shape, Shape::Lower | Shape::Neutral) {
                match &pieces[row.base_id as usize] {
                    None => pieces[row.base_id as usize] = Some((row.surface.clone(), row.logprob)),
                    Some((existing, _)) if *existing != row.surface => {
                        return Err(parse_err(
                            row.line,
                            format!("base {} has conflicting identity surfaces", row.base_id),
                        ))
                    }
                    Some(_) => {}
                }
            }
        }
        let pieces: Vec<(String, f64)> = pieces
            .into_iter()
            .enumerate()
            .map(|(id, p)| p.ok_or(VocabError::MissingBaseEntry(id as u32)))
            .collect::<Result<_, _>>()?;
        let base = BaseVocab::new(pieces)
            .map_err(|e| parse_err(0, format!("invalid base vocabulary: {e}")))?;

        let mut seen_surfaces: HashMap<&str, usize> = HashMap::new();
        for row in &rows {
            if let Some(_prev) = seen_surfaces.insert(row.surface.as_str(), row.line) {
                return Err(VocabError::DuplicateSurface {
                    path: path.to_string(),
                    line: row.line,
                    surface: row.surface.clone(),
                });
            }
            let piece = base.piece(row.base_id).expect("validated above");
            if apply_shape(piece, row.shape) != row.surface {
                return Err(parse_err(
                    row.line,
                    format!(
                        "surface {:?} is not piece {:?} rendered with shape {}",
                        row.surface,
                        piece,
                        row.shape.letter()
                    ),
                ));
            }
            let lp = base.logprob(row.base_id).expect("validated above");
            if lp.to_bits() != row.logprob.to_bits() {
                return Err(parse_err(
                    row.line,
                    format!("logprob {} disagrees with base entry {}", row.logprob, lp),
                ));
            }
        }

        let entries = rows
            .into_iter()
            .map(|row| VocabEntry {
                surface: row.surface,
                base_id: row.base_id,
                shape: row.shape,
            })
            .collect();
        UniCaseVocab::from_parts(base, entries)
    }

    pub fn load(path: &Path) -> Result<UniCaseVocab, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.display().to_string(),
            source,
        })?;
        UniCaseVocab::from_tsv(&text, &path.display().to_string())
    }
}

/// Count, per (base piece, shape), how often the shaped surface occurs in the
/// raw corpus as a sub-span of a chunk with that same shape. Chunk shapes are
/// canonical, so a single capital letter always counts as titlecase.
fn count_shaped_occurrences(
    base: &BaseVocab,
    corpus_text: &str,
) -> (HashMap<(u32, Shape), u64>, Vec<bool>) {
    // Distinct chunk surfaces with occurrence counts.
    let mut chunk_freq: HashMap<String, u64> = HashMap::new();
    let pt = normalize::pre_tokenize(corpus_text);
    for unit in &pt.units {
        match unit.kind {
            UnitKind::Word => {
                for chunk in normalize::chunk_word(&unit.text).expect("word units are non-empty") {
                    let surface = unit.text[chunk.span.0..chunk.span.1].to_string();
                    *chunk_freq.entry(surface).or_insert(0) += 1;
                }
            }
            UnitKind::Neutral => {
                *chunk_freq.entry(unit.text.clone()).or_insert(0) += 1;
            }
        }
    }
    let mut chunks: Vec<(String, u64)> = chunk_freq.into_iter().collect();
    chunks.sort_unstable();

    let mut counts: HashMap<(u32, Shape), u64> = HashMap::new();
    let mut seen = vec![false; base.len()];
    let max_len = base.max_piece_chars();
    for (surface, freq) in &chunks {
        let raw_chars: Vec<char> = surface.chars().collect();
        let folded_chars: Vec<char> = raw_chars.iter().flat_map(|c| c.to_lowercase()).collect();
        if folded_chars.len() != raw_chars.len() {
            // A character whose folding changes length cannot be aligned
            // span-by-span; such chunks contribute no variant counts.
            continue;
        }
        let n = raw_chars.len();
        for i in 0..n {
            for j in i + 1..=(i + max_len).min(n) {
                let piece: String = folded_chars[i..j].iter().collect();
                let Some((id, _)) = base.lookup(&piece) else {
                    continue;
                };
                seen[id as usize] = true;
                let raw_span: String = raw_chars[i..j].iter().collect();
                if let Ok(ShapeClass::Uniform(shape)) = classify_shape(&raw_span) {
                    if shape != Shape::Lower && shape != Shape::Neutral {
                        *counts.entry((id, shape)).or_insert(0) += freq;
                    }
                }
            }
        }
    }
    (counts, seen)
}

/// Expand a base vocabulary into surface entries using the raw (unfolded)
/// corpus: lowercase entries are unconditional, uppercase/titlecase entries
/// require at least `min_count` observations (values below 1 behave as 1),
/// and non-letter pieces get a single neutral entry.
pub fn expand_variants(
    base: BaseVocab,
    corpus_text: &str,
    min_count: u64,
) -> Result<(UniCaseVocab, ExpandReport), VocabError> {
    let threshold = min_count.max(1);
    let (counts, seen) = count_shaped_occurrences(&base, corpus_text);
    let mut entries = Vec::new();
    let mut report = ExpandReport::default();
    for id in 0..base.len() as u32 {
        let piece = base.piece(id).expect("id in range").to_string();
        if base.piece_is_letters(id) {
            if !seen[id as usize] {
                report.unobserved_pieces.push(piece.clone());
            }
            entries.push(VocabEntry {
                surface: piece.clone(),
                base_id: id,
                shape: Shape::Lower,
            });
            for shape in [Shape::Upper, Shape::Title] {
                if counts.get(&(id, shape)).copied().unwrap_or(0) >= threshold {
                    entries.push(VocabEntry {
                        surface: apply_shape(&piece, shape),
                        base_id: id,
                        shape,
                    });
                }
            }
        } else {
            entries.push(VocabEntry {
                surface: piece,
                base_id: id,
                shape: Shape::Neutral,
            });
        }
    }
    let vocab = UniCaseVocab::from_parts(base, entries)?;
    Ok((vocab, report))
}
