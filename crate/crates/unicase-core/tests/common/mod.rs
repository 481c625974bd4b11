//! Shared test support: brute-force segmentation oracles that stay
//! independent of the lattice implementation, and deterministic synthetic
//! corpora.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unicase_core::trainer::BaseVocab;

/// Pieces with plain probabilities, the oracle-side vocabulary view.
pub type OraclePieces = Vec<(String, f64)>;

pub const ALPHABET: [char; 3] = ['a', 'b', 'c'];

/// Random vocabulary of at most `max_pieces` pieces over [`ALPHABET`],
/// always containing the single characters, probabilities normalized.
pub fn random_pieces(rng: &mut ChaCha8Rng, max_pieces: usize) -> Vec<(String, f64)> {
    let mut pieces: Vec<String> = ALPHABET.iter().map(|c| c.to_string()).collect();
    let extra = rng.gen_range(0..=max_pieces.saturating_sub(ALPHABET.len()));
    while pieces.len() < ALPHABET.len() + extra {
        let len = rng.gen_range(2..=4usize);
        let piece: String = (0..len)
            .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
            .collect();
        if !pieces.contains(&piece) {
            pieces.push(piece);
        }
    }
    let weights: Vec<f64> = (0..pieces.len())
        .map(|_| rng.gen_range(0.05..1.0))
        .collect();
    let total: f64 = weights.iter().sum();
    pieces
        .into_iter()
        .zip(weights)
        .map(|(p, w)| (p, w / total))
        .collect()
}

pub fn random_word(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

pub fn to_vocab(pieces: &[(String, f64)]) -> BaseVocab {
    BaseVocab::new(pieces.iter().map(|(s, p)| (s.clone(), p.ln())).collect()).unwrap()
}

/// Every segmentation of `word` as (piece indexes, probability), found by
/// scanning the piece list at each position. Deliberately structured unlike
/// the production lattice: no hash lookups, no log-space arithmetic.
pub fn all_segmentations(word: &str, pieces: &[(String, f64)]) -> Vec<(Vec<usize>, f64)> {
    fn recur(
        chars: &[char],
        start: usize,
        pieces: &[(String, f64)],
        cur: &mut Vec<usize>,
        prob: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if start == chars.len() {
            out.push((cur.clone(), prob));
            return;
        }
        for (idx, (piece, p)) in pieces.iter().enumerate() {
            let piece_chars: Vec<char> = piece.chars().collect();
            if piece_chars.is_empty() || start + piece_chars.len() > chars.len() {
                continue;
            }
            if chars[start..start + piece_chars.len()] == piece_chars[..] {
                cur.push(idx);
                recur(chars, start + piece_chars.len(), pieces, cur, prob * p, out);
                cur.pop();
            }
        }
    }
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    recur(&chars, 0, pieces, &mut Vec::new(), 1.0, &mut out);
    out
}

/// Total probability over all segmentations.
pub fn oracle_total_prob(word: &str, pieces: &[(String, f64)]) -> f64 {
    all_segmentations(word, pieces).iter().map(|(_, p)| p).sum()
}

/// Highest single-segmentation probability.
pub fn oracle_best_prob(word: &str, pieces: &[(String, f64)]) -> Option<f64> {
    all_segmentations(word, pieces)
        .iter()
        .map(|(_, p)| *p)
        .max_by(|a, b| a.partial_cmp(b).expect("finite probs"))
}

/// Expected piece counts for one occurrence of `word`: posterior-weighted
/// usage over all segmentations.
pub fn oracle_marginals(word: &str, pieces: &[(String, f64)]) -> Option<Vec<f64>> {
    let segs = all_segmentations(word, pieces);
    let z: f64 = segs.iter().map(|(_, p)| p).sum();
    if z <= 0.0 {
        return None;
    }
    let mut counts = vec![0.0; pieces.len()];
    for (ids, p) in &segs {
        let w = p / z;
        for &id in ids {
            counts[id] += w;
        }
    }
    Some(counts)
}

/// Corpus log-likelihood by enumeration.
pub fn oracle_corpus_ll(words: &[(String, u64)], pieces: &[(String, f64)]) -> f64 {
    words
        .iter()
        .map(|(w, f)| *f as f64 * oracle_total_prob(w, pieces).ln())
        .sum()
}

/// Log-likelihood loss of removing piece `drop` with the survivors
/// renormalized, computed entirely by enumeration.
pub fn oracle_removal_loss(words: &[(String, u64)], pieces: &[(String, f64)], drop: usize) -> f64 {
    let p_drop = pieces[drop].1;
    let remaining: Vec<(String, f64)> = pieces
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != drop)
        .map(|(_, (s, p))| (s.clone(), p / (1.0 - p_drop)))
        .collect();
    oracle_corpus_ll(words, pieces) - oracle_corpus_ll(words, &remaining)
}

/// Word stems for synthetic corpora: all lowercase, ASCII, with heavy
/// substring overlap so subword training has something to find.
pub const STEMS: &[&str] = &[
    "the",
    "then",
    "there",
    "these",
    "other",
    "others",
    "another",
    "mother",
    "brother",
    "acknowledgement",
    "acknowledge",
    "know",
    "knowledge",
    "ledge",
    "edge",
    "cement",
    "word",
    "words",
    "world",
    "work",
    "worker",
    "working",
    "network",
    "networks",
    "token",
    "tokens",
    "tokenize",
    "case",
    "cases",
    "casing",
    "lower",
    "upper",
    "under",
    "over",
    "cover",
    "covers",
    "recover",
    "form",
    "forms",
    "format",
    "inform",
    "quick",
    "quicker",
    "brown",
    "fox",
    "jump",
    "jumps",
    "jumped",
    "lazy",
    "dog",
    "dogs",
    "zeal",
    "zebra",
    "exact",
    "extra",
    "vivid",
    "very",
    "every",
    "ever",
    "never",
    "even",
    "model",
    "models",
    "train",
    "trains",
    "training",
    "text",
    "texts",
    "context",
    "letter",
    "letters",
    "better",
    "matter",
    "little",
    "light",
    "might",
    "night",
    "right",
    "bright",
    "string",
    "strings",
    "spring",
    "strong",
    "street",
    "tree",
    "trees",
    "free",
    "three",
    "see",
    "seen",
    "queen",
    "quiet",
    "quite",
    "just",
    "joy",
    "yes",
    "yellow",
    "glow",
    "grow",
    "growth",
    "good",
    "hello",
    "help",
];

/// Smaller stem set for the pretraining corpus.
pub const SMALL_STEMS: &[&str] = &[
    "the", "other", "word", "case", "token", "lower", "upper", "text", "tree", "see", "dog", "fox",
    "run", "runs", "sun", "fun", "big", "bigger", "top", "stop", "light", "night", "go", "good",
    "glow",
];

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CorpusStyle {
    /// Sentence-initial titlecase, occasional titlecase and uppercase words.
    Natural,
    /// Uniformly random lower/title/upper per word; never mixed-case.
    RandomCased,
    /// Everything lowercase.
    AllLower,
}

/// Deterministic synthetic corpus: `n_lines` lines of `words_per_line` stems.
pub fn synthetic_corpus(
    stems: &[&str],
    n_lines: usize,
    words_per_line: usize,
    style: CorpusStyle,
    seed: u64,
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..n_lines {
        let mut line: Vec<String> = Vec::with_capacity(words_per_line);
        for w in 0..words_per_line {
            let stem = pick_stem(&mut rng, stems);
            let cased = match style {
                CorpusStyle::AllLower => stem.to_string(),
                CorpusStyle::Natural => {
                    let roll: f64 = rng.gen_range(0.0..1.0);
                    if w == 0 || roll < 0.10 {
                        title(stem)
                    } else if roll < 0.15 && stem.len() <= 6 {
                        // All-caps happens to short, acronym-like words;
                        // long caps forms stay out of distribution.
                        stem.to_uppercase()
                    } else {
                        stem.to_string()
                    }
                }
                CorpusStyle::RandomCased => match rng.gen_range(0..3u8) {
                    0 => stem.to_string(),
                    1 => title(stem),
                    _ => stem.to_uppercase(),
                },
            };
            line.push(cased);
        }
        out.push_str(&line.join(" "));
        out.push_str(".\n");
    }
    out
}

fn pick_stem<'a>(rng: &mut ChaCha8Rng, stems: &'a [&'a str]) -> &'a str {
    // Zipf-flavored pick: squaring the uniform variate favors early stems.
    let u: f64 = rng.gen_range(0.0..1.0);
    let idx = ((u * u) * stems.len() as f64) as usize;
    stems[idx.min(stems.len() - 1)]
}

pub fn title(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// The natural-cased training corpus shared by the tokenizer-level
/// acceptance checks: mostly lowercase prose with an uppercase pangram line
/// (so a cased baseline can cover A-Z) and a titlecase-heavy closing line.
pub fn natural_training_corpus() -> String {
    let mut corpus = synthetic_corpus(STEMS, 220, 8, CorpusStyle::Natural, 11);
    corpus.push_str("THE QUICK BROWN FOX JUMPS OVER THE LAZY DOG.\n");
    corpus.push_str("EXACT VIVID ZEBRA QUEEN JOY GLOW HELP YES.\n");
    corpus.push_str("Acknowledgement of the acknowledgement, the acknowledgement stands.\n");
    corpus
}
