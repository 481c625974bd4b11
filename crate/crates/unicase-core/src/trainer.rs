//! Unigram-LM vocabulary training over a word-frequency table.
//!
//! Training alternates EM estimation of piece probabilities with pruning
//! rounds that drop the pieces whose removal costs the least corpus
//! log-likelihood, until the vocabulary reaches its target size. Single
//! characters are never pruned, which keeps every corpus word segmentable.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::lattice::{self, PieceIndex};
use crate::normalize::{self, UnitKind};

/// Expected counts below this are treated as zero when renormalizing.
const COUNT_EPSILON: f64 = 1e-12;

/// Relative probability floor for single-character pieces. Characters must
/// keep a positive probability or coverage of unseen words breaks and no
/// piece whose removal falls back to characters could ever be pruned.
const CHAR_BACKSTOP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("degenerate E-step: expected counts are all zero")]
    DegenerateEStep,
    #[error("word {0:?} has no segmentation with positive probability")]
    UncoverableWord(String),
    #[error("duplicate piece {0:?}")]
    DuplicatePiece(String),
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
}

/// Unigram trainer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Final number of base pieces.
    pub target_base_size: usize,
    /// Number of seed candidates kept before EM starts.
    pub seed_size: usize,
    /// Fraction of the vocabulary kept per pruning round.
    pub shrink_factor: f64,
    /// EM iterations between pruning rounds.
    pub em_iterations_per_round: usize,
    /// Maximum piece length in characters.
    pub max_piece_length: usize,
}

impl TrainerConfig {
    pub fn new(target_base_size: usize) -> Self {
        TrainerConfig {
            target_base_size,
            seed_size: target_base_size.saturating_mul(10),
            shrink_factor: 0.75,
            em_iterations_per_round: 2,
            max_piece_length: 16,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.target_base_size == 0 {
            return Err(TrainError::InvalidConfig(
                "target_base_size must be positive".into(),
            ));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "shrink_factor must be in (0, 1), got {}",
                self.shrink_factor
            )));
        }
        if self.seed_size < self.target_base_size {
            return Err(TrainError::InvalidConfig(
                "seed_size must be at least target_base_size".into(),
            ));
        }
        if self.em_iterations_per_round == 0 {
            return Err(TrainError::InvalidConfig(
                "em_iterations_per_round must be positive".into(),
            ));
        }
        if self.max_piece_length == 0 {
            return Err(TrainError::InvalidConfig(
                "max_piece_length must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Stable hash of the config, recorded in vocab file headers.
    pub fn hash(&self) -> u64 {
        let mut repr = String::new();
        let _ = write!(
            repr,
            "target={};seed={};shrink={};em={};maxlen={}",
            self.target_base_size,
            self.seed_size,
            self.shrink_factor,
            self.em_iterations_per_round,
            self.max_piece_length
        );
        fnv1a64(repr.as_bytes())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// How raw text is reduced to trainer words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusCasing {
    /// Word units are chunked at case boundaries and case-folded; this is the
    /// input for a base vocabulary.
    Folded,
    /// Units are kept verbatim; this trains a conventional cased baseline.
    Raw,
}

/// Word-frequency table, the trainer input. Words are held in sorted order
/// so every pass over the corpus is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusTable {
    words: Vec<(String, u64)>,
}

impl CorpusTable {
    pub fn from_text(text: &str, casing: CorpusCasing) -> CorpusTable {
        let mut freq: HashMap<String, u64> = HashMap::new();
        let pt = normalize::pre_tokenize(text);
        for unit in &pt.units {
            match (casing, unit.kind) {
                (CorpusCasing::Folded, UnitKind::Word) => {
                    let chunks = normalize::chunk_word(&unit.text)
                        .expect("word units are non-empty by construction");
                    for chunk in chunks {
                        *freq.entry(chunk.base).or_insert(0) += 1;
                    }
                }
                _ => {
                    *freq.entry(unit.text.clone()).or_insert(0) += 1;
                }
            }
        }
        CorpusTable::from_counts(freq)
    }

    pub fn from_counts(freq: HashMap<String, u64>) -> CorpusTable {
        let mut words: Vec<(String, u64)> = freq.into_iter().collect();
        words.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        CorpusTable { words }
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.words.iter().map(|(w, f)| (w.as_str(), *f))
    }

    /// Every distinct character appearing in the corpus, sorted.
    pub fn char_inventory(&self) -> BTreeSet<char> {
        self.words.iter().flat_map(|(w, _)| w.chars()).collect()
    }
}

/// Subword inventory with log-probabilities; ids are positions in `pieces`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseVocab {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl PieceIndex for BaseVocab {
    fn lookup(&self, piece: &str) -> Option<(u32, f64)> {
        self.index
            .get(piece)
            .map(|&id| (id, self.pieces[id as usize].1))
    }

    fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }
}

impl BaseVocab {
    pub fn new(pieces: Vec<(String, f64)>) -> Result<BaseVocab, TrainError> {
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 1;
        for (id, (piece, _)) in pieces.iter().enumerate() {
            if index.insert(piece.clone(), id as u32).is_some() {
                return Err(TrainError::DuplicatePiece(piece.clone()));
            }
            max_piece_chars = max_piece_chars.max(piece.chars().count());
        }
        Ok(BaseVocab {
            pieces,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(|(p, _)| p.as_str())
    }

    pub fn logprob(&self, id: u32) -> Option<f64> {
        self.pieces.get(id as usize).map(|(_, lp)| *lp)
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.pieces.iter().map(|(p, lp)| (p.as_str(), *lp))
    }

    /// True when the piece consists entirely of letters.
    pub fn piece_is_letters(&self, id: u32) -> bool {
        self.piece(id)
            .is_some_and(|p| !p.is_empty() && p.chars().all(|c| c.is_alphabetic()))
    }

    /// Sum of piece probabilities; 1.0 for a normalized vocabulary.
    pub fn probability_sum(&self) -> f64 {
        self.pieces.iter().map(|(_, lp)| lp.exp()).sum()
    }

    pub fn to_tsv(&self, config_hash: u64) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#unicase-base-vocab v1 pieces={} config={:016x}",
            self.pieces.len(),
            config_hash
        );
        for (piece, logprob) in &self.pieces {
            let _ = writeln!(out, "{piece}\t{logprob}");
        }
        out
    }

    pub fn save(&self, path: &Path, config_hash: u64) -> Result<(), TrainError> {
        fs::write(path, self.to_tsv(config_hash)).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_tsv(text: &str, path: &str) -> Result<BaseVocab, TrainError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| TrainError::Parse {
            path: path.to_string(),
            line: 1,
            msg: "missing header".into(),
        })?;
        if !header.starts_with("#unicase-base-vocab v1 ") {
            return Err(TrainError::Parse {
                path: path.to_string(),
                line: 1,
                msg: format!("unrecognized header {header:?}"),
            });
        }
        let mut pieces = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (piece, logprob) = line.split_once('\t').ok_or_else(|| TrainError::Parse {
                path: path.to_string(),
                line: idx + 1,
                msg: "expected piece<TAB>logprob".into(),
            })?;
            let logprob: f64 = logprob.parse().map_err(|e| TrainError::Parse {
                path: path.to_string(),
                line: idx + 1,
                msg: format!("bad logprob: {e}"),
            })?;
            if let Some(first) = seen.insert(piece.to_string(), idx + 1) {
                return Err(TrainError::Parse {
                    path: path.to_string(),
                    line: idx + 1,
                    msg: format!("duplicate piece {piece:?} (first at line {first})"),
                });
            }
            pieces.push((piece.to_string(), logprob));
        }
        BaseVocab::new(pieces)
    }

    pub fn load(path: &Path) -> Result<BaseVocab, TrainError> {
        let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        BaseVocab::from_tsv(&text, &path.display().to_string())
    }
}

/// Candidate substrings of the corpus with occurrence counts weighted by word
/// frequency: the `seed_size` most frequent, plus every single character.
pub fn seed_vocabulary(
    corpus: &CorpusTable,
    config: &TrainerConfig,
) -> Result<Vec<(String, u64)>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for (word, freq) in corpus.iter() {
        let bounds = lattice::char_boundaries(word);
        let n = bounds.len() - 1;
        for i in 0..n {
            for j in i + 1..=(i + config.max_piece_length).min(n) {
                *counts
                    .entry(word[bounds[i]..bounds[j]].to_string())
                    .or_insert(0) += freq;
            }
        }
    }
    let mut candidates: Vec<(String, u64)> = counts.into_iter().collect();
    // Most frequent first; ties favor shorter, then lexicographic.
    candidates.sort_unstable_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| a.0.chars().count().cmp(&b.0.chars().count()))
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut selected: Vec<(String, u64)> = Vec::with_capacity(config.seed_size);
    let mut taken: BTreeSet<&str> = BTreeSet::new();
    for (piece, count) in candidates.iter() {
        if selected.len() >= config.seed_size {
            break;
        }
        selected.push((piece.clone(), *count));
        taken.insert(piece);
    }
    // Single characters are always part of the inventory.
    for (piece, count) in candidates.iter() {
        if piece.chars().count() == 1 && !taken.contains(piece.as_str()) {
            selected.push((piece.clone(), *count));
        }
    }
    Ok(selected)
}

fn vocab_from_counts(counts: Vec<(String, u64)>) -> Result<BaseVocab, TrainError> {
    let total: f64 = counts.iter().map(|(_, c)| *c as f64).sum();
    let log_total = total.ln();
    let pieces = counts
        .into_iter()
        .map(|(piece, count)| {
            let lp = (count as f64).ln() - log_total;
            (piece, lp)
        })
        .collect();
    BaseVocab::new(pieces)
}

/// Expected piece counts and corpus log-likelihood under the current vocab.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub expected_counts: Vec<f64>,
    pub log_likelihood: f64,
}

/// One forward-backward pass over the corpus.
pub fn e_step(corpus: &CorpusTable, vocab: &BaseVocab) -> Result<EStep, TrainError> {
    e_step_sharded(corpus, vocab, 1)
}

/// `e_step` over `shards` contiguous corpus shards. Shards may run on
/// separate threads; their partial counts are combined in shard order, so the
/// result is deterministic for a fixed shard count.
pub fn e_step_sharded(
    corpus: &CorpusTable,
    vocab: &BaseVocab,
    shards: usize,
) -> Result<EStep, TrainError> {
    let shards = shards.max(1);
    let words = &corpus.words;
    let run_shard = |chunk: &[(String, u64)]| -> Result<(Vec<f64>, f64), TrainError> {
        let mut counts = vec![0.0; vocab.len()];
        let mut ll = 0.0;
        for (word, freq) in chunk {
            match lattice::marginals(word, vocab, *freq as f64, &mut counts) {
                Some(z) => ll += *freq as f64 * z,
                None => return Err(TrainError::UncoverableWord(word.clone())),
            }
        }
        Ok((counts, ll))
    };

    let partials: Vec<Result<(Vec<f64>, f64), TrainError>> = if shards == 1 || words.len() < 2 {
        vec![run_shard(words)]
    } else {
        let chunk_size = words.len().div_ceil(shards);
        std::thread::scope(|scope| {
            let handles: Vec<_> = words
                .chunks(chunk_size)
                .map(|chunk| scope.spawn(move || run_shard(chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("E-step shard panicked"))
                .collect()
        })
    };

    let mut expected_counts = vec![0.0; vocab.len()];
    let mut log_likelihood = 0.0;
    for partial in partials {
        let (counts, ll) = partial?;
        for (acc, c) in expected_counts.iter_mut().zip(&counts) {
            *acc += c;
        }
        log_likelihood += ll;
    }
    Ok(EStep {
        expected_counts,
        log_likelihood,
    })
}

/// Renormalize: `p(piece) = count / sum(counts)`, with counts below 1e-12
/// treated as zero. The piece set is unchanged.
pub fn m_step(vocab: &BaseVocab, expected_counts: &[f64]) -> Result<BaseVocab, TrainError> {
    assert_eq!(
        expected_counts.len(),
        vocab.len(),
        "count vector does not match vocab"
    );
    if expected_counts.iter().any(|c| *c < 0.0) {
        return Err(TrainError::InvalidConfig("negative expected count".into()));
    }
    let mut clipped: Vec<f64> = expected_counts
        .iter()
        .map(|&c| if c < COUNT_EPSILON { 0.0 } else { c })
        .collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Err(TrainError::DegenerateEStep);
    }
    for (c, (piece, _)) in clipped.iter_mut().zip(&vocab.pieces) {
        if piece.chars().count() == 1 {
            *c = c.max(CHAR_BACKSTOP * total);
        }
    }
    let total: f64 = clipped.iter().sum();
    let log_total = total.ln();
    let pieces = vocab
        .pieces
        .iter()
        .zip(&clipped)
        .map(|((piece, _), &c)| {
            let lp = if c == 0.0 {
                f64::NEG_INFINITY
            } else {
                c.ln() - log_total
            };
            (piece.clone(), lp)
        })
        .collect();
    BaseVocab::new(pieces)
}

/// Drop the non-character pieces whose individual removal (with the rest of
/// the vocabulary renormalized) costs the least corpus log-likelihood, down
/// to `max(target, ceil(shrink_factor * |vocab|))` pieces. Single characters
/// are never removed.
pub fn prune(
    vocab: &BaseVocab,
    corpus: &CorpusTable,
    config: &TrainerConfig,
) -> Result<BaseVocab, TrainError> {
    if vocab.len() <= config.target_base_size {
        return Ok(vocab.clone());
    }
    let mut keep = config
        .target_base_size
        .max((config.shrink_factor * vocab.len() as f64).ceil() as usize);
    if keep >= vocab.len() {
        // The ceiling can reach |vocab| for small vocabularies; always make
        // progress. len > target here, so len - 1 still respects the target.
        keep = vocab.len() - 1;
    }
    let remove_target = vocab.len() - keep;

    // Per-word lattice summaries under the current vocabulary.
    let n_words = corpus.len();
    let mut z_current = vec![0.0; n_words];
    let mut by_length: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_words);
    let mut containing: HashMap<u32, Vec<usize>> = HashMap::new();
    for (w_idx, (word, _)) in corpus.iter().enumerate() {
        z_current[w_idx] = lattice::forward(word, vocab)
            .ok_or_else(|| TrainError::UncoverableWord(word.to_string()))?;
        let lengths = lattice::forward_by_length(word, vocab);
        by_length.push(
            lengths
                .into_iter()
                .enumerate()
                .filter(|(_, lp)| *lp != f64::NEG_INFINITY)
                .collect(),
        );
        for id in lattice::pieces_in_word(word, vocab) {
            containing.entry(id).or_default().push(w_idx);
        }
    }
    let freqs: Vec<f64> = corpus.iter().map(|(_, f)| f as f64).collect();
    let words: Vec<&str> = corpus.iter().map(|(w, _)| w).collect();

    // Log-likelihood of word w under the renormalized vocabulary V \ {x},
    // for words whose lattice does not use x: every k-piece segmentation
    // gains a factor (1 - p_x)^-k.
    let shifted = |w_idx: usize, t: f64| -> f64 {
        let terms = &by_length[w_idx];
        let m = terms
            .iter()
            .map(|(k, lp)| lp + *k as f64 * t)
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = terms
            .iter()
            .map(|(k, lp)| (lp + *k as f64 * t - m).exp())
            .sum();
        m + sum.ln()
    };

    let old_ll: f64 = (0..n_words).map(|w| freqs[w] * z_current[w]).sum();
    let mut candidates: Vec<(f64, u32)> = Vec::new();
    for id in 0..vocab.len() as u32 {
        if vocab.pieces[id as usize].0.chars().count() == 1 {
            continue;
        }
        let p = vocab.pieces[id as usize].1.exp();
        if p >= 1.0 {
            continue;
        }
        let t = -(-p).ln_1p();
        let mut new_ll = 0.0;
        for w_idx in 0..n_words {
            new_ll += freqs[w_idx] * shifted(w_idx, t);
        }
        let mut coverable = true;
        if let Some(word_ids) = containing.get(&id) {
            for &w_idx in word_ids {
                new_ll -= freqs[w_idx] * shifted(w_idx, t);
                match lattice::forward_excluding(words[w_idx], vocab, id, t) {
                    Some(z) => new_ll += freqs[w_idx] * z,
                    None => {
                        coverable = false;
                        break;
                    }
                }
            }
        }
        if !coverable {
            continue;
        }
        candidates.push((old_ll - new_ll, id));
    }

    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("pruning loss is never NaN")
            .then_with(|| {
                let pa = &vocab.pieces[a.1 as usize].0;
                let pb = &vocab.pieces[b.1 as usize].0;
                pa.chars()
                    .count()
                    .cmp(&pb.chars().count())
                    .then_with(|| pa.cmp(pb))
            })
    });
    let removed: BTreeSet<u32> = candidates
        .iter()
        .take(remove_target)
        .map(|(_, id)| *id)
        .collect();

    let kept: Vec<(String, f64)> = vocab
        .pieces
        .iter()
        .enumerate()
        .filter(|(id, _)| !removed.contains(&(*id as u32)))
        .map(|(_, (piece, lp))| (piece.clone(), *lp))
        .collect();
    // Renormalize the survivors.
    let max_lp = kept
        .iter()
        .map(|(_, lp)| *lp)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max_lp
        + kept
            .iter()
            .map(|(_, lp)| (lp - max_lp).exp())
            .sum::<f64>()
            .ln();
    let kept = kept
        .into_iter()
        .map(|(piece, lp)| (piece, lp - log_norm))
        .collect();
    BaseVocab::new(kept)
}

/// Log-likelihood trace of one EM round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub vocab_size: usize,
    pub log_likelihoods: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub vocab: BaseVocab,
    pub rounds: Vec<RoundReport>,
}

/// Full training run: seed, then alternate EM with pruning until the
/// vocabulary reaches the target size. Deterministic for a fixed corpus,
/// config and thread count.
pub fn train(corpus: &CorpusTable, config: &TrainerConfig) -> Result<TrainOutcome, TrainError> {
    train_with_threads(corpus, config, 1)
}

pub fn train_with_threads(
    corpus: &CorpusTable,
    config: &TrainerConfig,
    threads: usize,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let inventory = corpus.char_inventory().len();
    if config.target_base_size < inventory {
        return Err(TrainError::InvalidConfig(format!(
            "target_base_size {} is below the corpus character inventory {}",
            config.target_base_size, inventory
        )));
    }

    let seeds = seed_vocabulary(corpus, config)?;
    let mut vocab = vocab_from_counts(seeds)?;
    let mut rounds = Vec::new();
    loop {
        let mut lls = Vec::with_capacity(config.em_iterations_per_round);
        for _ in 0..config.em_iterations_per_round {
            let stats = e_step_sharded(corpus, &vocab, threads)?;
            vocab = m_step(&vocab, &stats.expected_counts)?;
            lls.push(stats.log_likelihood);
        }
        rounds.push(RoundReport {
            vocab_size: vocab.len(),
            log_likelihoods: lls,
        });
        if vocab.len() <= config.target_base_size {
            break;
        }
        let pruned = prune(&vocab, corpus, config)?;
        let stalled = pruned.len() == vocab.len();
        vocab = pruned;
        if stalled {
            // Every remaining candidate is load-bearing; stop above target
            // rather than spin.
            break;
        }
    }

    // Stable id assignment: by descending probability, ties lexicographic.
    let mut pieces = vocab.pieces;
    pieces.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("logprob is never NaN")
            .then_with(|| a.0.cmp(&b.0))
    });
    let vocab = BaseVocab::new(pieces)?;
    Ok(TrainOutcome { vocab, rounds })
}
