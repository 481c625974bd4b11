//! Segmentation-lattice dynamic programming over a piece inventory.
//!
//! A word of `n` characters induces a lattice whose nodes are the character
//! boundaries `0..=n` and whose edges are vocabulary pieces spanning
//! `(i, j)`. Everything here works in log space: `forward` computes the log
//! of the total probability over all segmentations, `marginals` the expected
//! piece counts (forward-backward), and `viterbi` the max-probability
//! segmentation with deterministic tie-breaking.

use std::collections::HashMap;

/// Read-only piece inventory: string -> (id, logprob).
pub trait PieceIndex {
    fn lookup(&self, piece: &str) -> Option<(u32, f64)>;
    /// Upper bound on piece length in characters; edges longer than this are
    /// never probed.
    fn max_piece_chars(&self) -> usize;
}

/// Plain map-backed index, used by the trainer while the vocabulary is in
/// flux and by tests.
pub struct MapIndex<'a> {
    pub map: &'a HashMap<String, (u32, f64)>,
    pub max_chars: usize,
}

impl PieceIndex for MapIndex<'_> {
    fn lookup(&self, piece: &str) -> Option<(u32, f64)> {
        self.map.get(piece).copied()
    }

    fn max_piece_chars(&self) -> usize {
        self.max_chars
    }
}

/// Byte offsets of the character boundaries of `word`, `0..=word.len()`.
pub fn char_boundaries(word: &str) -> Vec<usize> {
    let mut bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).collect();
    bounds.push(word.len());
    bounds
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Log of the total probability of all segmentations of `word`.
/// `None` when no segmentation has positive probability.
pub fn forward<P: PieceIndex>(word: &str, pieces: &P) -> Option<f64> {
    let bounds = char_boundaries(word);
    let n = bounds.len() - 1;
    if n == 0 {
        return Some(0.0);
    }
    let max_len = pieces.max_piece_chars();
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    let mut buf = Vec::with_capacity(max_len);
    for j in 1..=n {
        buf.clear();
        for i in j.saturating_sub(max_len)..j {
            if alpha[i] == f64::NEG_INFINITY {
                continue;
            }
            if let Some((_, lp)) = pieces.lookup(&word[bounds[i]..bounds[j]]) {
                buf.push(alpha[i] + lp);
            }
        }
        alpha[j] = log_sum_exp(&buf);
    }
    (alpha[n] != f64::NEG_INFINITY).then_some(alpha[n])
}

/// Forward-backward pass: adds `freq * P(piece used at (i, j) | word)` to
/// `counts[id]` for every lattice edge and returns the word's log-probability.
/// `None` when the word is not coverable.
pub fn marginals<P: PieceIndex>(
    word: &str,
    pieces: &P,
    freq: f64,
    counts: &mut [f64],
) -> Option<f64> {
    let bounds = char_boundaries(word);
    let n = bounds.len() - 1;
    if n == 0 {
        return Some(0.0);
    }
    let max_len = pieces.max_piece_chars();
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    let mut beta = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    beta[n] = 0.0;
    let mut buf = Vec::with_capacity(max_len);
    for j in 1..=n {
        buf.clear();
        for i in j.saturating_sub(max_len)..j {
            if alpha[i] == f64::NEG_INFINITY {
                continue;
            }
            if let Some((_, lp)) = pieces.lookup(&word[bounds[i]..bounds[j]]) {
                buf.push(alpha[i] + lp);
            }
        }
        alpha[j] = log_sum_exp(&buf);
    }
    let z = alpha[n];
    if z == f64::NEG_INFINITY {
        return None;
    }
    for i in (0..n).rev() {
        buf.clear();
        for j in i + 1..=(i + max_len).min(n) {
            if beta[j] == f64::NEG_INFINITY {
                continue;
            }
            if let Some((_, lp)) = pieces.lookup(&word[bounds[i]..bounds[j]]) {
                buf.push(lp + beta[j]);
            }
        }
        beta[i] = log_sum_exp(&buf);
    }
    for i in 0..n {
        if alpha[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in i + 1..=(i + max_len).min(n) {
            if beta[j] == f64::NEG_INFINITY {
                continue;
            }
            if let Some((id, lp)) = pieces.lookup(&word[bounds[i]..bounds[j]]) {
                let posterior = (alpha[i] + lp + beta[j] - z).exp();
                counts[id as usize] += freq * posterior;
            }
        }
    }
    Some(z)
}

/// Maximum-probability segmentation of `word` as piece ids, with its total
/// logprob. Ties are broken by fewest pieces, then by preferring the longer
/// piece at the first boundary where two candidates diverge.
pub fn viterbi<P: PieceIndex>(word: &str, pieces: &P) -> Option<(Vec<u32>, f64)> {
    let bounds = char_boundaries(word);
    let n = bounds.len() - 1;
    if n == 0 {
        return Some((Vec::new(), 0.0));
    }
    let max_len = pieces.max_piece_chars();
    // Per boundary: (score, piece count, start of last piece, id of last piece).
    let mut best: Vec<Option<(f64, u32, usize, u32)>> = vec![None; n + 1];
    best[0] = Some((0.0, 0, 0, 0));

    // Piece char-lengths of the best path ending at `j`, front to back.
    let path_lengths = |best: &[Option<(f64, u32, usize, u32)>], mut j: usize| -> Vec<usize> {
        let mut lens = Vec::new();
        while j > 0 {
            let (_, _, i, _) = best[j].expect("backpointer chain broken");
            lens.push(j - i);
            j = i;
        }
        lens.reverse();
        lens
    };

    for j in 1..=n {
        for i in j.saturating_sub(max_len)..j {
            let Some((prev_score, prev_count, _, _)) = best[i] else {
                continue;
            };
            if prev_score == f64::NEG_INFINITY {
                continue;
            }
            let Some((id, lp)) = pieces.lookup(&word[bounds[i]..bounds[j]]) else {
                continue;
            };
            let cand = (prev_score + lp, prev_count + 1, i, id);
            let replace = match best[j] {
                None => true,
                Some(cur) => {
                    if cand.0 != cur.0 {
                        cand.0 > cur.0
                    } else if cand.1 != cur.1 {
                        cand.1 < cur.1
                    } else {
                        // Leftmost-longest: lexicographically greater length
                        // sequence wins.
                        let mut a = path_lengths(&best, i);
                        a.push(j - i);
                        let mut b = path_lengths(&best, cur.2);
                        b.push(j - cur.2);
                        a > b
                    }
                }
            };
            if replace {
                best[j] = Some(cand);
            }
        }
    }

    let (score, _, _, _) = best[n]?;
    if score == f64::NEG_INFINITY {
        return None;
    }
    let mut ids = Vec::new();
    let mut j = n;
    while j > 0 {
        let (_, _, i, id) = best[j].unwrap();
        ids.push(id);
        j = i;
    }
    ids.reverse();
    Some((ids, score))
}

/// Log total probability of segmentations of `word`, resolved by piece count:
/// entry `k` is the log-sum over segmentations with exactly `k` pieces.
/// Entry 0 is kept for alignment and is always -inf for non-empty words.
pub fn forward_by_length<P: PieceIndex>(word: &str, pieces: &P) -> Vec<f64> {
    let bounds = char_boundaries(word);
    let n = bounds.len() - 1;
    if n == 0 {
        return vec![0.0];
    }
    let max_len = pieces.max_piece_chars();
    // alpha[j][k]: log mass of segmentations of the first j chars using k pieces.
    let mut alpha = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    alpha[0][0] = 0.0;
    let mut buf: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    for j in 1..=n {
        for b in buf.iter_mut() {
            b.clear();
        }
        for i in j.saturating_sub(max_len)..j {
            if let Some((_, lp)) = pieces.lookup(&word[bounds[i]..bounds[j]]) {
                for k in 1..=j {
                    if alpha[i][k - 1] != f64::NEG_INFINITY {
                        buf[k].push(alpha[i][k - 1] + lp);
                    }
                }
            }
        }
        for k in 1..=j {
            alpha[j][k] = log_sum_exp(&buf[k]);
        }
    }
    alpha[n].clone()
}

/// `forward` with one piece removed from the inventory and every remaining
/// logprob shifted by `shift` (used to score candidate removals under a
/// renormalized vocabulary).
pub fn forward_excluding<P: PieceIndex>(
    word: &str,
    pieces: &P,
    excluded: u32,
    shift: f64,
) -> Option<f64> {
    let bounds = char_boundaries(word);
    let n = bounds.len() - 1;
    if n == 0 {
        return Some(0.0);
    }
    let max_len = pieces.max_piece_chars();
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    let mut buf = Vec::with_capacity(max_len);
    for j in 1..=n {
        buf.clear();
        for i in j.saturating_sub(max_len)..j {
            if alpha[i] == f64::NEG_INFINITY {
                continue;
            }
            match pieces.lookup(&word[bounds[i]..bounds[j]]) {
                Some((id, _)) if id == excluded => {}
                Some((_, lp)) => buf.push(alpha[i] + lp + shift),
                None => {}
            }
        }
        alpha[j] = log_sum_exp(&buf);
    }
    (alpha[n] != f64::NEG_INFINITY).then_some(alpha[n])
}

/// Ids of all vocabulary pieces occurring anywhere in `word`.
pub fn pieces_in_word<P: PieceIndex>(word: &str, pieces: &P) -> Vec<u32> {
    let bounds = char_boundaries(word);
    let n = bounds.len() - 1;
    let max_len = pieces.max_piece_chars();
    let mut ids = Vec::new();
    for i in 0..n {
        for j in i + 1..=(i + max_len).min(n) {
            if let Some((id, _)) = pieces.lookup(&word[bounds[i]..bounds[j]]) {
                ids.push(id);
            }
        }
    }
    ids.sort_unstable();
    ids.dedup();
    ids
}
