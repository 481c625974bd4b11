//! Small masked language model over `(base_id, shape)` token pairs.
//!
//! The input embedding of a token is the sum of its base-token embedding,
//! its case embedding and the positional embedding, so every case variant
//! of a word shares one semantic row. Masked prediction is decomposed into
//! a base-token task and a case task, combined as
//! `L = L_base + alpha * L_case`.

mod checkpoint;
mod gradcheck;
mod net;
mod params;

use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{self, EncodeError};
use crate::normalize::Shape;
use crate::vocab::UniCaseVocab;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use net::{
    backward, combine_losses, compose_embeddings, forward, loss, loss_only, ForwardOutput,
    LossBreakdown,
};
pub use params::{Matrix, ModelParams};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("position {position} exceeds max_positions {max_positions}")]
    PositionOverflow {
        position: usize,
        max_positions: usize,
    },
    #[error("base id {0} out of range")]
    InvalidBaseId(u32),
    #[error("non-finite activations at stage {0}")]
    NonFinite(usize),
    #[error("loss is undefined without masked positions")]
    EmptyTargets,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

/// Model dimensions and training-time policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    /// Size of the base embedding table, including the mask slot.
    pub base_vocab_size: usize,
    pub n_shapes: usize,
    pub mask_id: u32,
    /// Weight of the case loss.
    pub alpha: f64,
    pub mask_fraction: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
    pub keep_prob: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults around a given base vocabulary size; the mask slot
    /// is the last id.
    pub fn toy(base_vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_positions: 32,
            base_vocab_size,
            n_shapes: Shape::COUNT,
            mask_id: base_vocab_size.saturating_sub(1) as u32,
            alpha: 0.1,
            mask_fraction: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
            keep_prob: 0.1,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_shapes != Shape::COUNT {
            return fail(format!("n_shapes must be {}", Shape::COUNT));
        }
        if self.base_vocab_size == 0 || self.mask_id as usize >= self.base_vocab_size {
            return fail("mask_id must lie inside the base vocabulary".into());
        }
        if self.alpha < 0.0 {
            return fail("alpha must be non-negative".into());
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return fail("mask_fraction must be in (0, 1]".into());
        }
        let split = self.mask_prob + self.random_prob + self.keep_prob;
        if (split - 1.0).abs() > 1e-9 {
            return fail(format!(
                "mask/random/keep split sums to {split}, expected 1"
            ));
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        Ok(())
    }
}

/// A masked training example. Targets exist exactly at the selected
/// positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub inputs: Vec<(u32, Shape)>,
    /// Masked positions, ascending.
    pub selected: Vec<usize>,
    pub target_base: Vec<u32>,
    pub target_shape: Vec<Shape>,
}

/// Mask `ceil(mask_fraction * len)` positions. Of the selected positions,
/// `mask_prob` become the mask token with the neutral shape, `random_prob`
/// become a uniformly random token (letter pieces draw a random letter
/// shape), and the rest keep their surface. `is_letter[id]` says whether a
/// base id stands for an all-letter piece.
pub fn mlm_mask(
    tokens: &[(u32, Shape)],
    config: &ModelConfig,
    is_letter: &[bool],
    rng: &mut impl Rng,
) -> MaskedBatch {
    assert!(!tokens.is_empty(), "cannot mask an empty sequence");
    assert_eq!(
        is_letter.len(),
        config.base_vocab_size,
        "letter table size mismatch"
    );
    let n_select = ((tokens.len() as f64) * config.mask_fraction).ceil() as usize;
    let n_select = n_select.clamp(1, tokens.len());
    let mut selected = rand::seq::index::sample(rng, tokens.len(), n_select).into_vec();
    selected.sort_unstable();

    let mut inputs = tokens.to_vec();
    let mut target_base = Vec::with_capacity(n_select);
    let mut target_shape = Vec::with_capacity(n_select);
    for &pos in &selected {
        let (orig_base, orig_shape) = tokens[pos];
        target_base.push(orig_base);
        target_shape.push(orig_shape);
        let u: f64 = rng.gen_range(0.0..1.0);
        if u < config.mask_prob {
            inputs[pos] = (config.mask_id, Shape::Neutral);
        } else if u < config.mask_prob + config.random_prob {
            let random_id = rng.gen_range(0..config.base_vocab_size as u32);
            let shape = if is_letter[random_id as usize] {
                match rng.gen_range(0..3u8) {
                    0 => Shape::Lower,
                    1 => Shape::Upper,
                    _ => Shape::Title,
                }
            } else {
                Shape::Neutral
            };
            inputs[pos] = (random_id, shape);
        }
    }
    MaskedBatch {
        inputs,
        selected,
        target_base,
        target_shape,
    }
}

/// Plain SGD with momentum.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<ModelParams>,
}

impl SgdMomentum {
    pub fn new(learning_rate: f64, momentum: f64) -> SgdMomentum {
        SgdMomentum {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        let mut grad_slices: Vec<&[f64]> = Vec::new();
        grads.for_each_tensor(&mut |_, _, data| grad_slices.push(data));
        let lr = self.learning_rate;
        let mu = self.momentum;
        let mut idx = 0;
        velocity.for_each_tensor_mut(&mut |_, _, vel| {
            let g = grad_slices[idx];
            idx += 1;
            for (v, &gi) in vel.iter_mut().zip(g) {
                *v = mu * *v - lr * gi;
            }
        });
        let mut vel_slices: Vec<&[f64]> = Vec::new();
        let velocity = self.velocity.as_ref().expect("velocity initialized above");
        velocity.for_each_tensor(&mut |_, _, data| vel_slices.push(data));
        let mut idx = 0;
        params.for_each_tensor_mut(&mut |_, _, p| {
            let v = vel_slices[idx];
            idx += 1;
            for (pi, &vi) in p.iter_mut().zip(v) {
                *pi += vi;
            }
        });
    }
}

/// One gradient-descent update on the dual-task loss.
pub fn train_step(
    batch: &MaskedBatch,
    params: &mut ModelParams,
    config: &ModelConfig,
    optimizer: &mut SgdMomentum,
) -> Result<LossBreakdown, ModelError> {
    let (breakdown, grads) = backward(batch, params, config)?;
    let mut bad: Option<String> = None;
    grads.for_each_tensor(&mut |name, _, data| {
        if bad.is_none() && data.iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
    });
    if let Some(name) = bad {
        return Err(ModelError::NonFiniteGradient(name));
    }
    optimizer.apply(params, &grads);
    Ok(breakdown)
}

/// Loss record of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub total: f64,
    pub base: f64,
    pub case: f64,
}

impl StepRecord {
    /// The training-log line format: `step<TAB>L_total<TAB>L_base<TAB>L_case`.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.step, self.total, self.base, self.case
        )
    }
}

/// Cycle through the sequences for `steps` updates, masking with the given
/// rng. Single-threaded and deterministic for a fixed seed.
pub fn train_loop(
    sequences: &[Vec<(u32, Shape)>],
    params: &mut ModelParams,
    config: &ModelConfig,
    optimizer: &mut SgdMomentum,
    is_letter: &[bool],
    steps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<StepRecord>, ModelError> {
    if sequences.is_empty() {
        return Err(ModelError::InvalidConfig("no training sequences".into()));
    }
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let seq = &sequences[step % sequences.len()];
        let batch = mlm_mask(seq, config, is_letter, rng);
        let breakdown = train_step(&batch, params, config, optimizer)?;
        records.push(StepRecord {
            step,
            total: breakdown.total,
            base: breakdown.base,
            case: breakdown.case,
        });
    }
    Ok(records)
}

/// Encode each non-empty corpus line into model tokens, remapping base ids
/// unchanged and truncating to `max_positions`. The mask slot is appended to
/// the id space by the caller's config.
pub fn encode_corpus_lines(
    text: &str,
    vocab: &UniCaseVocab,
    max_positions: usize,
) -> Result<Vec<Vec<(u32, Shape)>>, EncodeError> {
    let mut sequences = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let encoding = encoder::encode(line, vocab)?;
        if encoding.tokens.is_empty() {
            continue;
        }
        let seq: Vec<(u32, Shape)> = encoding
            .tokens
            .iter()
            .take(max_positions)
            .map(|t| (t.base_id, t.shape))
            .collect();
        sequences.push(seq);
    }
    Ok(sequences)
}

/// Letter-piece table for a vocabulary plus one trailing mask slot.
pub fn letter_flags(vocab: &UniCaseVocab) -> Vec<bool> {
    let base = vocab.base();
    let mut flags: Vec<bool> = (0..base.len() as u32)
        .map(|id| base.piece_is_letters(id))
        .collect();
    flags.push(false); // mask slot
    flags
}

/// Itemized trainable-parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub base_embedding: usize,
    pub case_embedding: usize,
    pub positional_embedding: usize,
    pub encoder: usize,
    pub heads: usize,
    pub total: usize,
}

impl ParamCount {
    pub fn embedding_total(&self) -> usize {
        self.base_embedding + self.case_embedding + self.positional_embedding
    }
}

/// Closed-form parameter counts for a config.
pub fn param_count(config: &ModelConfig) -> ParamCount {
    let d = config.d_model;
    let base_embedding = config.base_vocab_size * d;
    let case_embedding = config.n_shapes * d;
    let positional_embedding = config.max_positions * d;
    let per_layer = 2 * d            // ln1
        + 4 * (d * d + d)            // q/k/v/o projections with biases
        + 2 * d                      // ln2
        + d * config.d_ff + config.d_ff
        + config.d_ff * d + d;
    // The final layer norm is allocated even in the 0-layer configuration.
    let encoder = config.n_layers * per_layer + 2 * d;
    let heads =
        d * config.base_vocab_size + config.base_vocab_size + d * config.n_shapes + config.n_shapes;
    let total = base_embedding + case_embedding + positional_embedding + encoder + heads;
    ParamCount {
        base_embedding,
        case_embedding,
        positional_embedding,
        encoder,
        heads,
        total,
    }
}

/// Embedding cost of a conventional flat vocabulary of `surface_size` entries
/// at the same width.
pub fn flat_embedding_params(surface_size: usize, d_model: usize) -> usize {
    surface_size * d_model
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn letters(config: &ModelConfig) -> Vec<bool> {
        let mut flags = vec![true; config.base_vocab_size];
        flags[config.mask_id as usize] = false;
        flags
    }

    fn sample_batch(config: &ModelConfig, len: usize, seed: u64) -> MaskedBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens: Vec<(u32, Shape)> = (0..len)
            .map(|_| {
                let id = rng.gen_range(0..config.base_vocab_size as u32 - 1);
                let shape = Shape::from_id(rng.gen_range(0..3)).unwrap();
                (id, shape)
            })
            .collect();
        mlm_mask(&tokens, config, &letters(config), &mut rng)
    }

    #[test]
    fn compose_is_the_sum_of_three_rows() {
        let mut config = ModelConfig::toy(4);
        config.d_model = 3;
        config.n_heads = 1;
        config.n_layers = 0;
        let mut params = ModelParams::init(&config, 1);
        params.base_embeddings = Matrix::from_rows(&[
            &[1.0, 2.0, 3.0],
            &[4.0, 5.0, 6.0],
            &[7.0, 8.0, 9.0],
            &[0.0, 0.0, 0.0],
        ]);
        params.case_embeddings = Matrix::from_rows(&[
            &[0.1, 0.1, 0.1],
            &[0.2, 0.2, 0.2],
            &[0.3, 0.3, 0.3],
            &[0.4, 0.4, 0.4],
        ]);
        let mut pos = Matrix::zeros(config.max_positions, 3);
        pos.row_mut(0).copy_from_slice(&[10.0, 20.0, 30.0]);
        pos.row_mut(1).copy_from_slice(&[40.0, 50.0, 60.0]);
        params.positional_embeddings = pos;

        let x =
            compose_embeddings(&[(1, Shape::Lower), (2, Shape::Upper)], &params, &config).unwrap();
        assert_eq!(
            x.row(0),
            &[4.0 + 0.1 + 10.0, 5.0 + 0.1 + 20.0, 6.0 + 0.1 + 30.0]
        );
        assert_eq!(
            x.row(1),
            &[7.0 + 0.2 + 40.0, 8.0 + 0.2 + 50.0, 9.0 + 0.2 + 60.0]
        );
    }

    #[test]
    fn compose_zero_tables_reduce_to_base_rows() {
        let config = ModelConfig::toy(5);
        let mut params = ModelParams::init(&config, 3);
        params.case_embeddings = Matrix::zeros(4, config.d_model);
        params.positional_embeddings = Matrix::zeros(config.max_positions, config.d_model);
        let x = compose_embeddings(&[(2, Shape::Title), (4, Shape::Neutral)], &params, &config)
            .unwrap();
        assert_eq!(x.row(0), params.base_embeddings.row(2));
        assert_eq!(x.row(1), params.base_embeddings.row(4));
    }

    #[test]
    fn compose_shape_swap_differs_by_case_rows() {
        let config = ModelConfig::toy(6);
        let params = ModelParams::init(&config, 5);
        let lower = compose_embeddings(&[(3, Shape::Lower)], &params, &config).unwrap();
        let upper = compose_embeddings(&[(3, Shape::Upper)], &params, &config).unwrap();
        let case_l = params.case_embeddings.row(Shape::Lower.id());
        let case_u = params.case_embeddings.row(Shape::Upper.id());
        for i in 0..config.d_model {
            let diff = upper.row(0)[i] - lower.row(0)[i];
            assert!((diff - (case_u[i] - case_l[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn compose_rejects_position_overflow() {
        let mut config = ModelConfig::toy(4);
        config.max_positions = 2;
        let params = ModelParams::init(&config, 1);
        let inputs = vec![(0, Shape::Lower); 3];
        assert!(matches!(
            compose_embeddings(&inputs, &params, &config),
            Err(ModelError::PositionOverflow { .. })
        ));
    }

    #[test]
    fn forward_without_layers_is_heads_on_embeddings() {
        let mut config = ModelConfig::toy(6);
        config.n_layers = 0;
        let params = ModelParams::init(&config, 9);
        let inputs = vec![(1, Shape::Lower), (2, Shape::Upper)];
        let out = forward(&inputs, &params, &config).unwrap();
        let x = compose_embeddings(&inputs, &params, &config).unwrap();
        let mut expect = x.matmul(&params.base_head);
        crate::model::params::add_bias(&mut expect, &params.base_head_bias);
        assert_eq!(out.base_logits, expect);
    }

    #[test]
    fn forward_shapes() {
        let config = ModelConfig::toy(100);
        let params = ModelParams::init(&config, 2);
        let inputs = vec![(5, Shape::Lower); 7];
        let out = forward(&inputs, &params, &config).unwrap();
        assert_eq!((out.base_logits.rows, out.base_logits.cols), (7, 100));
        assert_eq!((out.case_logits.rows, out.case_logits.cols), (7, 4));
    }

    #[test]
    fn forward_permutation_equivariant_without_positions() {
        let config = ModelConfig::toy(10);
        let mut params = ModelParams::init(&config, 11);
        params.positional_embeddings = Matrix::zeros(config.max_positions, config.d_model);
        let a = vec![(1, Shape::Lower), (7, Shape::Upper), (3, Shape::Title)];
        let b = vec![(3, Shape::Title), (7, Shape::Upper), (1, Shape::Lower)];
        let out_a = forward(&a, &params, &config).unwrap();
        let out_b = forward(&b, &params, &config).unwrap();
        for i in 0..a.len() {
            let j = a.len() - 1 - i;
            for c in 0..config.base_vocab_size {
                assert!((out_a.base_logits.row(i)[c] - out_b.base_logits.row(j)[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn loss_combination_is_exact() {
        let b = combine_losses(2.0, 0.5, 0.1);
        assert_eq!(b.total, 2.05);
        let b = combine_losses(3.7, 1.9, 0.0);
        assert_eq!(b.total, b.base);
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let batch = MaskedBatch {
            inputs: vec![(0, Shape::Lower); 3],
            selected: vec![0, 2],
            target_base: vec![4, 9],
            target_shape: vec![Shape::Lower, Shape::Upper],
        };
        let output = ForwardOutput {
            base_logits: Matrix::zeros(3, 100),
            case_logits: Matrix::zeros(3, 4),
        };
        let b = loss(&output, &batch, 0.1).unwrap();
        assert!((b.base - (100f64).ln()).abs() < 1e-12);
        assert!((b.case - (4f64).ln()).abs() < 1e-12);
        assert!((b.total - (b.base + 0.1 * b.case)).abs() == 0.0);
    }

    #[test]
    fn loss_requires_targets() {
        let output = ForwardOutput {
            base_logits: Matrix::zeros(1, 4),
            case_logits: Matrix::zeros(1, 4),
        };
        let batch = MaskedBatch {
            inputs: vec![(0, Shape::Lower)],
            selected: vec![],
            target_base: vec![],
            target_shape: vec![],
        };
        assert!(matches!(
            loss(&output, &batch, 0.1),
            Err(ModelError::EmptyTargets)
        ));
    }

    #[test]
    fn mask_everything_extreme() {
        let mut config = ModelConfig::toy(10);
        config.mask_fraction = 1.0;
        config.mask_prob = 1.0;
        config.random_prob = 0.0;
        config.keep_prob = 0.0;
        let tokens: Vec<(u32, Shape)> = (0..6).map(|i| (i, Shape::Lower)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = mlm_mask(&tokens, &config, &letters(&config), &mut rng);
        assert_eq!(batch.selected.len(), 6);
        assert!(batch
            .inputs
            .iter()
            .all(|&(id, s)| id == config.mask_id && s == Shape::Neutral));
        assert_eq!(batch.target_base, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn mask_is_deterministic_per_seed() {
        let config = ModelConfig::toy(50);
        let tokens: Vec<(u32, Shape)> = (0..40).map(|i| (i % 49, Shape::Lower)).collect();
        let a = mlm_mask(
            &tokens,
            &config,
            &letters(&config),
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        let b = mlm_mask(
            &tokens,
            &config,
            &letters(&config),
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn mask_fraction_monte_carlo() {
        let config = ModelConfig::toy(50);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut total = 0usize;
        let mut selected = 0usize;
        while total < 100_000 {
            let len = rng.gen_range(100..200);
            let tokens: Vec<(u32, Shape)> =
                (0..len).map(|i| (i as u32 % 49, Shape::Lower)).collect();
            let batch = mlm_mask(&tokens, &config, &letters(&config), &mut rng);
            total += len;
            selected += batch.selected.len();
        }
        let fraction = selected as f64 / total as f64;
        assert!(
            (fraction - 0.15).abs() < 0.01,
            "selected fraction {fraction} not within 1% of 0.15"
        );
    }

    #[test]
    fn masked_positions_use_neutral_case() {
        let mut config = ModelConfig::toy(30);
        config.mask_prob = 1.0;
        config.random_prob = 0.0;
        config.keep_prob = 0.0;
        let tokens: Vec<(u32, Shape)> = (0..20).map(|i| (i, Shape::Upper)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = mlm_mask(&tokens, &config, &letters(&config), &mut rng);
        for &pos in &batch.selected {
            assert_eq!(batch.inputs[pos], (config.mask_id, Shape::Neutral));
        }
        // Unselected positions are untouched.
        for (pos, tok) in batch.inputs.iter().enumerate() {
            if !batch.selected.contains(&pos) {
                assert_eq!(*tok, tokens[pos]);
            }
        }
    }

    #[test]
    fn train_step_zero_learning_rate_is_identity() {
        let config = ModelConfig::toy(20);
        let mut params = ModelParams::init(&config, 3);
        let before = params.clone();
        let batch = sample_batch(&config, 10, 1);
        let mut opt = SgdMomentum::new(0.0, 0.9);
        train_step(&batch, &mut params, &config, &mut opt).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn repeated_step_on_one_batch_reduces_loss() {
        let config = ModelConfig::toy(20);
        let mut params = ModelParams::init(&config, 3);
        let batch = sample_batch(&config, 12, 7);
        let mut opt = SgdMomentum::new(0.1, 0.9);
        let first = train_step(&batch, &mut params, &config, &mut opt).unwrap();
        let mut last = first;
        for _ in 0..20 {
            last = train_step(&batch, &mut params, &config, &mut opt).unwrap();
        }
        assert!(
            last.total < first.total,
            "loss did not decrease: {} -> {}",
            first.total,
            last.total
        );
    }

    #[test]
    fn alpha_zero_leaves_case_head_untrained() {
        let mut config = ModelConfig::toy(20);
        config.alpha = 0.0;
        let params = ModelParams::init(&config, 3);
        let batch = sample_batch(&config, 10, 2);
        let (breakdown, grads) = backward(&batch, &params, &config).unwrap();
        assert_eq!(breakdown.total, breakdown.base);
        assert!(grads.case_head.data.iter().all(|g| *g == 0.0));
        assert!(grads.case_head_bias.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn unused_shapes_get_zero_case_embedding_gradient() {
        let config = ModelConfig::toy(20);
        let params = ModelParams::init(&config, 3);
        // Shape::Title (id 2) never appears in inputs.
        let batch = MaskedBatch {
            inputs: vec![
                (1, Shape::Lower),
                (2, Shape::Upper),
                (config.mask_id, Shape::Neutral),
            ],
            selected: vec![2],
            target_base: vec![3],
            target_shape: vec![Shape::Lower],
        };
        let (_, grads) = backward(&batch, &params, &config).unwrap();
        let title_row = grads.case_embeddings.row(Shape::Title.id());
        assert!(title_row.iter().all(|g| *g == 0.0));
        let lower_row = grads.case_embeddings.row(Shape::Lower.id());
        assert!(lower_row.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn train_loop_is_deterministic() {
        let config = ModelConfig::toy(20);
        let sequences: Vec<Vec<(u32, Shape)>> = (0..5)
            .map(|s| {
                (0..10)
                    .map(|i| (((s * 3 + i) % 19) as u32, Shape::Lower))
                    .collect()
            })
            .collect();
        let flags = letters(&config);
        let run = || {
            let mut params = ModelParams::init(&config, config.seed);
            let mut opt = SgdMomentum::new(0.05, 0.9);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            train_loop(
                &sequences,
                &mut params,
                &config,
                &mut opt,
                &flags,
                30,
                &mut rng,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "loss trajectory must be bit-identical");
    }

    #[test]
    fn param_count_toy_arithmetic() {
        let mut config = ModelConfig::toy(100);
        config.d_model = 16;
        config.max_positions = 32;
        config.n_layers = 0;
        let counts = param_count(&config);
        assert_eq!(counts.embedding_total(), (100 + 4 + 32) * 16);
        assert_eq!(flat_embedding_params(280, 16), 280 * 16);
    }

    #[test]
    fn param_count_matches_actual_tensors() {
        for layers in [0, 1, 2] {
            let mut config = ModelConfig::toy(23);
            config.n_layers = layers;
            let params = ModelParams::init(&config, 0);
            assert_eq!(
                param_count(&config).total,
                params.n_params(),
                "layers = {layers}"
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut config = ModelConfig::toy(10);
        assert!(config.validate().is_ok());
        config.n_heads = 3;
        assert!(config.validate().is_err());
        let mut config = ModelConfig::toy(10);
        config.mask_id = 10;
        assert!(config.validate().is_err());
        let mut config = ModelConfig::toy(10);
        config.mask_prob = 0.5;
        assert!(config.validate().is_err());
    }
}
