//! Forward and backward passes.
//!
//! The encoder is a pre-norm transformer stack over the composed input
//! embeddings (base + case + position). Two linear heads read the final
//! hidden states: one over base ids, one over the four shapes. All
//! arithmetic is f64 so finite-difference checks are meaningful.
//!
//! With `n_layers == 0` the heads read the composed embeddings directly
//! (no final layer norm), which keeps the degenerate configuration
//! hand-verifiable.

use crate::normalize::Shape;

use super::params::{add_bias, LayerParams, Matrix, ModelParams};
use super::{MaskedBatch, ModelConfig, ModelError};

const LN_EPS: f64 = 1e-5;

/// Input embedding: `out[p] = base[b_p] + case[s_p] + position[p]`.
pub fn compose_embeddings(
    inputs: &[(u32, Shape)],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Matrix, ModelError> {
    if inputs.len() > config.max_positions {
        return Err(ModelError::PositionOverflow {
            position: inputs.len() - 1,
            max_positions: config.max_positions,
        });
    }
    let d = config.d_model;
    let mut out = Matrix::zeros(inputs.len(), d);
    for (p, &(base_id, shape)) in inputs.iter().enumerate() {
        if base_id as usize >= config.base_vocab_size {
            return Err(ModelError::InvalidBaseId(base_id));
        }
        let base_row = params.base_embeddings.row(base_id as usize);
        let case_row = params.case_embeddings.row(shape.id());
        let pos_row = params.positional_embeddings.row(p);
        let row = out.row_mut(p);
        for i in 0..d {
            row[i] = base_row[i] + case_row[i] + pos_row[i];
        }
    }
    Ok(out)
}

struct LnCache {
    /// Normalized activations before gain/bias.
    y_hat: Matrix,
    rstd: Vec<f64>,
    out: Matrix,
}

fn layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> LnCache {
    let d = x.cols;
    let mut y_hat = Matrix::zeros(x.rows, d);
    let mut out = Matrix::zeros(x.rows, d);
    let mut rstd = vec![0.0; x.rows];
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for i in 0..d {
            let norm = (row[i] - mean) * rs;
            y_hat.row_mut(r)[i] = norm;
            out.row_mut(r)[i] = norm * gamma[i] + beta[i];
        }
    }
    LnCache { y_hat, rstd, out }
}

fn layer_norm_backward(
    cache: &LnCache,
    gamma: &[f64],
    d_out: &Matrix,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Matrix {
    let d = d_out.cols;
    let mut dx = Matrix::zeros(d_out.rows, d);
    for r in 0..d_out.rows {
        let dout_row = d_out.row(r);
        let y_row = cache.y_hat.row(r);
        let mut dy = vec![0.0; d];
        let mut mean_dy = 0.0;
        let mut mean_dy_y = 0.0;
        for i in 0..d {
            d_gamma[i] += dout_row[i] * y_row[i];
            d_beta[i] += dout_row[i];
            dy[i] = dout_row[i] * gamma[i];
            mean_dy += dy[i];
            mean_dy_y += dy[i] * y_row[i];
        }
        mean_dy /= d as f64;
        mean_dy_y /= d as f64;
        let rs = cache.rstd[r];
        let dx_row = dx.row_mut(r);
        for i in 0..d {
            dx_row[i] = rs * (dy[i] - mean_dy - y_row[i] * mean_dy_y);
        }
    }
    dx
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn extract_cols(m: &Matrix, start: usize, len: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows, len);
    for r in 0..m.rows {
        out.row_mut(r)
            .copy_from_slice(&m.row(r)[start..start + len]);
    }
    out
}

fn add_into_cols(dst: &mut Matrix, src: &Matrix, start: usize) {
    for r in 0..dst.rows {
        for c in 0..src.cols {
            dst.row_mut(r)[start + c] += src.row(r)[c];
        }
    }
}

fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct LayerCache {
    ln1: LnCache,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities per head, each positions×positions.
    probs: Vec<Matrix>,
    attn_concat: Matrix,
    x_mid: Matrix,
    ln2: LnCache,
    ff_pre: Matrix,
    ff_act: Matrix,
}

fn layer_forward(x_in: Matrix, layer: &LayerParams, config: &ModelConfig) -> LayerCache {
    let n = x_in.rows;
    let d = config.d_model;
    let n_heads = config.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let ln1 = layer_norm(&x_in, &layer.ln1_gamma, &layer.ln1_beta);
    let mut q = ln1.out.matmul(&layer.wq);
    add_bias(&mut q, &layer.bq);
    let mut k = ln1.out.matmul(&layer.wk);
    add_bias(&mut k, &layer.bk);
    let mut v = ln1.out.matmul(&layer.wv);
    add_bias(&mut v, &layer.bv);

    let mut probs = Vec::with_capacity(n_heads);
    let mut attn_concat = Matrix::zeros(n, d);
    for h in 0..n_heads {
        let qh = extract_cols(&q, h * dh, dh);
        let kh = extract_cols(&k, h * dh, dh);
        let vh = extract_cols(&v, h * dh, dh);
        let mut scores = qh.matmul_transposed(&kh);
        for val in scores.data.iter_mut() {
            *val *= scale;
        }
        softmax_rows(&mut scores);
        let oh = scores.matmul(&vh);
        add_into_cols(&mut attn_concat, &oh, h * dh);
        probs.push(scores);
    }
    let mut attn_out = attn_concat.matmul(&layer.wo);
    add_bias(&mut attn_out, &layer.bo);

    let mut x_mid = x_in.clone();
    x_mid.add_assign(&attn_out);

    let ln2 = layer_norm(&x_mid, &layer.ln2_gamma, &layer.ln2_beta);
    let mut ff_pre = ln2.out.matmul(&layer.w1);
    add_bias(&mut ff_pre, &layer.b1);
    let mut ff_act = ff_pre.clone();
    for v in ff_act.data.iter_mut() {
        *v = gelu(*v);
    }

    LayerCache {
        ln1,
        q,
        k,
        v,
        probs,
        attn_concat,
        x_mid,
        ln2,
        ff_pre,
        ff_act,
    }
}

fn layer_output(cache: &LayerCache, layer: &LayerParams) -> Matrix {
    let mut ff_out = cache.ff_act.matmul(&layer.w2);
    add_bias(&mut ff_out, &layer.b2);
    let mut x_out = cache.x_mid.clone();
    x_out.add_assign(&ff_out);
    x_out
}

/// Gradient w.r.t. the layer input; parameter gradients accumulate into `grads`.
fn layer_backward(
    cache: &LayerCache,
    layer: &LayerParams,
    grads: &mut LayerParams,
    d_x_out: &Matrix,
    config: &ModelConfig,
) -> Matrix {
    let d = config.d_model;
    let n_heads = config.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Feed-forward block: x_out = x_mid + W2·gelu(W1·ln2(x_mid) + b1) + b2.
    let mut d_ff_act = d_x_out.matmul_transposed(&layer.w2);
    grads
        .w2
        .add_assign(&cache.ff_act.transposed_matmul(d_x_out));
    for r in 0..d_x_out.rows {
        for (g, v) in grads.b2.iter_mut().zip(d_x_out.row(r)) {
            *g += v;
        }
    }
    for (dv, pre) in d_ff_act.data.iter_mut().zip(&cache.ff_pre.data) {
        *dv *= gelu_grad(*pre);
    }
    let d_ff_pre = d_ff_act;
    grads
        .w1
        .add_assign(&cache.ln2.out.transposed_matmul(&d_ff_pre));
    for r in 0..d_ff_pre.rows {
        for (g, v) in grads.b1.iter_mut().zip(d_ff_pre.row(r)) {
            *g += v;
        }
    }
    let d_ln2_out = d_ff_pre.matmul_transposed(&layer.w1);
    let mut d_x_mid = layer_norm_backward(
        &cache.ln2,
        &layer.ln2_gamma,
        &d_ln2_out,
        &mut grads.ln2_gamma,
        &mut grads.ln2_beta,
    );
    // Residual: gradient flows to x_mid both through the FFN and directly.
    d_x_mid.add_assign(d_x_out);

    // Attention block: x_mid = x_in + Wo·attn(ln1(x_in)) + bo.
    let d_attn_out = &d_x_mid;
    grads
        .wo
        .add_assign(&cache.attn_concat.transposed_matmul(d_attn_out));
    for r in 0..d_attn_out.rows {
        for (g, v) in grads.bo.iter_mut().zip(d_attn_out.row(r)) {
            *g += v;
        }
    }
    let d_concat = d_attn_out.matmul_transposed(&layer.wo);

    let mut d_q = Matrix::zeros(d_concat.rows, d);
    let mut d_k = Matrix::zeros(d_concat.rows, d);
    let mut d_v = Matrix::zeros(d_concat.rows, d);
    for h in 0..n_heads {
        let probs = &cache.probs[h];
        let kh = extract_cols(&cache.k, h * dh, dh);
        let qh = extract_cols(&cache.q, h * dh, dh);
        let vh = extract_cols(&cache.v, h * dh, dh);
        let d_oh = extract_cols(&d_concat, h * dh, dh);
        let d_probs = d_oh.matmul_transposed(&vh);
        let d_vh = probs.transposed_matmul(&d_oh);
        // Softmax backward, row-wise.
        let mut d_scores = Matrix::zeros(probs.rows, probs.cols);
        for r in 0..probs.rows {
            let p_row = probs.row(r);
            let dp_row = d_probs.row(r);
            let dot: f64 = p_row.iter().zip(dp_row).map(|(p, dp)| p * dp).sum();
            let ds_row = d_scores.row_mut(r);
            for i in 0..p_row.len() {
                ds_row[i] = p_row[i] * (dp_row[i] - dot);
            }
        }
        for v in d_scores.data.iter_mut() {
            *v *= scale;
        }
        let d_qh = d_scores.matmul(&kh);
        let d_kh = d_scores.transposed_matmul(&qh);
        add_into_cols(&mut d_q, &d_qh, h * dh);
        add_into_cols(&mut d_k, &d_kh, h * dh);
        add_into_cols(&mut d_v, &d_vh, h * dh);
    }

    grads.wq.add_assign(&cache.ln1.out.transposed_matmul(&d_q));
    grads.wk.add_assign(&cache.ln1.out.transposed_matmul(&d_k));
    grads.wv.add_assign(&cache.ln1.out.transposed_matmul(&d_v));
    for r in 0..d_q.rows {
        for (g, v) in grads.bq.iter_mut().zip(d_q.row(r)) {
            *g += v;
        }
        for (g, v) in grads.bk.iter_mut().zip(d_k.row(r)) {
            *g += v;
        }
        for (g, v) in grads.bv.iter_mut().zip(d_v.row(r)) {
            *g += v;
        }
    }
    let mut d_ln1_out = d_q.matmul_transposed(&layer.wq);
    d_ln1_out.add_assign(&d_k.matmul_transposed(&layer.wk));
    d_ln1_out.add_assign(&d_v.matmul_transposed(&layer.wv));

    let mut d_x_in = layer_norm_backward(
        &cache.ln1,
        &layer.ln1_gamma,
        &d_ln1_out,
        &mut grads.ln1_gamma,
        &mut grads.ln1_beta,
    );
    d_x_in.add_assign(&d_x_mid);
    d_x_in
}

/// Logits of the two prediction heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub base_logits: Matrix,
    pub case_logits: Matrix,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    ln_f: Option<LnCache>,
    hidden: Matrix,
}

fn forward_cached(
    inputs: &[(u32, Shape)],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(ForwardOutput, ForwardCache), ModelError> {
    let x0 = compose_embeddings(inputs, params, config)?;
    if !x0.is_finite() {
        return Err(ModelError::NonFinite(0));
    }
    let mut x = x0;
    let mut layer_caches = Vec::with_capacity(params.layers.len());
    for (idx, layer) in params.layers.iter().enumerate() {
        let cache = layer_forward(x, layer, config);
        x = layer_output(&cache, layer);
        if !x.is_finite() {
            return Err(ModelError::NonFinite(idx + 1));
        }
        layer_caches.push(cache);
    }
    let (hidden, ln_f) = if params.layers.is_empty() {
        (x, None)
    } else {
        let ln = layer_norm(&x, &params.ln_f_gamma, &params.ln_f_beta);
        (ln.out.clone(), Some(ln))
    };
    let mut base_logits = hidden.matmul(&params.base_head);
    add_bias(&mut base_logits, &params.base_head_bias);
    let mut case_logits = hidden.matmul(&params.case_head);
    add_bias(&mut case_logits, &params.case_head_bias);
    if !base_logits.is_finite() || !case_logits.is_finite() {
        return Err(ModelError::NonFinite(params.layers.len() + 1));
    }
    Ok((
        ForwardOutput {
            base_logits,
            case_logits,
        },
        ForwardCache {
            layers: layer_caches,
            ln_f,
            hidden,
        },
    ))
}

/// Deterministic forward pass over one sequence.
pub fn forward(
    inputs: &[(u32, Shape)],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardOutput, ModelError> {
    forward_cached(inputs, params, config).map(|(out, _)| out)
}

/// Mean cross-entropies at the selected positions and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub base: f64,
    pub case: f64,
}

/// `total = base + alpha * case`, exactly as written.
pub fn combine_losses(base: f64, case: f64, alpha: f64) -> LossBreakdown {
    LossBreakdown {
        total: base + alpha * case,
        base,
        case,
    }
}

fn log_sum_exp_row(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Dual-task loss over the masked positions.
pub fn loss(
    output: &ForwardOutput,
    batch: &MaskedBatch,
    alpha: f64,
) -> Result<LossBreakdown, ModelError> {
    if batch.selected.is_empty() {
        return Err(ModelError::EmptyTargets);
    }
    let m = batch.selected.len() as f64;
    let mut base_sum = 0.0;
    let mut case_sum = 0.0;
    for (slot, &pos) in batch.selected.iter().enumerate() {
        let base_row = output.base_logits.row(pos);
        base_sum += log_sum_exp_row(base_row) - base_row[batch.target_base[slot] as usize];
        let case_row = output.case_logits.row(pos);
        case_sum += log_sum_exp_row(case_row) - case_row[batch.target_shape[slot].id()];
    }
    Ok(combine_losses(base_sum / m, case_sum / m, alpha))
}

/// Loss and analytic gradients for one batch.
pub fn backward(
    batch: &MaskedBatch,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(LossBreakdown, ModelParams), ModelError> {
    let (output, cache) = forward_cached(&batch.inputs, params, config)?;
    let breakdown = loss(&output, batch, config.alpha)?;
    let m = batch.selected.len() as f64;

    let mut grads = params.zeros_like();
    let n = batch.inputs.len();

    // Head gradients: softmax minus one-hot at selected rows, scaled by the
    // task weight over the selected count.
    let mut d_base_logits = Matrix::zeros(n, config.base_vocab_size);
    let mut d_case_logits = Matrix::zeros(n, config.n_shapes);
    for (slot, &pos) in batch.selected.iter().enumerate() {
        let row = output.base_logits.row(pos);
        let lse = log_sum_exp_row(row);
        let d_row = d_base_logits.row_mut(pos);
        for (i, &logit) in row.iter().enumerate() {
            d_row[i] = (logit - lse).exp() / m;
        }
        d_row[batch.target_base[slot] as usize] -= 1.0 / m;

        let row = output.case_logits.row(pos);
        let lse = log_sum_exp_row(row);
        let d_row = d_case_logits.row_mut(pos);
        for (i, &logit) in row.iter().enumerate() {
            d_row[i] = config.alpha * (logit - lse).exp() / m;
        }
        d_row[batch.target_shape[slot].id()] -= config.alpha / m;
    }

    grads
        .base_head
        .add_assign(&cache.hidden.transposed_matmul(&d_base_logits));
    grads
        .case_head
        .add_assign(&cache.hidden.transposed_matmul(&d_case_logits));
    for r in 0..n {
        for (g, v) in grads.base_head_bias.iter_mut().zip(d_base_logits.row(r)) {
            *g += v;
        }
        for (g, v) in grads.case_head_bias.iter_mut().zip(d_case_logits.row(r)) {
            *g += v;
        }
    }
    let mut d_hidden = d_base_logits.matmul_transposed(&params.base_head);
    d_hidden.add_assign(&d_case_logits.matmul_transposed(&params.case_head));

    let mut d_x = match &cache.ln_f {
        Some(ln) => layer_norm_backward(
            ln,
            &params.ln_f_gamma,
            &d_hidden,
            &mut grads.ln_f_gamma,
            &mut grads.ln_f_beta,
        ),
        None => d_hidden,
    };

    for (idx, layer_cache) in cache.layers.iter().enumerate().rev() {
        d_x = layer_backward(
            layer_cache,
            &params.layers[idx],
            &mut grads.layers[idx],
            &d_x,
            config,
        );
    }

    // Embedding scatter: the composed input is a plain sum, so the gradient
    // adds into each participating row.
    for (p, &(base_id, shape)) in batch.inputs.iter().enumerate() {
        let d_row = d_x.row(p);
        for (g, v) in grads
            .base_embeddings
            .row_mut(base_id as usize)
            .iter_mut()
            .zip(d_row)
        {
            *g += v;
        }
        for (g, v) in grads
            .case_embeddings
            .row_mut(shape.id())
            .iter_mut()
            .zip(d_row)
        {
            *g += v;
        }
        for (g, v) in grads.positional_embeddings.row_mut(p).iter_mut().zip(d_row) {
            *g += v;
        }
    }
    Ok((breakdown, grads))
}

/// Loss only, used by finite differencing.
pub fn loss_only(
    batch: &MaskedBatch,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<LossBreakdown, ModelError> {
    let output = forward(&batch.inputs, params, config)?;
    loss(&output, batch, config.alpha)
}
