//! Parameter storage: a small row-major matrix type and the full set of
//! trainable tensors, with a deterministic named traversal used by the
//! optimizer, the gradient checker and the checkpoint format.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Matrix {
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            assert_eq!(row.len(), n_cols, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: rows.len(),
            cols: n_cols,
            data,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// self (n×m) · other (m×k) -> n×k
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(j);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self (n×m) · otherᵀ where other is (k×m) -> n×k
    pub fn matmul_transposed(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transposed shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        out
    }

    /// selfᵀ · other where self is (m×n), other (m×k) -> n×k
    pub fn transposed_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transposed_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let b_row = other.row(r);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Add `bias` to every row of `m`.
pub fn add_bias(m: &mut Matrix, bias: &[f64]) {
    assert_eq!(m.cols, bias.len());
    for r in 0..m.rows {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// All trainable tensors of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub base_embeddings: Matrix,
    pub case_embeddings: Matrix,
    pub positional_embeddings: Matrix,
    pub layers: Vec<LayerParams>,
    pub ln_f_gamma: Vec<f64>,
    pub ln_f_beta: Vec<f64>,
    pub base_head: Matrix,
    pub base_head_bias: Vec<f64>,
    pub case_head: Matrix,
    pub case_head_bias: Vec<f64>,
}

impl ModelParams {
    /// Random initialization: embeddings and projections from N(0, 0.02²),
    /// layer-norm gains at one, biases at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = move |rows: usize, cols: usize| -> Matrix {
            let mut m = Matrix::zeros(rows, cols);
            for v in m.data.iter_mut() {
                // Box-Muller on two uniform draws; keeps the dependency
                // surface to plain `rand`.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                *v = 0.02 * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            }
            m
        };
        let d = config.d_model;
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_gamma: vec![1.0; d],
                ln1_beta: vec![0.0; d],
                wq: normal(d, d),
                bq: vec![0.0; d],
                wk: normal(d, d),
                bk: vec![0.0; d],
                wv: normal(d, d),
                bv: vec![0.0; d],
                wo: normal(d, d),
                bo: vec![0.0; d],
                ln2_gamma: vec![1.0; d],
                ln2_beta: vec![0.0; d],
                w1: normal(d, config.d_ff),
                b1: vec![0.0; config.d_ff],
                w2: normal(config.d_ff, d),
                b2: vec![0.0; d],
            })
            .collect();
        ModelParams {
            base_embeddings: normal(config.base_vocab_size, d),
            case_embeddings: normal(config.n_shapes, d),
            positional_embeddings: normal(config.max_positions, d),
            layers,
            ln_f_gamma: vec![1.0; d],
            ln_f_beta: vec![0.0; d],
            base_head: normal(d, config.base_vocab_size),
            base_head_bias: vec![0.0; config.base_vocab_size],
            case_head: normal(d, config.n_shapes),
            case_head_bias: vec![0.0; config.n_shapes],
        }
    }

    /// Same shapes, all zeros; the gradient and momentum container.
    pub fn zeros_like(&self) -> ModelParams {
        let mut out = self.clone();
        out.for_each_tensor_mut(&mut |_, _, data| data.fill(0.0));
        out
    }

    /// Deterministic traversal of every tensor as (name, dims, values).
    pub fn for_each_tensor<'a>(&'a self, f: &mut impl FnMut(&str, &[usize], &'a [f64])) {
        let e = &self.base_embeddings;
        f("base_embeddings", &[e.rows, e.cols], &e.data);
        let e = &self.case_embeddings;
        f("case_embeddings", &[e.rows, e.cols], &e.data);
        let e = &self.positional_embeddings;
        f("positional_embeddings", &[e.rows, e.cols], &e.data);
        for (i, layer) in self.layers.iter().enumerate() {
            f(
                &format!("layer{i}.ln1_gamma"),
                &[layer.ln1_gamma.len()],
                &layer.ln1_gamma,
            );
            f(
                &format!("layer{i}.ln1_beta"),
                &[layer.ln1_beta.len()],
                &layer.ln1_beta,
            );
            f(
                &format!("layer{i}.wq"),
                &[layer.wq.rows, layer.wq.cols],
                &layer.wq.data,
            );
            f(&format!("layer{i}.bq"), &[layer.bq.len()], &layer.bq);
            f(
                &format!("layer{i}.wk"),
                &[layer.wk.rows, layer.wk.cols],
                &layer.wk.data,
            );
            f(&format!("layer{i}.bk"), &[layer.bk.len()], &layer.bk);
            f(
                &format!("layer{i}.wv"),
                &[layer.wv.rows, layer.wv.cols],
                &layer.wv.data,
            );
            f(&format!("layer{i}.bv"), &[layer.bv.len()], &layer.bv);
            f(
                &format!("layer{i}.wo"),
                &[layer.wo.rows, layer.wo.cols],
                &layer.wo.data,
            );
            f(&format!("layer{i}.bo"), &[layer.bo.len()], &layer.bo);
            f(
                &format!("layer{i}.ln2_gamma"),
                &[layer.ln2_gamma.len()],
                &layer.ln2_gamma,
            );
            f(
                &format!("layer{i}.ln2_beta"),
                &[layer.ln2_beta.len()],
                &layer.ln2_beta,
            );
            f(
                &format!("layer{i}.w1"),
                &[layer.w1.rows, layer.w1.cols],
                &layer.w1.data,
            );
            f(&format!("layer{i}.b1"), &[layer.b1.len()], &layer.b1);
            f(
                &format!("layer{i}.w2"),
                &[layer.w2.rows, layer.w2.cols],
                &layer.w2.data,
            );
            f(&format!("layer{i}.b2"), &[layer.b2.len()], &layer.b2);
        }
        f("ln_f_gamma", &[self.ln_f_gamma.len()], &self.ln_f_gamma);
        f("ln_f_beta", &[self.ln_f_beta.len()], &self.ln_f_beta);
        let e = &self.base_head;
        f("base_head", &[e.rows, e.cols], &e.data);
        f(
            "base_head_bias",
            &[self.base_head_bias.len()],
            &self.base_head_bias,
        );
        let e = &self.case_head;
        f("case_head", &[e.rows, e.cols], &e.data);
        f(
            "case_head_bias",
            &[self.case_head_bias.len()],
            &self.case_head_bias,
        );
    }

    /// Mutable traversal in the same order as [`Self::for_each_tensor`].
    pub fn for_each_tensor_mut(&mut self, f: &mut impl FnMut(&str, &[usize], &mut [f64])) {
        let e = &mut self.base_embeddings;
        f("base_embeddings", &[e.rows, e.cols], &mut e.data);
        let e = &mut self.case_embeddings;
        f("case_embeddings", &[e.rows, e.cols], &mut e.data);
        let e = &mut self.positional_embeddings;
        f("positional_embeddings", &[e.rows, e.cols], &mut e.data);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            f(
                &format!("layer{i}.ln1_gamma"),
                &[layer.ln1_gamma.len()],
                &mut layer.ln1_gamma,
            );
            f(
                &format!("layer{i}.ln1_beta"),
                &[layer.ln1_beta.len()],
                &mut layer.ln1_beta,
            );
            f(
                &format!("layer{i}.wq"),
                &[layer.wq.rows, layer.wq.cols],
                &mut layer.wq.data,
            );
            f(&format!("layer{i}.bq"), &[layer.bq.len()], &mut layer.bq);
            f(
                &format!("layer{i}.wk"),
                &[layer.wk.rows, layer.wk.cols],
                &mut layer.wk.data,
            );
            f(&format!("layer{i}.bk"), &[layer.bk.len()], &mut layer.bk);
            f(
                &format!("layer{i}.wv"),
                &[layer.wv.rows, layer.wv.cols],
                &mut layer.wv.data,
            );
            f(&format!("layer{i}.bv"), &[layer.bv.len()], &mut layer.bv);
            f(
                &format!("layer{i}.wo"),
                &[layer.wo.rows, layer.wo.cols],
                &mut layer.wo.data,
            );
            f(&format!("layer{i}.bo"), &[layer.bo.len()], &mut layer.bo);
            f(
                &format!("layer{i}.ln2_gamma"),
                &[layer.ln2_gamma.len()],
                &mut layer.ln2_gamma,
            );
            f(
                &format!("layer{i}.ln2_beta"),
                &[layer.ln2_beta.len()],
                &mut layer.ln2_beta,
            );
            f(
                &format!("layer{i}.w1"),
                &[layer.w1.rows, layer.w1.cols],
                &mut layer.w1.data,
            );
            f(&format!("layer{i}.b1"), &[layer.b1.len()], &mut layer.b1);
            f(
                &format!("layer{i}.w2"),
                &[layer.w2.rows, layer.w2.cols],
                &mut layer.w2.data,
            );
            f(&format!("layer{i}.b2"), &[layer.b2.len()], &mut layer.b2);
        }
        f("ln_f_gamma", &[self.ln_f_gamma.len()], &mut self.ln_f_gamma);
        f("ln_f_beta", &[self.ln_f_beta.len()], &mut self.ln_f_beta);
        let e = &mut self.base_head;
        f("base_head", &[e.rows, e.cols], &mut e.data);
        f(
            "base_head_bias",
            &[self.base_head_bias.len()],
            &mut self.base_head_bias,
        );
        let e = &mut self.case_head;
        f("case_head", &[e.rows, e.cols], &mut e.data);
        f(
            "case_head_bias",
            &[self.case_head_bias.len()],
            &mut self.case_head_bias,
        );
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |_, _, data| n += data.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(&mut |_, _, data| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }
}
