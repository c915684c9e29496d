use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::plan::{ExpansionPlan, TransformerSpec};
use super::BlockError;

const NORM_EPS: f64 = 1e-6;

/// One pre-norm decoder block: causal self-attention and a gated MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub mlp_norm: Array1<f64>,
    pub w_gate: Array2<f64>,
    pub w_up: Array2<f64>,
    pub w_down: Array2<f64>,
    pub biases: Option<BlockBiases>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockBiases {
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
    pub b_gate: Array1<f64>,
    pub b_up: Array1<f64>,
    pub b_down: Array1<f64>,
}

impl Block {
    fn random(spec: &TransformerSpec, rng: &mut ChaCha8Rng) -> Self {
        let (d, f) = (spec.d_model, spec.d_ffn);
        let mut mat = |r: usize, c: usize| {
            let scale = 1.0 / (r as f64).sqrt();
            Array2::from_shape_simple_fn((r, c), || rng.random_range(-scale..scale))
        };
        let (wq, wk, wv, wo) = (mat(d, d), mat(d, d), mat(d, d), mat(d, d));
        let (w_gate, w_up, w_down) = (mat(d, f), mat(d, f), mat(f, d));
        let mut vec = |n: usize, center: f64| Array1::from_shape_simple_fn(n, || center + rng.random_range(-0.1..0.1));
        let attn_norm = vec(d, 1.0);
        let mlp_norm = vec(d, 1.0);
        let biases = spec.bias.then(|| BlockBiases {
            bq: vec(d, 0.0),
            bk: vec(d, 0.0),
            bv: vec(d, 0.0),
            bo: vec(d, 0.0),
            b_gate: vec(f, 0.0),
            b_up: vec(f, 0.0),
            b_down: vec(d, 0.0),
        });
        Self { attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down, biases }
    }

    /// Copy whose residual-writing projections are zero.
    fn identity_copy(&self) -> Self {
        let mut b = self.clone();
        b.wo.fill(0.0);
        b.w_down.fill(0.0);
        if let Some(bias) = &mut b.biases {
            bias.bo.fill(0.0);
            bias.b_down.fill(0.0);
        }
        b
    }

    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("attn_norm", self.attn_norm.view().into_dyn()),
            ("wq", self.wq.view().into_dyn()),
            ("wk", self.wk.view().into_dyn()),
            ("wv", self.wv.view().into_dyn()),
            ("wo", self.wo.view().into_dyn()),
            ("mlp_norm", self.mlp_norm.view().into_dyn()),
            ("w_gate", self.w_gate.view().into_dyn()),
            ("w_up", self.w_up.view().into_dyn()),
            ("w_down", self.w_down.view().into_dyn()),
        ];
        if let Some(b) = &self.biases {
            out.extend([
                ("bq", b.bq.view().into_dyn()),
                ("bk", b.bk.view().into_dyn()),
                ("bv", b.bv.view().into_dyn()),
                ("bo", b.bo.view().into_dyn()),
                ("b_gate", b.b_gate.view().into_dyn()),
                ("b_up", b.b_up.view().into_dyn()),
                ("b_down", b.b_down.view().into_dyn()),
            ]);
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<ArrayViewMutD<'_, f64>> {
        let t = match name {
            "attn_norm" => self.attn_norm.view_mut().into_dyn(),
            "wq" => self.wq.view_mut().into_dyn(),
            "wk" => self.wk.view_mut().into_dyn(),
            "wv" => self.wv.view_mut().into_dyn(),
            "wo" => self.wo.view_mut().into_dyn(),
            "mlp_norm" => self.mlp_norm.view_mut().into_dyn(),
            "w_gate" => self.w_gate.view_mut().into_dyn(),
            "w_up" => self.w_up.view_mut().into_dyn(),
            "w_down" => self.w_down.view_mut().into_dyn(),
            _ => {
                let b = self.biases.as_mut()?;
                match name {
                    "bq" => b.bq.view_mut().into_dyn(),
                    "bk" => b.bk.view_mut().into_dyn(),
                    "bv" => b.bv.view_mut().into_dyn(),
                    "bo" => b.bo.view_mut().into_dyn(),
                    "b_gate" => b.b_gate.view_mut().into_dyn(),
                    "b_up" => b.b_up.view_mut().into_dyn(),
                    "b_down" => b.b_down.view_mut().into_dyn(),
                    _ => return None,
                }
            }
        };
        Some(t)
    }

    fn forward(&self, x: &mut Array2<f64>, n_heads: usize) {
        let b = self.biases.as_ref();
        let h = rms_norm(x, &self.attn_norm);
        let add = |m: Array2<f64>, bias: Option<&Array1<f64>>| match bias {
            Some(v) => m + v,
            None => m,
        };
        let q = add(h.dot(&self.wq), b.map(|b| &b.bq));
        let k = add(h.dot(&self.wk), b.map(|b| &b.bk));
        let v = add(h.dot(&self.wv), b.map(|b| &b.bv));
        let attn = causal_attention(&q, &k, &v, n_heads);
        *x += &add(attn.dot(&self.wo), b.map(|b| &b.bo));

        let h = rms_norm(x, &self.mlp_norm);
        let gate = add(h.dot(&self.w_gate), b.map(|b| &b.b_gate)).mapv(silu);
        let up = add(h.dot(&self.w_up), b.map(|b| &b.b_up));
        *x += &add((gate * up).dot(&self.w_down), b.map(|b| &b.b_down));
    }
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn rms_norm(x: &Array2<f64>, gain: &Array1<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + NORM_EPS).sqrt();
        row.zip_mut_with(gain, |v, g| *v *= inv * g);
    }
    out
}

fn causal_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, n_heads: usize) -> Array2<f64> {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        for i in 0..t {
            let scores: Vec<f64> = (0..=i).map(|j| qh.row(i).dot(&kh.row(j)) * scale).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = weights.iter().sum();
            let mut row = out.slice_mut(s![i, h * dh..(h + 1) * dh]);
            for (j, w) in weights.iter().enumerate() {
                row.scaled_add(w / z, &vh.row(j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub spec: TransformerSpec,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub final_norm: Array1<f64>,
    pub head: Array2<f64>,
    pub head_bias: Option<Array1<f64>>,
    /// One flag per block; every tensor of a flagged block is trainable,
    /// nothing outside the blocks is.
    pub trainable: Vec<bool>,
}

impl ToyModel {
    pub fn random(spec: TransformerSpec, seed: u64) -> Result<Self, BlockError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.d_model;
        let mut mat = |r: usize, c: usize, scale: f64| {
            Array2::from_shape_simple_fn((r, c), || rng.random_range(-scale..scale))
        };
        let tok_emb = mat(spec.vocab, d, 1.0);
        let pos_emb = mat(spec.max_seq, d, 0.5);
        let head = mat(d, spec.vocab, 1.0 / (d as f64).sqrt());
        let blocks = (0..spec.n_blocks).map(|_| Block::random(&spec, &mut rng)).collect();
        let final_norm = Array1::from_shape_simple_fn(d, || 1.0 + rng.random_range(-0.1..0.1));
        let head_bias = spec.bias.then(|| Array1::from_shape_simple_fn(spec.vocab, || rng.random_range(-0.1..0.1)));
        Ok(Self { spec, tok_emb, pos_emb, blocks, final_norm, head, head_bias, trainable: vec![false; spec.n_blocks] })
    }

    /// Every tensor as (name, shape, trainable).
    pub fn tensor_inventory(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.shape().to_vec(), false),
            ("pos_emb".to_string(), self.pos_emb.shape().to_vec(), false),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            for (name, t) in block.tensors() {
                out.push((format!("blocks.{i}.{name}"), t.shape().to_vec(), self.trainable[i]));
            }
        }
        out.push(("final_norm".to_string(), self.final_norm.shape().to_vec(), false));
        out.push(("head".to_string(), self.head.shape().to_vec(), false));
        if let Some(b) = &self.head_bias {
            out.push(("head_bias".to_string(), b.shape().to_vec(), false));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensor_inventory().iter().map(|(_, shape, _)| shape.iter().product::<usize>()).sum()
    }

    /// Inserts zero-output copies per `plan`; only the copies are trainable.
    pub fn expand(&self, plan: &ExpansionPlan) -> Result<Self, BlockError> {
        if plan.original_blocks != self.blocks.len() {
            return Err(BlockError::PlanMismatch { plan: plan.original_blocks, model: self.blocks.len() });
        }
        let mut blocks = Vec::with_capacity(plan.resulting_depth());
        let mut trainable = Vec::with_capacity(plan.resulting_depth());
        let mut sources = plan.source_indices.iter().peekable();
        for (i, block) in self.blocks.iter().enumerate() {
            blocks.push(block.clone());
            trainable.push(false);
            if sources.peek() == Some(&&i) {
                sources.next();
                blocks.push(block.identity_copy());
                trainable.push(true);
            }
        }
        debug_assert!(plan.insertion_indices.iter().all(|&k| trainable[k]));
        Ok(Self {
            spec: self.spec.with_blocks(blocks.len()),
            blocks,
            trainable,
            ..self.clone()
        })
    }

    /// Logits of shape `(tokens.len(), vocab)`.
    pub fn forward(&self, tokens: &[u32]) -> Result<Array2<f64>, BlockError> {
        if tokens.len() > self.spec.max_seq {
            return Err(BlockError::SequenceTooLong { len: tokens.len(), max: self.spec.max_seq });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.spec.vocab) {
            return Err(BlockError::TokenOutOfVocab { token: bad, vocab: self.spec.vocab });
        }
        let d = self.spec.d_model;
        let mut x = Array2::zeros((tokens.len(), d));
        for (t, &tok) in tokens.iter().enumerate() {
            let mut row = x.row_mut(t);
            row += &self.tok_emb.row(tok as usize);
            row += &self.pos_emb.row(t);
        }
        for block in &self.blocks {
            block.forward(&mut x, self.spec.n_heads);
        }
        let logits = rms_norm(&x, &self.final_norm).dot(&self.head);
        Ok(match &self.head_bias {
            Some(b) => logits + b,
            None => logits,
        })
    }

    pub fn forward_batch(&self, batch: &[Vec<u32>]) -> Result<Vec<Array2<f64>>, BlockError> {
        batch.iter().map(|seq| self.forward(seq)).collect()
    }
}

/// Largest absolute difference between two models' logits over `inputs`.
pub fn max_abs_deviation(a: &ToyModel, b: &ToyModel, inputs: &[Vec<u32>]) -> Result<f64, BlockError> {
    let mut worst = 0.0f64;
    for seq in inputs {
        let (la, lb) = (a.forward(seq)?, b.forward(seq)?);
        for (x, y) in la.iter().zip(lb.iter()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Random token sequences for identity checks.
pub fn random_inputs(spec: &TransformerSpec, count: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(1..=spec.max_seq);
            (0..len).map(|_| rng.random_range(0..spec.vocab as u32)).collect()
        })
        .collect()
}
