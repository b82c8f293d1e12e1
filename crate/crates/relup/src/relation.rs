//! Batch-level relation encoder and the two classification heads.
//!
//! The encoder treats the rows of the graph-embedding matrix as an unordered
//! set and runs transformer-style blocks over them: multi-head scaled
//! dot-product self-attention, then a feed-forward net, each wrapped in a
//! residual connection and followed by layer normalization. Because every
//! row attends over the whole batch, the output row for one graph depends on
//! the other graphs present — the coupling the graph encoder deliberately
//! lacks. Row order only permutes the output rows.

use rand::Rng;

use crate::gnn::glorot;
use crate::tensor::{Result, Tape, Tensor, TensorError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct AttentionHeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone)]
pub struct RelationLayerParams {
    pub heads: Vec<AttentionHeadParams>,
    pub w_out: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl RelationLayerParams {
    fn new<R: Rng>(d_g: usize, num_heads: usize, rng: &mut R) -> Self {
        let d_head = d_g / num_heads;
        let heads = (0..num_heads)
            .map(|_| AttentionHeadParams {
                wq: glorot(d_g, d_head, rng),
                wk: glorot(d_g, d_head, rng),
                wv: glorot(d_g, d_head, rng),
            })
            .collect();
        RelationLayerParams {
            heads,
            w_out: glorot(num_heads * d_head, d_g, rng),
            ffn_w1: glorot(d_g, 2 * d_g, rng),
            ffn_b1: Tensor::zeros(vec![2 * d_g]).requires_grad(true),
            ffn_w2: glorot(2 * d_g, d_g, rng),
            ffn_b2: Tensor::zeros(vec![d_g]).requires_grad(true),
            ln1_gain: Tensor::full(vec![d_g], 1.0).requires_grad(true),
            ln1_bias: Tensor::zeros(vec![d_g]).requires_grad(true),
            ln2_gain: Tensor::full(vec![d_g], 1.0).requires_grad(true),
            ln2_bias: Tensor::zeros(vec![d_g]).requires_grad(true),
        }
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head{h}.wq"), head.wq.clone()));
            out.push((format!("{prefix}.head{h}.wk"), head.wk.clone()));
            out.push((format!("{prefix}.head{h}.wv"), head.wv.clone()));
        }
        out.push((format!("{prefix}.w_out"), self.w_out.clone()));
        out.push((format!("{prefix}.ffn_w1"), self.ffn_w1.clone()));
        out.push((format!("{prefix}.ffn_b1"), self.ffn_b1.clone()));
        out.push((format!("{prefix}.ffn_w2"), self.ffn_w2.clone()));
        out.push((format!("{prefix}.ffn_b2"), self.ffn_b2.clone()));
        out.push((format!("{prefix}.ln1_gain"), self.ln1_gain.clone()));
        out.push((format!("{prefix}.ln1_bias"), self.ln1_bias.clone()));
        out.push((format!("{prefix}.ln2_gain"), self.ln2_gain.clone()));
        out.push((format!("{prefix}.ln2_bias"), self.ln2_bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct RelationEncoderParams {
    pub layers: Vec<RelationLayerParams>,
    /// Dropout inside the blocks, off by default.
    pub dropout_rate: f64,
}

impl RelationEncoderParams {
    pub fn new<R: Rng>(d_g: usize, num_layers: usize, num_heads: usize, rng: &mut R) -> Result<Self> {
        if num_heads == 0 || d_g % num_heads != 0 {
            return Err(TensorError::Parameter {
                op: "RelationEncoderParams::new",
                msg: format!("head count {num_heads} must divide the embedding dim {d_g}"),
            });
        }
        Ok(RelationEncoderParams {
            layers: (0..num_layers).map(|_| RelationLayerParams::new(d_g, num_heads, rng)).collect(),
            dropout_rate: 0.0,
        })
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&format!("{prefix}.{i}"), &mut out);
        }
        out
    }
}

/// Single linear classification head.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ClassifierParams {
    pub fn new<R: Rng>(d_in: usize, num_classes: usize, rng: &mut R) -> Self {
        ClassifierParams {
            weight: glorot(d_in, num_classes, rng),
            bias: Tensor::zeros(vec![num_classes]).requires_grad(true),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.weight"), self.weight.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }
}

/// Scaled dot-product attention: `softmax(q·kᵀ / sqrt(d_k)) · v`.
pub fn attention(tape: &Tape, q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let d_k = q.dim(1);
    if k.dim(1) != d_k {
        return Err(TensorError::DimensionMismatch {
            op: "attention",
            lhs: q.shape(),
            rhs: k.shape(),
        });
    }
    if k.dim(0) != v.dim(0) {
        return Err(TensorError::DimensionMismatch {
            op: "attention",
            lhs: k.shape(),
            rhs: v.shape(),
        });
    }
    let scores = tape.scale(&tape.matmul_nt(q, k)?, 1.0 / (d_k as f64).sqrt())?;
    let weights = tape.softmax_rows(&scores, 1.0)?;
    tape.matmul(&weights, v)
}

/// Runs each head's attention on its own projections of `e`, concatenates
/// the head outputs, and applies the output projection.
pub fn multi_head_self_attention(tape: &Tape, e: &Tensor, layer: &RelationLayerParams) -> Result<Tensor> {
    let mut head_outputs = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let q = tape.matmul(e, &head.wq)?;
        let k = tape.matmul(e, &head.wk)?;
        let v = tape.matmul(e, &head.wv)?;
        head_outputs.push(attention(tape, &q, &k, &v)?);
    }
    let concat = tape.concat_cols(&head_outputs)?;
    tape.matmul(&concat, &layer.w_out)
}

/// One transformer block over the batch rows:
/// `x1 = LN(e + MSA(e)); out = LN(x1 + FFN(x1))`.
pub fn relation_layer<R: Rng>(
    tape: &Tape,
    e: &Tensor,
    layer: &RelationLayerParams,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let msa = multi_head_self_attention(tape, e, layer)?;
    let msa = tape.dropout(&msa, dropout_rate, training, rng)?;
    let x1 = tape.layer_norm(&tape.add(e, &msa)?, &layer.ln1_gain, &layer.ln1_bias, LAYER_NORM_EPS)?;
    let hidden = tape.relu(&tape.add(&tape.matmul(&x1, &layer.ffn_w1)?, &layer.ffn_b1)?)?;
    let ffn = tape.add(&tape.matmul(&hidden, &layer.ffn_w2)?, &layer.ffn_b2)?;
    let ffn = tape.dropout(&ffn, dropout_rate, training, rng)?;
    tape.layer_norm(&tape.add(&x1, &ffn)?, &layer.ln2_gain, &layer.ln2_bias, LAYER_NORM_EPS)
}

/// Applies the encoder's blocks in order over the embedding rows.
pub fn relation_encode<R: Rng>(
    tape: &Tape,
    e: &Tensor,
    params: &RelationEncoderParams,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let mut x = e.clone();
    for layer in &params.layers {
        x = relation_layer(tape, &x, layer, params.dropout_rate, training, rng)?;
    }
    Ok(x)
}

/// Affine head producing logits; the softmax lives in the loss.
pub fn classify(tape: &Tape, x: &Tensor, head: &ClassifierParams) -> Result<Tensor> {
    tape.add(&tape.matmul(x, &head.weight)?, &head.bias)
}
