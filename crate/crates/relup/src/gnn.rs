//! Graph encoder: stacked message-passing layers plus a permutation-invariant
//! readout, mapping each graph in a batch to one fixed-dimensional row.
//!
//! Three layer families are supported. GCN uses symmetrically normalized
//! aggregation with weight-1 self-loops; GIN sums neighbors, adds a
//! `(1 + eps)` self term, and applies a two-layer MLP; GraphSAGE combines a
//! self transform with a mean over neighbors. All of them run as per-edge
//! gather / scale / segment-sum on the batch's edge list, so there is no
//! dense adjacency anywhere and a graph's embedding never depends on the
//! other graphs in its batch.

use rand::Rng;

use crate::data::GraphBatch;
use crate::tensor::{Result, Tape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    Gcn,
    Gin,
    Sage,
}

impl Backbone {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Some(Self::Gcn),
            "gin" => Some(Self::Gin),
            "sage" | "graphsage" => Some(Self::Sage),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gcn => "gcn",
            Self::Gin => "gin",
            Self::Sage => "sage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Sum,
    Mean,
    Max,
}

impl Readout {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Some(Self::Sum),
            "mean" => Some(Self::Mean),
            "max" => Some(Self::Max),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::Mean => "mean",
            Self::Max => "max",
        }
    }
}

/// GIN's self-loop weight `(1 + eps)`: fixed by default, optionally a
/// trainable one-element tensor.
#[derive(Debug, Clone)]
pub enum GinEps {
    Fixed(f64),
    Learnable(Tensor),
}

#[derive(Debug, Clone)]
pub enum GnnLayerParams {
    Gcn {
        weight: Tensor,
        bias: Tensor,
    },
    Gin {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
        eps: GinEps,
    },
    Sage {
        w_self: Tensor,
        w_neigh: Tensor,
        bias: Tensor,
    },
}

impl GnnLayerParams {
    fn new<R: Rng>(backbone: Backbone, d_in: usize, d_out: usize, learnable_eps: bool, rng: &mut R) -> Self {
        match backbone {
            Backbone::Gcn => GnnLayerParams::Gcn {
                weight: glorot(d_in, d_out, rng),
                bias: Tensor::zeros(vec![d_out]).requires_grad(true),
            },
            Backbone::Gin => GnnLayerParams::Gin {
                w1: glorot(d_in, d_out, rng),
                b1: Tensor::zeros(vec![d_out]).requires_grad(true),
                w2: glorot(d_out, d_out, rng),
                b2: Tensor::zeros(vec![d_out]).requires_grad(true),
                eps: if learnable_eps {
                    GinEps::Learnable(Tensor::zeros(vec![1]).requires_grad(true))
                } else {
                    GinEps::Fixed(0.0)
                },
            },
            Backbone::Sage => GnnLayerParams::Sage {
                w_self: glorot(d_in, d_out, rng),
                w_neigh: glorot(d_in, d_out, rng),
                bias: Tensor::zeros(vec![d_out]).requires_grad(true),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            GnnLayerParams::Gcn { weight, .. } => weight.dim(0),
            GnnLayerParams::Gin { w1, .. } => w1.dim(0),
            GnnLayerParams::Sage { w_self, .. } => w_self.dim(0),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            GnnLayerParams::Gcn { weight, .. } => weight.dim(1),
            GnnLayerParams::Gin { w2, .. } => w2.dim(1),
            GnnLayerParams::Sage { w_self, .. } => w_self.dim(1),
        }
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        match self {
            GnnLayerParams::Gcn { weight, bias } => {
                out.push((format!("{prefix}.weight"), weight.clone()));
                out.push((format!("{prefix}.bias"), bias.clone()));
            }
            GnnLayerParams::Gin { w1, b1, w2, b2, eps } => {
                out.push((format!("{prefix}.w1"), w1.clone()));
                out.push((format!("{prefix}.b1"), b1.clone()));
                out.push((format!("{prefix}.w2"), w2.clone()));
                out.push((format!("{prefix}.b2"), b2.clone()));
                if let GinEps::Learnable(t) = eps {
                    out.push((format!("{prefix}.eps"), t.clone()));
                }
            }
            GnnLayerParams::Sage { w_self, w_neigh, bias } => {
                out.push((format!("{prefix}.w_self"), w_self.clone()));
                out.push((format!("{prefix}.w_neigh"), w_neigh.clone()));
                out.push((format!("{prefix}.bias"), bias.clone()));
            }
        }
    }
}

/// The full graph encoder: an ordered layer stack, dropout after every
/// layer, and the readout that produces one row per graph.
#[derive(Debug, Clone)]
pub struct GraphEncoderParams {
    pub layers: Vec<GnnLayerParams>,
    pub readout: Readout,
    pub dropout_rate: f64,
}

impl GraphEncoderParams {
    /// Builds `num_layers` layers mapping `feature_dim` to `hidden` and then
    /// `hidden` to `hidden`, Glorot-initialized from `rng`.
    pub fn new<R: Rng>(
        backbone: Backbone,
        feature_dim: usize,
        hidden: usize,
        num_layers: usize,
        readout: Readout,
        dropout_rate: f64,
        learnable_eps: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(num_layers);
        let mut d_in = feature_dim;
        for _ in 0..num_layers {
            layers.push(GnnLayerParams::new(backbone, d_in, hidden, learnable_eps, rng));
            d_in = hidden;
        }
        GraphEncoderParams {
            layers,
            readout,
            dropout_rate,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, GnnLayerParams::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, GnnLayerParams::output_dim)
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&format!("{prefix}.{i}"), &mut out);
        }
        out
    }
}

/// Glorot-uniform init: limit sqrt(6 / (fan_in + fan_out)).
pub fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
        .collect();
    Tensor::new(vec![fan_in, fan_out], data)
        .expect("shape matches data")
        .requires_grad(true)
}

fn check_node_rows(op: &'static str, h: &Tensor, batch: &GraphBatch) -> Result<()> {
    if h.dim(0) != batch.num_nodes() {
        return Err(TensorError::DimensionMismatch {
            op,
            lhs: h.shape(),
            rhs: vec![batch.num_nodes()],
        });
    }
    Ok(())
}

/// Node degrees from the stored (bidirectional) edge list.
fn degrees(batch: &GraphBatch) -> Vec<f64> {
    let mut deg = vec![0.0; batch.num_nodes()];
    for &(u, _) in &batch.edges {
        deg[u] += 1.0;
    }
    deg
}

/// GCN layer: `relu(D^-1/2 (A + I) D^-1/2 · H · W + b)` realized as
/// per-edge normalized gather/segment-sum.
pub fn gcn_layer(tape: &Tape, h: &Tensor, batch: &GraphBatch, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_node_rows("gcn_layer", h, batch)?;
    let n = batch.num_nodes();
    let hw = tape.matmul(h, weight)?;

    // self-loop degree: 1 + undirected degree
    let mut deg = degrees(batch);
    for d in &mut deg {
        *d += 1.0;
    }
    let mut srcs = Vec::with_capacity(batch.edges.len() + n);
    let mut dsts = Vec::with_capacity(batch.edges.len() + n);
    let mut coeffs = Vec::with_capacity(batch.edges.len() + n);
    for &(u, v) in &batch.edges {
        srcs.push(u);
        dsts.push(v);
        coeffs.push(1.0 / (deg[u] * deg[v]).sqrt());
    }
    for v in 0..n {
        srcs.push(v);
        dsts.push(v);
        coeffs.push(1.0 / deg[v]);
    }
    let messages = tape.gather_rows(&hw, &srcs)?;
    let messages = tape.scale_rows(&messages, &coeffs)?;
    let agg = tape.segment_sum(&messages, &dsts, n)?;
    tape.relu(&tape.add(&agg, bias)?)
}

/// GIN layer: `MLP((1 + eps) · h_v + sum of neighbor features)` where the
/// MLP is linear → relu → linear.
pub fn gin_layer(
    tape: &Tape,
    h: &Tensor,
    batch: &GraphBatch,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
    eps: &GinEps,
) -> Result<Tensor> {
    check_node_rows("gin_layer", h, batch)?;
    let n = batch.num_nodes();
    let srcs: Vec<usize> = batch.edges.iter().map(|&(u, _)| u).collect();
    let dsts: Vec<usize> = batch.edges.iter().map(|&(_, v)| v).collect();
    let agg = if srcs.is_empty() {
        Tensor::zeros(vec![n, h.dim(1)])
    } else {
        let messages = tape.gather_rows(h, &srcs)?;
        tape.segment_sum(&messages, &dsts, n)?
    };
    let self_term = match eps {
        GinEps::Fixed(e) => tape.scale(h, 1.0 + e)?,
        GinEps::Learnable(t) => tape.add(h, &tape.scale_by(h, t)?)?,
    };
    let combined = tape.add(&self_term, &agg)?;
    let hidden = tape.relu(&tape.add(&tape.matmul(&combined, w1)?, b1)?)?;
    tape.add(&tape.matmul(&hidden, w2)?, b2)
}

/// GraphSAGE layer: `relu(W_self · h_v + W_neigh · mean(neighbors) + b)`;
/// the mean over an empty neighborhood is the zero vector.
pub fn sage_layer(
    tape: &Tape,
    h: &Tensor,
    batch: &GraphBatch,
    w_self: &Tensor,
    w_neigh: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    check_node_rows("sage_layer", h, batch)?;
    let n = batch.num_nodes();
    let srcs: Vec<usize> = batch.edges.iter().map(|&(u, _)| u).collect();
    let dsts: Vec<usize> = batch.edges.iter().map(|&(_, v)| v).collect();
    let mean = if srcs.is_empty() {
        Tensor::zeros(vec![n, h.dim(1)])
    } else {
        let messages = tape.gather_rows(h, &srcs)?;
        let sums = tape.segment_sum(&messages, &dsts, n)?;
        let inv_deg: Vec<f64> = degrees(batch).iter().map(|&d| 1.0 / d.max(1.0)).collect();
        tape.scale_rows(&sums, &inv_deg)?
    };
    let combined = tape.add(&tape.matmul(h, w_self)?, &tape.matmul(&mean, w_neigh)?)?;
    tape.relu(&tape.add(&combined, bias)?)
}

/// Reduces node rows to one row per graph via the batch indicator.
pub fn readout(tape: &Tape, node_h: &Tensor, batch: &GraphBatch, kind: Readout) -> Result<Tensor> {
    check_node_rows("readout", node_h, batch)?;
    let b = batch.batch_size;
    match kind {
        Readout::Sum => tape.segment_sum(node_h, &batch.graph_indicator, b),
        Readout::Mean => {
            let sums = tape.segment_sum(node_h, &batch.graph_indicator, b)?;
            let mut counts = vec![0.0f64; b];
            for &g in &batch.graph_indicator {
                counts[g] += 1.0;
            }
            let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
            tape.scale_rows(&sums, &inv)
        }
        Readout::Max => tape.segment_max(node_h, &batch.graph_indicator, b),
    }
}

/// Runs the full encoder: layers in order, dropout after each layer's
/// output, then the readout. Inference mode bypasses dropout entirely.
pub fn encode_graphs<R: Rng>(
    tape: &Tape,
    batch: &GraphBatch,
    params: &GraphEncoderParams,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    if batch.node_features.dim(1) != params.input_dim() {
        return Err(TensorError::DimensionMismatch {
            op: "encode_graphs",
            lhs: batch.node_features.shape(),
            rhs: vec![batch.num_nodes(), params.input_dim()],
        });
    }
    let mut h = batch.node_features.clone();
    for layer in &params.layers {
        h = match layer {
            GnnLayerParams::Gcn { weight, bias } => gcn_layer(tape, &h, batch, weight, bias)?,
            GnnLayerParams::Gin { w1, b1, w2, b2, eps } => {
                gin_layer(tape, &h, batch, w1, b1, w2, b2, eps)?
            }
            GnnLayerParams::Sage { w_self, w_neigh, bias } => {
                sage_layer(tape, &h, batch, w_self, w_neigh, bias)?
            }
        };
        h = tape.dropout(&h, params.dropout_rate, training, rng)?;
    }
    readout(tape, &h, batch, params.readout)
}
