//! Dataset ingestion, featurization, batching, and fold planning.
//!
//! Graphs are stored as plain values (edge lists plus a dense feature
//! matrix), so a [`Dataset`] is immutable after construction and can be
//! shared read-only across fold workers. Tensors enter the picture only when
//! [`batch_graphs`] stacks a mini-batch for the encoders.

mod folds;
mod synthetic;
mod tudataset;

pub use folds::{stratification_feasible, stratified_folds, unstratified_folds};
pub use synthetic::{apply_label_noise, generate_synthetic};
pub use tudataset::{default_policy, featurize, load_tudataset, parse_tudataset, RawDataset};

use std::path::PathBuf;

use crate::tensor::{Tensor, TensorError};

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing required file: {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    Format {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Node-feature construction policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Featurization {
    /// One-hot over the dataset's distinct node labels.
    NodeLabelOneHot,
    /// Raw real-valued node attributes from the attribute file.
    NodeAttributes,
    /// One-hot over node degree, dimension = max degree in the dataset + 1.
    DegreeOneHot,
    /// A single constant 1.0 per node.
    UniformConstant,
}

impl Featurization {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "node-label-one-hot" | "label" => Some(Self::NodeLabelOneHot),
            "node-attributes" | "attributes" => Some(Self::NodeAttributes),
            "degree-one-hot" | "degree" => Some(Self::DegreeOneHot),
            "uniform-constant" | "uniform" => Some(Self::UniformConstant),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::NodeLabelOneHot => "node-label-one-hot",
            Self::NodeAttributes => "node-attributes",
            Self::DegreeOneHot => "degree-one-hot",
            Self::UniformConstant => "uniform-constant",
        }
    }
}

/// Dense row-major per-node feature storage. Plain data, freely shared
/// across threads; promoted to a [`Tensor`] at batch time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "ragged feature matrix");
        FeatureMatrix { dim, data }
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// One labelled graph: undirected edges stored in both directions.
#[derive(Debug, Clone)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_features: FeatureMatrix,
    pub label: usize,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_features: FeatureMatrix,
        label: usize,
    ) -> Result<Self> {
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= num_nodes || v >= num_nodes) {
            return Err(DataError::Contract(format!(
                "edge ({u}, {v}) out of range for {num_nodes} nodes"
            )));
        }
        if node_features.num_rows() != num_nodes {
            return Err(DataError::Contract(format!(
                "{} feature rows for {} nodes",
                node_features.num_rows(),
                num_nodes
            )));
        }
        Ok(Graph {
            num_nodes,
            edges,
            node_features,
            label,
        })
    }

    /// Undirected degree of each node (edges are stored both ways, so this
    /// is the out-degree in the stored list).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for &(u, _) in &self.edges {
            deg[u] += 1;
        }
        deg
    }
}

/// A named collection of graphs with uniform feature dimension and dense
/// 0-based labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub featurization: Featurization,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    pub fn mean_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.num_nodes as f64).sum::<f64>() / self.len() as f64
    }

    /// Mean undirected edge count per graph (stored pairs / 2).
    pub fn mean_edges(&self) -> f64 {
        self.graphs.iter().map(|g| g.edges.len() as f64 / 2.0).sum::<f64>() / self.len() as f64
    }

    pub fn batch(&self, ids: &[usize]) -> Result<GraphBatch> {
        let refs: Vec<&Graph> = ids.iter().map(|&i| &self.graphs[i]).collect();
        batch_graphs(&refs)
    }
}

/// Disjoint union of several graphs: stacked features, offset edges, and a
/// node-to-graph indicator.
#[derive(Debug)]
pub struct GraphBatch {
    pub node_features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub graph_indicator: Vec<usize>,
    pub labels: Vec<usize>,
    pub batch_size: usize,
}

impl GraphBatch {
    pub fn num_nodes(&self) -> usize {
        self.graph_indicator.len()
    }
}

/// Stacks graphs into one block-diagonal batch. Node indices of graph `i`
/// are offset by the total node count of graphs before it.
pub fn batch_graphs(graphs: &[&Graph]) -> Result<GraphBatch> {
    if graphs.is_empty() {
        return Err(DataError::Contract("cannot batch an empty graph list".into()));
    }
    let dim = graphs[0].node_features.dim;
    if let Some(g) = graphs.iter().find(|g| g.node_features.dim != dim) {
        return Err(DataError::Contract(format!(
            "feature dimension mismatch in batch: {} vs {}",
            dim, g.node_features.dim
        )));
    }
    let total_nodes: usize = graphs.iter().map(|g| g.num_nodes).sum();
    let mut features = Vec::with_capacity(total_nodes * dim);
    let mut edges = Vec::new();
    let mut indicator = Vec::with_capacity(total_nodes);
    let mut labels = Vec::with_capacity(graphs.len());
    let mut offset = 0usize;
    for (gi, g) in graphs.iter().enumerate() {
        features.extend_from_slice(&g.node_features.data);
        edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        indicator.extend(std::iter::repeat(gi).take(g.num_nodes));
        labels.push(g.label);
        offset += g.num_nodes;
    }
    Ok(GraphBatch {
        node_features: Tensor::new(vec![total_nodes, dim], features)?,
        edges,
        graph_indicator: indicator,
        labels,
        batch_size: graphs.len(),
    })
}

/// Fold assignment for one cross-validation round: the three id lists are
/// disjoint and together cover the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub fold_index: usize,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
}
