//! Graph classification with batch-level relation encoding and feedback training.
//!
//! The pipeline has two encoders trained jointly. A stack of message-passing
//! layers (`gnn`) maps each graph to a fixed vector. A multi-head
//! self-attention encoder (`relation`) then mixes the embeddings of all
//! graphs in a mini-batch, producing relation-aware representations. Both
//! feed their own classification head; a KL-distillation term and an L2 hint
//! term push the relational context back into the graph encoder (`train`).
//! At inference only the graph encoder and its head are evaluated, so the
//! deployed model costs the same as the plain backbone.
//!
//! Everything runs on a small dense f64 tensor engine with tape-based
//! reverse-mode differentiation (`tensor`). Datasets are read from the
//! TUDataset on-disk format or generated synthetically (`data`).
//!
//! With the default `parallel` feature the matrix kernels and the fold
//! runner use rayon; disabling it yields a fully sequential build with
//! identical numerics.

pub mod data;
pub mod gnn;
pub mod relation;
pub mod tensor;
pub mod train;
