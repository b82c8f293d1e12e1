//! Joint training of the graph encoder, relation encoder, and both heads.
//!
//! One step runs the whole pipeline on a mini-batch: encode the graphs,
//! relate their embeddings across the batch, evaluate both heads, combine
//! the classification, distillation, and hint terms into one scalar, and
//! take a single backward pass followed by one Adam update of every
//! parameter group. Inference drops the relation encoder and its head
//! entirely, so predictions depend only on the graph encoder and are
//! independent of batch composition.

mod adam;
mod checkpoint;
mod loss;

pub use adam::{lr_schedule, Adam};
pub use checkpoint::{ParamSnapshot, SnapshotEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{classification_loss, distill_loss, hint_loss, total_loss, LossWeights};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, Dataset, FoldPlan, Graph, GraphBatch};
use crate::gnn::{encode_graphs, Backbone, GraphEncoderParams, Readout};
use crate::relation::{classify, relation_encode, ClassifierParams, RelationEncoderParams};
use crate::tensor::{Tape, Tensor, TensorError};

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("numerical divergence in {component}: {value}")]
    Divergence { component: &'static str, value: f64 },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything needed to build and train one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden: usize,
    pub readout: Readout,
    pub relation_layers: usize,
    pub heads: usize,
    pub loss: LossWeights,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub relating_up: bool,
    pub dropout: f64,
    /// Dropout inside the relation blocks, off by default.
    pub relation_dropout: f64,
    pub gin_learnable_eps: bool,
    pub stratify: bool,
    /// Cuts the gradient from the relation branch back into the graph
    /// encoder; used by the ablation-equivalence check.
    pub detach_relation_input: bool,
    /// Stops the hint term's gradient into the relation embeddings.
    pub detach_hint_target: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::Gin,
            layers: 5,
            hidden: 128,
            readout: Readout::Sum,
            relation_layers: 1,
            heads: 4,
            loss: LossWeights::default(),
            batch_size: 128,
            learning_rate: 0.01,
            max_epochs: 300,
            patience: 100,
            seed: 0,
            relating_up: true,
            dropout: 0.5,
            relation_dropout: 0.0,
            gin_learnable_eps: false,
            stratify: true,
            detach_relation_input: false,
            detach_hint_target: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.layers == 0 || self.hidden == 0 {
            return Err(TrainError::Contract("need at least one layer and one hidden unit".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Contract("batch size must be positive".into()));
        }
        if self.relating_up && (self.heads == 0 || self.hidden % self.heads != 0) {
            return Err(TrainError::Contract(format!(
                "head count {} must divide hidden width {}",
                self.heads, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.relation_dropout) {
            return Err(TrainError::Contract("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// All trainable parameter groups. The relation branch is absent when the
/// model runs as a plain backbone.
pub struct Model {
    pub encoder: GraphEncoderParams,
    pub head_graph: ClassifierParams,
    pub relation: Option<RelationEncoderParams>,
    pub head_relation: Option<ClassifierParams>,
}

impl Model {
    pub fn build<R: Rng>(
        config: &ModelConfig,
        feature_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let encoder = GraphEncoderParams::new(
            config.backbone,
            feature_dim,
            config.hidden,
            config.layers,
            config.readout,
            config.dropout,
            config.gin_learnable_eps,
            rng,
        );
        let head_graph = ClassifierParams::new(config.hidden, num_classes, rng);
        let (relation, head_relation) = if config.relating_up {
            let mut rel = RelationEncoderParams::new(config.hidden, config.relation_layers, config.heads, rng)?;
            rel.dropout_rate = config.relation_dropout;
            (Some(rel), Some(ClassifierParams::new(config.hidden, num_classes, rng)))
        } else {
            (None, None)
        };
        Ok(Model {
            encoder,
            head_graph,
            relation,
            head_relation,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.encoder.named_params("encoder");
        out.extend(self.head_graph.named_params("head_graph"));
        if let Some(rel) = &self.relation {
            out.extend(rel.named_params("relation"));
        }
        if let Some(head) = &self.head_relation {
            out.extend(head.named_params("head_relation"));
        }
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot::from_named(&self.named_params())
    }

    pub fn restore(&self, snapshot: &ParamSnapshot) -> Result<()> {
        snapshot.restore(&self.named_params())
    }

    /// Snapshot extended with the scalar metadata needed to rebuild the
    /// model from disk.
    pub fn snapshot_with_meta(&self, config: &ModelConfig, feature_dim: usize, num_classes: usize) -> ParamSnapshot {
        let mut snap = self.snapshot();
        attach_meta(&mut snap, config, feature_dim, num_classes);
        snap
    }

    /// Rebuilds a model from a metadata-bearing snapshot. Returns the model
    /// and the feature dimension it expects.
    pub fn from_snapshot(snap: &ParamSnapshot) -> Result<(Self, usize, usize)> {
        let scalar = |name: &str| {
            snap.get_scalar(name)
                .ok_or_else(|| TrainError::Checkpoint(format!("missing metadata entry {name:?}")))
        };
        let backbone = match scalar("meta.backbone")? as i64 {
            0 => Backbone::Gcn,
            1 => Backbone::Gin,
            2 => Backbone::Sage,
            other => return Err(TrainError::Checkpoint(format!("unknown backbone tag {other}"))),
        };
        let readout = match scalar("meta.readout")? as i64 {
            0 => Readout::Sum,
            1 => Readout::Mean,
            2 => Readout::Max,
            other => return Err(TrainError::Checkpoint(format!("unknown readout tag {other}"))),
        };
        let config = ModelConfig {
            backbone,
            readout,
            layers: scalar("meta.layers")? as usize,
            hidden: scalar("meta.hidden")? as usize,
            relation_layers: scalar("meta.relation_layers")? as usize,
            heads: scalar("meta.heads")? as usize,
            relating_up: scalar("meta.relating_up")? != 0.0,
            gin_learnable_eps: scalar("meta.gin_learnable_eps")? != 0.0,
            ..ModelConfig::default()
        };
        let feature_dim = scalar("meta.feature_dim")? as usize;
        let num_classes = scalar("meta.num_classes")? as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::build(&config, feature_dim, num_classes, &mut rng)?;
        model.restore(snap)?;
        Ok((model, feature_dim, num_classes))
    }
}

/// Adds the scalar metadata entries that [`Model::from_snapshot`] reads.
pub fn attach_meta(snap: &mut ParamSnapshot, config: &ModelConfig, feature_dim: usize, num_classes: usize) {
    let backbone = match config.backbone {
        Backbone::Gcn => 0.0,
        Backbone::Gin => 1.0,
        Backbone::Sage => 2.0,
    };
    let readout = match config.readout {
        Readout::Sum => 0.0,
        Readout::Mean => 1.0,
        Readout::Max => 2.0,
    };
    snap.push_scalar("meta.backbone", backbone);
    snap.push_scalar("meta.readout", readout);
    snap.push_scalar("meta.layers", config.layers as f64);
    snap.push_scalar("meta.hidden", config.hidden as f64);
    snap.push_scalar("meta.feature_dim", feature_dim as f64);
    snap.push_scalar("meta.num_classes", num_classes as f64);
    snap.push_scalar("meta.relation_layers", config.relation_layers as f64);
    snap.push_scalar("meta.heads", config.heads as f64);
    snap.push_scalar("meta.relating_up", f64::from(config.relating_up));
    snap.push_scalar("meta.gin_learnable_eps", f64::from(config.gin_learnable_eps));
}

/// Outputs of one forward pass over a batch.
pub struct ForwardPass {
    pub embeddings: Tensor,
    pub logits_graph: Tensor,
    pub relation_embeddings: Option<Tensor>,
    pub logits_relation: Option<Tensor>,
}

/// Runs the encoders and heads. The relation branch is evaluated only when
/// present; `detach_relation_input` feeds it a gradient-stopped copy of the
/// embeddings.
pub fn forward<R: Rng>(
    tape: &Tape,
    model: &Model,
    batch: &GraphBatch,
    training: bool,
    detach_relation_input: bool,
    rng: &mut R,
) -> Result<ForwardPass> {
    let embeddings = encode_graphs(tape, batch, &model.encoder, training, rng)?;
    let logits_graph = classify(tape, &embeddings, &model.head_graph)?;
    let (relation_embeddings, logits_relation) = match (&model.relation, &model.head_relation) {
        (Some(rel), Some(head)) => {
            let rel_input = if detach_relation_input {
                embeddings.detach()
            } else {
                embeddings.clone()
            };
            let r = relation_encode(tape, &rel_input, rel, training, rng)?;
            let logits = classify(tape, &r, head)?;
            (Some(r), Some(logits))
        }
        _ => (None, None),
    };
    Ok(ForwardPass {
        embeddings,
        logits_graph,
        relation_embeddings,
        logits_relation,
    })
}

/// Per-step scalar diagnostics; disabled terms report 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepMetrics {
    pub loss_total: f64,
    pub loss_class_graph: f64,
    pub loss_class_relation: f64,
    pub loss_distill: f64,
    pub loss_hint: f64,
    pub accuracy: f64,
}

fn check_finite(component: &'static str, t: &Tensor) -> Result<f64> {
    let v = t.item();
    if !v.is_finite() {
        return Err(TrainError::Divergence { component, value: v });
    }
    Ok(v)
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (rows, cols) = (logits.dim(0), logits.dim(1));
    let d = logits.data();
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut best = 0;
        for j in 1..cols {
            if d[i * cols + j] > d[i * cols + best] {
                best = j;
            }
        }
        out.push(best);
    }
    out
}

fn batch_accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let preds = argmax_rows(logits);
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

/// One optimization step over a mini-batch: forward, combined loss, one
/// backward pass, one Adam update of all parameter groups.
pub fn train_step<R: Rng>(
    model: &Model,
    batch: &GraphBatch,
    config: &ModelConfig,
    opt: &mut Adam,
    rng: &mut R,
) -> Result<StepMetrics> {
    let tape = Tape::new();
    let pass = forward(&tape, model, batch, true, config.detach_relation_input, rng)?;
    let mut metrics = StepMetrics::default();

    let loss = if let (Some(r), Some(logits_r)) = (&pass.relation_embeddings, &pass.logits_relation) {
        let w = &config.loss;
        let class_g = classification_loss(&tape, &pass.logits_graph, &batch.labels)?;
        let class_r = classification_loss(&tape, logits_r, &batch.labels)?;
        metrics.loss_class_graph = check_finite("class_graph", &class_g)?;
        metrics.loss_class_relation = check_finite("class_relation", &class_r)?;
        let distill = if w.use_distill {
            let d = distill_loss(&tape, &pass.logits_graph, logits_r, w.temperature, w.t2_rescale)?;
            metrics.loss_distill = check_finite("distill", &d)?;
            Some(d)
        } else {
            None
        };
        let hint = if w.use_hint {
            let target = if config.detach_hint_target { r.detach() } else { r.clone() };
            let h = hint_loss(&tape, &pass.embeddings, &target)?;
            metrics.loss_hint = check_finite("hint", &h)?;
            Some(h)
        } else {
            None
        };
        total_loss(&tape, &class_g, &class_r, distill.as_ref(), hint.as_ref(), w)?
    } else {
        let class_g = classification_loss(&tape, &pass.logits_graph, &batch.labels)?;
        metrics.loss_class_graph = check_finite("class_graph", &class_g)?;
        class_g
    };
    metrics.loss_total = check_finite("total", &loss)?;
    metrics.accuracy = batch_accuracy(&pass.logits_graph, &batch.labels);

    tape.backward(&loss)?;
    opt.step();
    Ok(metrics)
}

/// Inference path: graph encoder plus graph head only, dropout off. The
/// relation branch is never evaluated, and the predictions do not depend on
/// how the graphs are grouped into batches.
pub fn infer(
    graphs: &[&Graph],
    encoder: &GraphEncoderParams,
    head: &ClassifierParams,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(graphs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0); // never consumed without dropout
    for chunk in graphs.chunks(batch_size.max(1)) {
        let batch = crate::data::batch_graphs(chunk)?;
        let tape = Tape::new();
        let emb = encode_graphs(&tape, &batch, encoder, false, &mut rng)?;
        let logits = classify(&tape, &emb, head)?;
        out.extend(argmax_rows(&logits));
    }
    Ok(out)
}

/// Accuracy of the inference path over the given dataset indices.
pub fn evaluate(
    dataset: &Dataset,
    ids: &[usize],
    encoder: &GraphEncoderParams,
    head: &ClassifierParams,
    batch_size: usize,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(TrainError::Contract("cannot evaluate an empty id list".into()));
    }
    let graphs: Vec<&Graph> = ids.iter().map(|&i| &dataset.graphs[i]).collect();
    let preds = infer(&graphs, encoder, head, batch_size)?;
    let correct = preds
        .iter()
        .zip(graphs.iter())
        .filter(|(p, g)| **p == g.label)
        .count();
    Ok(correct as f64 / graphs.len() as f64)
}

/// Validation-driven stopping: keeps the snapshot of the best epoch (first
/// best on ties) and halts after `patience` epochs without improvement.
pub struct EarlyStop {
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub best_snapshot: ParamSnapshot,
}

impl EarlyStop {
    pub fn new(patience: usize, max_epochs: usize, initial: ParamSnapshot) -> Self {
        EarlyStop {
            best_val_accuracy: f64::NEG_INFINITY,
            best_epoch: 0,
            patience,
            max_epochs,
            best_snapshot: initial,
        }
    }

    /// Records one epoch's validation accuracy; returns true on improvement.
    pub fn observe(&mut self, epoch: usize, val_accuracy: f64, model: &Model) -> bool {
        if val_accuracy > self.best_val_accuracy {
            self.best_val_accuracy = val_accuracy;
            self.best_epoch = epoch;
            self.best_snapshot = model.snapshot();
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch.saturating_sub(self.best_epoch) >= self.patience || epoch + 1 >= self.max_epochs
    }
}

/// Per-fold outcome: the validation trajectory, the test accuracy of the
/// best-epoch snapshot, and wall-clock costs.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold_index: usize,
    pub best_epoch: usize,
    pub val_accuracy_curve: Vec<f64>,
    pub test_accuracy: f64,
    pub wall_time_train_per_epoch: f64,
    pub wall_time_infer: f64,
}

fn fold_seed(seed: u64, fold_index: usize) -> u64 {
    seed.wrapping_add((fold_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains one fold to completion and reports the snapshot that produced the
/// test accuracy.
pub fn train_fold(dataset: &Dataset, fold: &FoldPlan, config: &ModelConfig) -> Result<(FoldReport, ParamSnapshot)> {
    config.validate()?;
    if fold.train_ids.is_empty() || fold.val_ids.is_empty() || fold.test_ids.is_empty() {
        return Err(TrainError::Contract(format!(
            "fold {} has an empty split",
            fold.fold_index
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(config.seed, fold.fold_index));
    let model = Model::build(config, dataset.feature_dim, dataset.num_classes, &mut rng)?;
    let mut opt = Adam::new(model.param_tensors(), config.learning_rate);
    let mut early = EarlyStop::new(config.patience, config.max_epochs, model.snapshot());
    let mut train_ids = fold.train_ids.clone();
    let mut val_curve = Vec::new();
    let mut train_seconds = 0.0;
    let mut epochs_run = 0usize;

    for epoch in 0..config.max_epochs {
        opt.set_learning_rate(lr_schedule(epoch, config.learning_rate));
        let start = Instant::now();
        train_ids.shuffle(&mut rng);
        for chunk in train_ids.chunks(config.batch_size) {
            let batch = dataset.batch(chunk)?;
            train_step(&model, &batch, config, &mut opt, &mut rng)?;
        }
        train_seconds += start.elapsed().as_secs_f64();
        epochs_run += 1;

        let val_acc = evaluate(dataset, &fold.val_ids, &model.encoder, &model.head_graph, config.batch_size)?;
        val_curve.push(val_acc);
        early.observe(epoch, val_acc, &model);
        if early.should_stop(epoch) {
            break;
        }
    }

    model.restore(&early.best_snapshot)?;
    let infer_start = Instant::now();
    let test_accuracy = evaluate(dataset, &fold.test_ids, &model.encoder, &model.head_graph, config.batch_size)?;
    let wall_time_infer = infer_start.elapsed().as_secs_f64();

    let report = FoldReport {
        fold_index: fold.fold_index,
        best_epoch: early.best_epoch,
        val_accuracy_curve: val_curve,
        test_accuracy,
        wall_time_train_per_epoch: train_seconds / epochs_run.max(1) as f64,
        wall_time_infer,
    };
    Ok((report, early.best_snapshot))
}

/// Runs every fold, optionally fanning out over a share-nothing worker pool.
/// Results are returned in fold order either way.
pub fn run_folds(
    dataset: &Dataset,
    plans: &[FoldPlan],
    config: &ModelConfig,
    parallelism: usize,
) -> Result<Vec<(FoldReport, ParamSnapshot)>> {
    #[cfg(feature = "parallel")]
    if parallelism > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| TrainError::Contract(format!("worker pool: {e}")))?;
        return pool.install(|| {
            plans
                .par_iter()
                .map(|fold| train_fold(dataset, fold, config))
                .collect()
        });
    }
    let _ = parallelism;
    plans.iter().map(|fold| train_fold(dataset, fold, config)).collect()
}

/// Population mean and standard deviation (the reporting convention for the
/// ten test-fold accuracies).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}
