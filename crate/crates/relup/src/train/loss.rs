//! The three loss terms and their weighted combination.
//!
//! Total loss: `alpha * (L_class_graph + L_class_relation)
//! + (1 - alpha) * L_distill + beta * L_hint`, with the last two terms
//! switchable for the ablation arms. The KL term keeps the graph head's
//! distribution as the first argument and flows gradients into both heads;
//! there is no temperature-squared rescaling unless explicitly requested.

use crate::tensor::{Tape, Tensor, TensorError};

use super::TrainError;

/// Weights and switches of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub temperature: f64,
    pub use_distill: bool,
    pub use_hint: bool,
    /// Multiply the distillation term by T^2 (off by default).
    pub t2_rescale: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.3,
            beta: 1e-5,
            temperature: 2.0,
            use_distill: true,
            use_hint: true,
            t2_rescale: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(TrainError::Contract(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.beta < 0.0 {
            return Err(TrainError::Contract(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.temperature <= 0.0 {
            return Err(TrainError::Contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Classification terms only (no distillation, no hint).
    pub fn ablation_a1(mut self) -> Self {
        self.use_distill = false;
        self.use_hint = false;
        self
    }

    /// No distillation, hint kept.
    pub fn ablation_a2(mut self) -> Self {
        self.use_distill = false;
        self.use_hint = true;
        self
    }

    /// Distillation kept, no hint.
    pub fn ablation_a3(mut self) -> Self {
        self.use_distill = true;
        self.use_hint = false;
        self
    }
}

/// Mean cross-entropy of `logits` against integer labels, via log-sum-exp.
pub fn classification_loss(tape: &Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor, TrainError> {
    Ok(tape.cross_entropy(logits, labels)?)
}

/// Mean KL divergence between the two heads' tempered distributions:
/// first argument is the graph head, second the relation head, and the
/// gradient flows into both.
pub fn distill_loss(
    tape: &Tape,
    logits_graph: &Tensor,
    logits_relation: &Tensor,
    temperature: f64,
    t2_rescale: bool,
) -> Result<Tensor, TrainError> {
    if logits_graph.shape() != logits_relation.shape() {
        return Err(TrainError::Tensor(TensorError::DimensionMismatch {
            op: "distill_loss",
            lhs: logits_graph.shape(),
            rhs: logits_relation.shape(),
        }));
    }
    let batch = logits_graph.dim(0) as f64;
    let log_p = tape.log_softmax_rows(logits_graph, temperature)?;
    let log_q = tape.log_softmax_rows(logits_relation, temperature)?;
    let p = tape.exp(&log_p)?;
    let diff = tape.sub(&log_p, &log_q)?;
    let terms = tape.mul(&p, &diff)?;
    let mut loss = tape.scale(&tape.sum_all(&terms)?, 1.0 / batch)?;
    if t2_rescale {
        loss = tape.scale(&loss, temperature * temperature)?;
    }
    Ok(loss)
}

/// Mean squared L2 distance between the two representation spaces,
/// per graph then averaged over the batch.
pub fn hint_loss(tape: &Tape, embeddings: &Tensor, relations: &Tensor) -> Result<Tensor, TrainError> {
    if embeddings.shape() != relations.shape() {
        return Err(TrainError::Tensor(TensorError::DimensionMismatch {
            op: "hint_loss",
            lhs: embeddings.shape(),
            rhs: relations.shape(),
        }));
    }
    let batch = embeddings.dim(0) as f64;
    let diff = tape.sub(relations, embeddings)?;
    let sq = tape.mul(&diff, &diff)?;
    Ok(tape.scale(&tape.sum_all(&sq)?, 1.0 / batch)?)
}

/// Weighted combination of the parts. Disabled terms are dropped from the
/// graph entirely, not multiplied by zero.
pub fn total_loss(
    tape: &Tape,
    class_graph: &Tensor,
    class_relation: &Tensor,
    distill: Option<&Tensor>,
    hint: Option<&Tensor>,
    w: &LossWeights,
) -> Result<Tensor, TrainError> {
    w.validate()?;
    let class_sum = tape.add(class_graph, class_relation)?;
    let mut loss = tape.scale(&class_sum, w.alpha)?;
    if w.use_distill {
        let d = distill.ok_or_else(|| TrainError::Contract("distillation enabled but no term given".into()))?;
        loss = tape.add(&loss, &tape.scale(d, 1.0 - w.alpha)?)?;
    }
    if w.use_hint {
        let h = hint.ok_or_else(|| TrainError::Contract("hint enabled but no term given".into()))?;
        loss = tape.add(&loss, &tape.scale(h, w.beta)?)?;
    }
    Ok(loss)
}
