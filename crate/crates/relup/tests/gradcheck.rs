//! Central finite-difference validation of every backward rule, plus the
//! full pipeline loss on a small micro-batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relup::data::{generate_synthetic, Dataset};
use relup::tensor::gradcheck::{max_rel_error, numeric_grad};
use relup::tensor::{Tape, Tensor};
use relup::train::{
    classification_loss, distill_loss, forward, hint_loss, total_loss, LossWeights, Model,
    ModelConfig,
};

const EPSILON: f64 = 1e-5;
const OP_TOL: f64 = 1e-4;
const PIPELINE_TOL: f64 = 1e-3;

fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::new(shape, data).unwrap().requires_grad(true)
}

/// Checks every parameter's analytic gradient of `loss` against central
/// differences. `loss(true)` must run a backward pass; `loss(false)` must
/// only evaluate.
fn fd_assert<F>(params: &[(&str, Tensor)], mut loss: F, tol: f64)
where
    F: FnMut(bool) -> f64,
{
    for (_, p) in params {
        p.zero_grad();
    }
    loss(true);
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(name, p)| p.grad().unwrap_or_else(|| panic!("{name}: no grad")))
        .collect();
    for ((name, p), a) in params.iter().zip(&analytic) {
        let numeric = numeric_grad(p, EPSILON, &mut || loss(false));
        let err = max_rel_error(a, &numeric);
        assert!(err < tol, "{name}: max relative error {err:.3e} >= {tol:.0e}");
    }
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(vec![4, 3], &mut rng);
    let b = rand_tensor(vec![3, 5], &mut rng);
    let w = rand_tensor(vec![4, 5], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let c = tape.matmul(&a, &b).unwrap();
        let l = tape.sum_all(&tape.mul(&c, &w).unwrap()).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("a", a.clone()), ("b", b.clone())], loss, OP_TOL);
}

#[test]
fn matmul_nt_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(vec![4, 3], &mut rng);
    let b = rand_tensor(vec![5, 3], &mut rng);
    let w = rand_tensor(vec![4, 5], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let c = tape.matmul_nt(&a, &b).unwrap();
        let l = tape.sum_all(&tape.mul(&c, &w).unwrap()).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("a", a.clone()), ("b", b.clone())], loss, OP_TOL);
}

#[test]
fn elementwise_and_broadcast_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(vec![3, 4], &mut rng);
    let b = rand_tensor(vec![3, 4], &mut rng);
    let row = rand_tensor(vec![4], &mut rng);
    let w = rand_tensor(vec![3, 4], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let sum = tape.add(&a, &b).unwrap();
        let shifted = tape.sub(&sum, &row).unwrap();
        let scaled = tape.mul(&shifted, &row).unwrap(); // row broadcast through mul
        let mixed = tape.mul(&scaled, &b).unwrap();
        let l = tape.sum_all(&tape.mul(&mixed, &w).unwrap()).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(
        &[("a", a.clone()), ("b", b.clone()), ("row", row.clone())],
        loss,
        OP_TOL,
    );
}

#[test]
fn relu_exp_log_scale_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(vec![3, 3], &mut rng);
    // keep log inputs strictly positive and away from the relu kink
    let pos = Tensor::new(
        vec![3, 3],
        (0..9).map(|_| 0.2 + rng.random::<f64>()).collect(),
    )
    .unwrap()
    .requires_grad(true);
    let loss = |back: bool| {
        let tape = Tape::new();
        let r = tape.relu(&a).unwrap();
        let e = tape.exp(&tape.scale(&r, 0.5).unwrap()).unwrap();
        let lg = tape.log(&pos).unwrap();
        let l = tape.sum_all(&tape.add(&e, &lg).unwrap()).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("a", a.clone()), ("pos", pos.clone())], loss, OP_TOL);
}

#[test]
fn scale_by_scalar_tensor_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(vec![2, 3], &mut rng);
    let s = rand_tensor(vec![1], &mut rng);
    let w = rand_tensor(vec![2, 3], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let y = tape.scale_by(&a, &s).unwrap();
        let l = tape.sum_all(&tape.mul(&y, &w).unwrap()).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("a", a.clone()), ("s", s.clone())], loss, OP_TOL);
}

#[test]
fn softmax_and_log_softmax_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = rand_tensor(vec![3, 5], &mut rng);
    let b = rand_tensor(vec![3, 5], &mut rng);
    let w = rand_tensor(vec![3, 5], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let s = tape.softmax_rows(&a, 2.0).unwrap();
        let ls = tape.log_softmax_rows(&b, 3.0).unwrap();
        let l = tape
            .sum_all(&tape.mul(&tape.add(&s, &ls).unwrap(), &w).unwrap())
            .unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("a", a.clone()), ("b", b.clone())], loss, OP_TOL);
}

#[test]
fn segment_ops_and_gather_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(vec![6, 3], &mut rng);
    let ids = vec![0usize, 1, 0, 2, 1, 0];
    let gather_idx = vec![2usize, 0, 2, 1];
    let coeffs = vec![0.5, -1.5, 2.0, 0.25];
    let w = rand_tensor(vec![4, 3], &mut rng).requires_grad(false);
    let w2 = rand_tensor(vec![3, 3], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let seg = tape.segment_sum(&a, &ids, 3).unwrap();
        let gathered = tape.gather_rows(&seg, &gather_idx).unwrap();
        let scaled = tape.scale_rows(&gathered, &coeffs).unwrap();
        let l1 = tape.sum_all(&tape.mul(&scaled, &w).unwrap()).unwrap();
        let mx = tape.segment_max(&a, &ids, 3).unwrap();
        let l2 = tape.sum_all(&tape.mul(&mx, &w2).unwrap()).unwrap();
        let l = tape.add(&l1, &l2).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("a", a.clone())], loss, OP_TOL);
}

#[test]
fn concat_cols_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = rand_tensor(vec![3, 2], &mut rng);
    let b = rand_tensor(vec![3, 4], &mut rng);
    let w = rand_tensor(vec![3, 6], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let cat = tape.concat_cols(&[a.clone(), b.clone()]).unwrap();
        let l = tape.sum_all(&tape.mul(&cat, &w).unwrap()).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("a", a.clone()), ("b", b.clone())], loss, OP_TOL);
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = rand_tensor(vec![3, 6], &mut rng);
    let gain = rand_tensor(vec![6], &mut rng);
    let bias = rand_tensor(vec![6], &mut rng);
    let w = rand_tensor(vec![3, 6], &mut rng).requires_grad(false);
    let loss = |back: bool| {
        let tape = Tape::new();
        let y = tape.layer_norm(&a, &gain, &bias, 1e-5).unwrap();
        let l = tape.sum_all(&tape.mul(&y, &w).unwrap()).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(
        &[("a", a.clone()), ("gain", gain.clone()), ("bias", bias.clone())],
        loss,
        OP_TOL,
    );
}

#[test]
fn dropout_backward_applies_the_saved_mask() {
    // with a fixed mask dropout is linear; verify the backward rule against
    // the mask recovered from the forward output
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<f64> = (0..40).map(|_| 1.0 + rng.random::<f64>()).collect();
    let a = Tensor::new(vec![4, 10], data.clone()).unwrap().requires_grad(true);
    let tape = Tape::new();
    let mut drop_rng = ChaCha8Rng::seed_from_u64(99);
    let y = tape.dropout(&a, 0.4, true, &mut drop_rng).unwrap();
    let l = tape.sum_all(&y).unwrap();
    tape.backward(&l).unwrap();
    let grad = a.grad().unwrap();
    let out = y.data_vec();
    for i in 0..40 {
        let mask_scale = out[i] / data[i]; // 0 or 1/(1-rate)
        assert!((grad[i] - mask_scale).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits = rand_tensor(vec![4, 3], &mut rng);
    let labels = vec![0usize, 2, 1, 2];
    let loss = |back: bool| {
        let tape = Tape::new();
        let l = tape.cross_entropy(&logits, &labels).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(&[("logits", logits.clone())], loss, OP_TOL);
}

#[test]
fn loss_term_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let lg = rand_tensor(vec![3, 4], &mut rng);
    let lr = rand_tensor(vec![3, 4], &mut rng);
    let e = rand_tensor(vec![3, 6], &mut rng);
    let r = rand_tensor(vec![3, 6], &mut rng);
    let labels = vec![1usize, 0, 3];
    let w = LossWeights {
        alpha: 0.3,
        beta: 0.01,
        temperature: 2.5,
        use_distill: true,
        use_hint: true,
        t2_rescale: false,
    };
    let loss = |back: bool| {
        let tape = Tape::new();
        let cg = classification_loss(&tape, &lg, &labels).unwrap();
        let cr = classification_loss(&tape, &lr, &labels).unwrap();
        let d = distill_loss(&tape, &lg, &lr, w.temperature, w.t2_rescale).unwrap();
        let h = hint_loss(&tape, &e, &r).unwrap();
        let l = total_loss(&tape, &cg, &cr, Some(&d), Some(&h), &w).unwrap();
        if back {
            tape.backward(&l).unwrap();
        }
        l.item()
    };
    fd_assert(
        &[
            ("logits_graph", lg.clone()),
            ("logits_relation", lr.clone()),
            ("embeddings", e.clone()),
            ("relations", r.clone()),
        ],
        loss,
        OP_TOL,
    );
}

fn micro_batch_loss(model: &Model, dataset: &Dataset, config: &ModelConfig, back: bool) -> f64 {
    let batch = dataset.batch(&[0, 3, 5]).unwrap();
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = forward(&tape, model, &batch, true, false, &mut rng).unwrap();
    let w = &config.loss;
    let cg = classification_loss(&tape, &pass.logits_graph, &batch.labels).unwrap();
    let cr = classification_loss(&tape, pass.logits_relation.as_ref().unwrap(), &batch.labels).unwrap();
    let d = distill_loss(
        &tape,
        &pass.logits_graph,
        pass.logits_relation.as_ref().unwrap(),
        w.temperature,
        w.t2_rescale,
    )
    .unwrap();
    let h = hint_loss(&tape, &pass.embeddings, pass.relation_embeddings.as_ref().unwrap()).unwrap();
    let l = total_loss(&tape, &cg, &cr, Some(&d), Some(&h), w).unwrap();
    if back {
        tape.backward(&l).unwrap();
    }
    l.item()
}

/// Every trainable parameter of the full pipeline (two-layer GIN encoder,
/// two-head relation encoder with d_g = 8, both classifier heads) against
/// central differences on a 3-graph micro-batch.
#[test]
fn full_pipeline_gradients_on_a_micro_batch() {
    let dataset = generate_synthetic(8, 13).unwrap();
    let config = ModelConfig {
        hidden: 8,
        layers: 2,
        heads: 2,
        relation_layers: 1,
        dropout: 0.0,
        loss: LossWeights {
            alpha: 0.3,
            beta: 0.01,
            temperature: 2.0,
            ..LossWeights::default()
        },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = Model::build(&config, dataset.feature_dim, dataset.num_classes, &mut rng).unwrap();

    let named = model.named_params();
    for (_, p) in &named {
        p.zero_grad();
    }
    micro_batch_loss(&model, &dataset, &config, true);
    for (name, p) in &named {
        let analytic = p.grad().unwrap_or_else(|| panic!("{name}: no grad"));
        let numeric = numeric_grad(p, EPSILON, &mut || {
            micro_batch_loss(&model, &dataset, &config, false)
        });
        let err = max_rel_error(&analytic, &numeric);
        assert!(
            err < PIPELINE_TOL,
            "{name}: max relative error {err:.3e} >= {PIPELINE_TOL:.0e}"
        );
    }
}

/// Gradient flow through a full encode + readout for every backbone.
#[test]
fn encoder_gradients_for_every_backbone() {
    use relup::gnn::Backbone;
    for backbone in [Backbone::Gcn, Backbone::Gin, Backbone::Sage] {
        let dataset = generate_synthetic(6, 15).unwrap();
        let config = ModelConfig {
            backbone,
            hidden: 6,
            layers: 2,
            heads: 2,
            dropout: 0.0,
            relating_up: false,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let model = Model::build(&config, dataset.feature_dim, dataset.num_classes, &mut rng).unwrap();
        let run = |back: bool| {
            let batch = dataset.batch(&[0, 2, 4]).unwrap();
            let tape = Tape::new();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let pass = forward(&tape, &model, &batch, true, false, &mut drop_rng).unwrap();
            let l = classification_loss(&tape, &pass.logits_graph, &batch.labels).unwrap();
            if back {
                tape.backward(&l).unwrap();
            }
            l.item()
        };
        let named = model.named_params();
        for (_, p) in &named {
            p.zero_grad();
        }
        run(true);
        for (name, p) in &named {
            let analytic = p.grad().unwrap_or_else(|| panic!("{name}: no grad"));
            let numeric = numeric_grad(p, EPSILON, &mut || run(false));
            let err = max_rel_error(&analytic, &numeric);
            assert!(
                err < OP_TOL,
                "{:?} {name}: rel error {err:.3e}",
                backbone
            );
        }
    }
}
