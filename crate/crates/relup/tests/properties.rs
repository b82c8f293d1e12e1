//! Property checks over randomized inputs.

use proptest::prelude::*;

use relup::data::{batch_graphs, stratified_folds, Dataset, FeatureMatrix, Featurization, Graph};
use relup::tensor::{Tape, Tensor};
use relup::train::distill_loss;

fn finite_val() -> impl Strategy<Value = f64> {
    -10.0..10.0f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_probability_vectors(
        rows in 1usize..6,
        cols in 1usize..8,
        temp in 0.1..10.0f64,
        seed in any::<u64>(),
    ) {
        let mut state = seed;
        let data: Vec<f64> = (0..rows * cols).map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 16.0 - 8.0
        }).collect();
        let t = Tensor::new(vec![rows, cols], data).unwrap();
        let tape = Tape::new();
        let y = tape.softmax_rows(&t, temp).unwrap().data_vec();
        for i in 0..rows {
            let row = &y[i * cols..(i + 1) * cols];
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "row sum {total}");
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn segment_sum_backward_copies_upstream_gradients_exactly(
        rows in 1usize..30,
        d in 1usize..5,
        num_segments in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let data: Vec<f64> = (0..rows * d).map(|_| next()).collect();
        let ids: Vec<usize> = (0..rows).map(|_| (next().abs() * num_segments as f64) as usize % num_segments).collect();
        let upstream: Vec<f64> = (0..num_segments * d).map(|_| next()).collect();

        let x = Tensor::new(vec![rows, d], data).unwrap().requires_grad(true);
        let w = Tensor::new(vec![num_segments, d], upstream.clone()).unwrap();
        let tape = Tape::new();
        let seg = tape.segment_sum(&x, &ids, num_segments).unwrap();
        let loss = tape.sum_all(&tape.mul(&seg, &w).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        let grad = x.grad().unwrap();
        for (i, &id) in ids.iter().enumerate() {
            for j in 0..d {
                prop_assert_eq!(grad[i * d + j].to_bits(), upstream[id * d + j].to_bits());
            }
        }
    }

    #[test]
    fn kl_divergence_is_nonnegative(
        cols in 2usize..6,
        rows in 1usize..4,
        seed in any::<u64>(),
        temp in 0.5..5.0f64,
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 4.0
        };
        let a = Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| next()).collect()).unwrap();
        let b = Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| next()).collect()).unwrap();
        let tape = Tape::new();
        let kl = distill_loss(&tape, &a, &b, temp, false).unwrap().item();
        prop_assert!(kl >= -1e-12, "KL came out {kl}");
    }

    #[test]
    fn kl_divergence_vanishes_for_per_row_shifts(
        cols in 2usize..6,
        shift in -5.0..5.0f64,
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let logits: Vec<f64> = (0..cols).map(|_| next()).collect();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let a = Tensor::new(vec![1, cols], logits).unwrap();
        let b = Tensor::new(vec![1, cols], shifted).unwrap();
        let tape = Tape::new();
        let kl = distill_loss(&tape, &a, &b, 2.0, false).unwrap().item();
        prop_assert!(kl.abs() < 1e-10, "shift-invariant KL should be 0, got {kl}");
    }

    #[test]
    fn batching_permutes_with_the_input_order(
        sizes in prop::collection::vec(1usize..6, 1..6),
        rotation in 0usize..5,
    ) {
        let graphs: Vec<Graph> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let feats = FeatureMatrix::new(1, (0..n).map(|v| (i * 100 + v) as f64).collect());
                let edges = if n > 1 { vec![(0, 1), (1, 0)] } else { vec![] };
                Graph::new(n, edges, feats, i % 2).unwrap()
            })
            .collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        let k = refs.len();
        let rot = rotation % k;
        let mut rotated = refs.clone();
        rotated.rotate_left(rot);

        let a = batch_graphs(&refs).unwrap();
        let b = batch_graphs(&rotated).unwrap();
        // labels permute identically
        let mut expect_labels = a.labels.clone();
        expect_labels.rotate_left(rot);
        prop_assert_eq!(&b.labels, &expect_labels);
        // per-graph segments carry their features with them
        for (new_pos, graph_ref) in rotated.iter().enumerate() {
            let rows: Vec<usize> = b
                .graph_indicator
                .iter()
                .enumerate()
                .filter(|(_, &g)| g == new_pos)
                .map(|(i, _)| i)
                .collect();
            prop_assert_eq!(rows.len(), graph_ref.num_nodes);
            let bd = b.node_features.data_vec();
            for (local, &row) in rows.iter().enumerate() {
                prop_assert_eq!(bd[row], graph_ref.node_features.row(local)[0]);
            }
        }
    }

    #[test]
    fn folds_partition_for_any_label_mix(
        n in 20usize..80,
        classes in 2usize..4,
        seed in any::<u64>(),
    ) {
        let graphs: Vec<Graph> = (0..n)
            .map(|i| {
                Graph::new(2, vec![(0, 1), (1, 0)], FeatureMatrix::new(1, vec![1.0, 1.0]), i % classes).unwrap()
            })
            .collect();
        let ds = Dataset {
            name: "prop".into(),
            graphs,
            num_classes: classes,
            feature_dim: 1,
            featurization: Featurization::UniformConstant,
        };
        let plans = stratified_folds(&ds, 10, seed).unwrap();
        let mut seen: Vec<usize> = plans.iter().flat_map(|p| p.test_ids.iter().copied()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        for p in &plans {
            let mut all: Vec<usize> = p.train_ids.iter().chain(&p.val_ids).chain(&p.test_ids).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn additive_identity_holds_elementwise(data in prop::collection::vec(finite_val(), 1..40)) {
        let n = data.len();
        let x = Tensor::new(vec![1, n], data.clone()).unwrap();
        let zeros = Tensor::zeros(vec![1, n]);
        let tape = Tape::new();
        let y = tape.add(&x, &zeros).unwrap();
        prop_assert_eq!(y.data_vec(), data);
    }
}
