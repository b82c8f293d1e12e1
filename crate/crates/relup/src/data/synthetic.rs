//! Offline synthetic corpus: cycles versus paths.
//!
//! The two classes are separable from the degree profile alone (a path has
//! exactly two degree-1 endpoints, a cycle has none), which makes the corpus
//! a fast end-to-end sanity check that needs no downloads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, FeatureMatrix, Featurization, Graph, Result};

/// Generates `num_graphs` graphs, half cycles (label 0) and half paths
/// (label 1), with 6..=12 nodes each and degree-one-hot features.
pub fn generate_synthetic(num_graphs: usize, seed: u64) -> Result<Dataset> {
    if num_graphs < 2 || num_graphs % 2 != 0 {
        return Err(DataError::Contract(format!(
            "synthetic corpus needs an even number of graphs >= 2, got {num_graphs}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(num_graphs);
    for i in 0..num_graphs {
        let n = rng.random_range(6..=12usize);
        specs.push((n, i < num_graphs / 2));
    }

    // degree one-hot over the dataset-wide max degree (2 for these families)
    let feature_dim = 3;
    let mut graphs = Vec::with_capacity(num_graphs);
    for (n, is_cycle) in specs {
        let mut edges = Vec::with_capacity(2 * n);
        let links = if is_cycle { n } else { n - 1 };
        for j in 0..links {
            let u = j;
            let v = (j + 1) % n;
            edges.push((u, v));
            edges.push((v, u));
        }
        edges.sort_unstable();
        let mut deg = vec![0usize; n];
        for &(u, _) in &edges {
            deg[u] += 1;
        }
        let mut data = vec![0.0; n * feature_dim];
        for (v, &d) in deg.iter().enumerate() {
            data[v * feature_dim + d] = 1.0;
        }
        let label = usize::from(!is_cycle);
        graphs.push(Graph::new(n, edges, FeatureMatrix::new(feature_dim, data), label)?);
    }

    Ok(Dataset {
        name: format!("synthetic-{num_graphs}"),
        graphs,
        num_classes: 2,
        feature_dim,
        featurization: Featurization::DegreeOneHot,
    })
}

/// Flips the labels of a `fraction` of the graphs, chosen with `seed`.
/// Multi-class labels move to a different class uniformly at random.
pub fn apply_label_noise(dataset: &mut Dataset, fraction: f64, seed: u64) {
    assert!((0.0..=1.0).contains(&fraction), "noise fraction out of range");
    if fraction == 0.0 || dataset.num_classes < 2 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<usize> = (0..dataset.len()).collect();
    ids.shuffle(&mut rng);
    let flips = (fraction * dataset.len() as f64).round() as usize;
    for &i in ids.iter().take(flips) {
        let old = dataset.graphs[i].label;
        let shift = rng.random_range(1..dataset.num_classes);
        dataset.graphs[i].label = (old + shift) % dataset.num_classes;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_graphs_split_into_cycles_and_paths() {
        let ds = generate_synthetic(4, 7).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.class_counts(), vec![2, 2]);
        for g in ds.graphs.iter().filter(|g| g.label == 0) {
            assert!(g.degrees().iter().all(|&d| d == 2), "cycle node degree must be 2");
        }
    }

    #[test]
    fn paths_have_exactly_two_endpoints() {
        let ds = generate_synthetic(10, 3).unwrap();
        for g in ds.graphs.iter().filter(|g| g.label == 1) {
            let endpoints = g.degrees().iter().filter(|&&d| d == 1).count();
            assert_eq!(endpoints, 2);
        }
    }

    #[test]
    fn degree_histogram_separates_the_classes_perfectly() {
        let ds = generate_synthetic(60, 11).unwrap();
        let mut correct = 0;
        for g in &ds.graphs {
            let has_endpoint = g.degrees().iter().any(|&d| d == 1);
            let predicted = usize::from(has_endpoint);
            if predicted == g.label {
                correct += 1;
            }
        }
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn odd_or_tiny_counts_are_rejected() {
        assert!(generate_synthetic(3, 0).is_err());
        assert!(generate_synthetic(0, 0).is_err());
    }

    #[test]
    fn label_noise_flips_the_requested_fraction() {
        let clean = generate_synthetic(50, 1).unwrap();
        let mut noisy = clean.clone();
        apply_label_noise(&mut noisy, 0.2, 9);
        let flipped = clean
            .graphs
            .iter()
            .zip(&noisy.graphs)
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert_eq!(flipped, 10);
    }
}
