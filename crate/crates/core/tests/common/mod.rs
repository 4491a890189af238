//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rxcycle::drug_graph::{build_adjacency, DrugGraph, EdgeRecord, GraphMode, Normalization};
use rxcycle::gcn::{Aggregation, Example, GcnConfig, GcnModel, PairInput};

/// A graph with the given features and undirected weighted edges.
pub fn graph(features: Array2<f64>, edges: &[(usize, usize, f64)], normalization: Normalization) -> DrugGraph {
    let n = features.nrows();
    let recs: Vec<EdgeRecord> = edges
        .iter()
        .map(|&(i, j, w)| EdgeRecord {
            i,
            j,
            w_g: None,
            n_g: 0,
            w_p: None,
            n_p: 0,
            w_o: None,
            weight: w,
        })
        .collect();
    let (raw, adjacency, edge_mask) = build_adjacency(n, &recs, normalization);
    DrugGraph {
        drugs: (0..n).map(|i| format!("d{i:02}")).collect(),
        features,
        raw,
        adjacency,
        edge_mask,
        edges: recs,
        mode: GraphMode::Local { alpha: 0.5 },
        normalization,
    }
}

pub struct GcnCase {
    pub model: GcnModel,
    pub graph: DrugGraph,
    pub labeled: Vec<Example>,
    pub pseudo: Vec<Example>,
    pub gamma: f64,
}

fn drug_set(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let k = rng.random_range(1..=2.min(n));
    let mut s: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
    s.dedup();
    s
}

fn example(rng: &mut ChaCha8Rng, n: usize) -> Example {
    let a = drug_set(rng, n);
    let b = loop {
        let b = drug_set(rng, n);
        if !b.iter().any(|j| a.contains(j)) {
            break b;
        }
    };
    let diff = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    Example {
        input: PairInput { a, b, diff },
        target: rng.random_range(0.0..5.0),
    }
}

/// Random small graph, model with non-zero biases, and random examples.
pub fn random_gcn_case(seed: u64) -> GcnCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=7);
    let d_in = rng.random_range(2..=4);
    let depth = rng.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=4)).collect();
    let features = Array2::from_shape_fn((n, d_in), |_| rng.random_range(-1.0..1.0));
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                edges.push((i, j, rng.random_range(0.1..5.0)));
            }
        }
    }
    let normalization = if seed.is_multiple_of(2) {
        Normalization::Row
    } else {
        Normalization::None
    };
    let aggregation = if seed.is_multiple_of(3) {
        Aggregation::Unweighted
    } else {
        Aggregation::Weighted
    };
    let graph = graph(features, &edges, normalization);
    let config = GcnConfig {
        hidden,
        aggregation,
        ..GcnConfig::default()
    };
    let mut model = GcnModel::new(d_in, config, seed);
    for layer in &mut model.layers {
        layer.v.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    model.head.b = rng.random_range(-1.0..1.0);
    let labeled = (0..rng.random_range(1..=5)).map(|_| example(&mut rng, n)).collect();
    let pseudo = (0..rng.random_range(0..=5)).map(|_| example(&mut rng, n)).collect();
    let gamma = rng.random_range(0.0..1.0);
    GcnCase {
        model,
        graph,
        labeled,
        pseudo,
        gamma,
    }
}
