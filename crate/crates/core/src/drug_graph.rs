//! Drug relationship graph: node set, initial node features and the weighted
//! adjacency built from gold labels, backbone pseudo labels and (optionally)
//! ontology distances.
//!
//! A sentence pair contributes to the unordered drug pair `(i, j)` when `i`
//! occurs in one sentence and `j` in the other. Each sentence pair counts at
//! most once per drug pair, and same-drug pairs never form edges.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::emb::EmbeddingStore;
use crate::error::{Error, Result};
use crate::ontology::{medical_weight, DistanceMatrix};
use crate::par::Exec;

/// Drug indices found in the two sentences of one pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairDrugs {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl PairDrugs {
    /// Unordered cross-sentence drug pairs `(min, max)` induced by this pair.
    pub fn drug_pairs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .a
            .iter()
            .flat_map(|&i| self.b.iter().map(move |&j| (i.min(j), i.max(j))))
            .filter(|(i, j)| i != j)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Sorted, deduplicated drug names across all sentences.
pub fn collect_drug_nodes<'a, I, S>(sentence_drugs: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut v: Vec<String> = sentence_drugs
        .into_iter()
        .flat_map(|ds| ds.iter().map(|d| d.as_ref().to_string()))
        .collect();
    v.sort();
    v.dedup();
    v
}

/// Sentence-pair indices (dataset order) for each drug pair.
#[derive(Debug, Clone, Default)]
pub struct PairIndex {
    by_edge: BTreeMap<(usize, usize), Vec<usize>>,
}

/// Mean of a set of scores together with how many were averaged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    pub mean: Option<f64>,
    pub count: usize,
}

impl Evidence {
    pub fn none() -> Self {
        Evidence::default()
    }

    pub fn of(mean: f64, count: usize) -> Self {
        Evidence {
            mean: Some(mean),
            count,
        }
    }
}

impl PairIndex {
    pub fn build(pairs: &[PairDrugs]) -> Self {
        let mut by_edge: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (k, p) in pairs.iter().enumerate() {
            for e in p.drug_pairs() {
                by_edge.entry(e).or_default().push(k);
            }
        }
        PairIndex { by_edge }
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.by_edge.keys().copied()
    }

    pub fn pairs_of(&self, i: usize, j: usize) -> &[usize] {
        self.by_edge.get(&(i.min(j), i.max(j))).map_or(&[], Vec::as_slice)
    }

    /// Mean of `values[k]` over contributing pairs that carry a value. Sums in
    /// dataset order, then divides.
    pub fn mean(&self, i: usize, j: usize, values: &[Option<f64>]) -> Evidence {
        let (mut sum, mut n) = (0.0, 0usize);
        for &k in self.pairs_of(i, j) {
            if let Some(v) = values[k] {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            Evidence::none()
        } else {
            Evidence::of(sum / n as f64, n)
        }
    }
}

/// Mean gold score over training pairs containing `(i, j)`. `gold` holds
/// `None` for every non-training pair.
pub fn ground_weight(index: &PairIndex, i: usize, j: usize, gold: &[Option<f64>]) -> Evidence {
    index.mean(i, j, gold)
}

/// Mean backbone prediction over all pairs containing `(i, j)`.
pub fn pseudo_weight(index: &PairIndex, i: usize, j: usize, predictions: &[Option<f64>]) -> Evidence {
    index.mean(i, j, predictions)
}

/// Local edge weight; `None` when neither source has evidence. A missing
/// pseudo mean leaves the ground mean alone and a missing ground mean lets
/// the pseudo mean stand alone.
pub fn combine_local(ground: Evidence, pseudo: Evidence, alpha: f64) -> Option<f64> {
    match (
        ground.mean.filter(|_| ground.count > 0),
        pseudo.mean.filter(|_| pseudo.count > 0),
    ) {
        (Some(g), Some(p)) => Some((1.0 - alpha) * g + alpha * p),
        (None, Some(p)) => Some(p),
        (Some(g), None) => Some(g),
        (None, None) => None,
    }
}

/// Ontology-augmented edge weight. Without ground evidence `alpha` is 1;
/// without any local evidence the ontology weight stands alone; without
/// pseudo evidence the ground mean takes the pseudo slot.
pub fn combine_medical(ground: Evidence, pseudo: Evidence, ontology: f64, alpha: f64, beta: f64) -> f64 {
    match (
        ground.mean.filter(|_| ground.count > 0),
        pseudo.mean.filter(|_| pseudo.count > 0),
    ) {
        (Some(g), Some(p)) => (1.0 - alpha) * g + alpha * ((1.0 - beta) * p + beta * ontology),
        (None, Some(p)) => (1.0 - beta) * p + beta * ontology,
        (Some(g), None) => g + alpha * ((1.0 - beta) * g + beta * ontology - g),
        (None, None) => ontology,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GraphMode {
    Local { alpha: f64 },
    Medical { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    #[default]
    Row,
}

/// Per-edge weight provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub i: usize,
    pub j: usize,
    pub w_g: Option<f64>,
    pub n_g: usize,
    pub w_p: Option<f64>,
    pub n_p: usize,
    pub w_o: Option<f64>,
    pub weight: f64,
}

/// Ontology distances for the graph's drug list.
#[derive(Debug, Clone, Copy)]
pub struct OntologyWeights<'a> {
    pub distances: &'a DistanceMatrix,
    pub p_max: u32,
}

/// Everything edge weights are computed from. Slices indexed by sentence
/// pair are aligned with `pairs`.
#[derive(Debug, Clone, Copy)]
pub struct GraphInputs<'a> {
    pub n_drugs: usize,
    pub pairs: &'a [PairDrugs],
    pub index: &'a PairIndex,
    /// Gold labels of training pairs; `None` elsewhere.
    pub gold: &'a [Option<f64>],
    /// Backbone predictions over the whole dataset.
    pub pseudo: &'a [Option<f64>],
    pub ontology: Option<OntologyWeights<'a>>,
}

/// Edge records for every edge the mode admits, ordered by `(i, j)`.
pub fn edge_records(inputs: &GraphInputs<'_>, mode: GraphMode, exec: Exec) -> Result<Vec<EdgeRecord>> {
    let candidates: Vec<(usize, usize)> = match mode {
        GraphMode::Local { .. } => inputs.index.edges().collect(),
        GraphMode::Medical { .. } => {
            let onto = inputs
                .ontology
                .ok_or_else(|| Error::InvalidArgument("medical graph requires ontology distances".into()))?;
            if onto.distances.len() != inputs.n_drugs {
                return Err(Error::Dimension(format!(
                    "distance matrix covers {} drugs, graph has {}",
                    onto.distances.len(),
                    inputs.n_drugs
                )));
            }
            let n = inputs.n_drugs;
            (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| {
                    !inputs.index.pairs_of(i, j).is_empty()
                        || medical_weight(onto.distances.get(i, j), onto.p_max) > 0.0
                })
                .collect()
        }
    };
    let records = exec.map(&candidates, |&(i, j)| {
        let g = ground_weight(inputs.index, i, j, inputs.gold);
        let p = pseudo_weight(inputs.index, i, j, inputs.pseudo);
        let (w_o, weight) = match mode {
            GraphMode::Local { alpha } => (None, combine_local(g, p, alpha)),
            GraphMode::Medical { alpha, beta } => {
                let onto = inputs.ontology.expect("checked above");
                let w_o = medical_weight(onto.distances.get(i, j), onto.p_max);
                (Some(w_o), Some(combine_medical(g, p, w_o, alpha, beta)))
            }
        };
        weight.map(|weight| EdgeRecord {
            i,
            j,
            w_g: g.mean,
            n_g: g.count,
            w_p: p.mean,
            n_p: p.count,
            w_o,
            weight,
        })
    });
    Ok(records.into_iter().flatten().collect())
}

/// Symmetric raw weights, the normalized aggregation matrix and the edge mask.
pub fn build_adjacency(
    n: usize,
    edges: &[EdgeRecord],
    normalization: Normalization,
) -> (Array2<f64>, Array2<f64>, Array2<bool>) {
    let mut raw = Array2::<f64>::zeros((n, n));
    let mut mask = Array2::from_elem((n, n), false);
    for e in edges {
        raw[[e.i, e.j]] = e.weight;
        raw[[e.j, e.i]] = e.weight;
        mask[[e.i, e.j]] = true;
        mask[[e.j, e.i]] = true;
    }
    let adjacency = match normalization {
        Normalization::None => raw.clone(),
        Normalization::Row => {
            let mut a = raw.clone();
            for mut row in a.rows_mut() {
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.mapv_inplace(|x| x / s);
                }
            }
            a
        }
    };
    (raw, adjacency, mask)
}

/// A built drug graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugGraph {
    pub drugs: Vec<String>,
    /// Initial node features, one row per drug.
    pub features: Array2<f64>,
    /// Symmetric weights in `[0, 5]`, zero diagonal.
    pub raw: Array2<f64>,
    /// Aggregation weights (raw or row-normalized).
    pub adjacency: Array2<f64>,
    pub edge_mask: Array2<bool>,
    pub edges: Vec<EdgeRecord>,
    pub mode: GraphMode,
    pub normalization: Normalization,
}

impl DrugGraph {
    pub fn build(
        drugs: Vec<String>,
        features: Array2<f64>,
        inputs: &GraphInputs<'_>,
        mode: GraphMode,
        normalization: Normalization,
        exec: Exec,
    ) -> Result<Self> {
        if features.nrows() != drugs.len() || inputs.n_drugs != drugs.len() {
            return Err(Error::Dimension(format!(
                "{} drugs, {} feature rows, inputs for {}",
                drugs.len(),
                features.nrows(),
                inputs.n_drugs
            )));
        }
        let edges = edge_records(inputs, mode, exec)?;
        let (raw, adjacency, edge_mask) = build_adjacency(drugs.len(), &edges, normalization);
        Ok(DrugGraph {
            drugs,
            features,
            raw,
            adjacency,
            edge_mask,
            edges,
            mode,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.drugs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drugs.is_empty()
    }

    pub fn index_of(&self, drug: &str) -> Option<usize> {
        self.drugs.binary_search_by(|d| d.as_str().cmp(drug)).ok()
    }

    /// Interpretability dump: drugs plus per-edge provenance.
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .map(|e| {
                serde_json::json!({
                    "a": self.drugs[e.i],
                    "b": self.drugs[e.j],
                    "w_g": e.w_g,
                    "n_g": e.n_g,
                    "w_p": e.w_p,
                    "n_p": e.n_p,
                    "w_o": e.w_o,
                    "weight": e.weight,
                })
            })
            .collect();
        serde_json::json!({
            "drugs": self.drugs,
            "graph": self.mode,
            "normalization": self.normalization,
            "feature_dim": self.features.ncols(),
            "edges": edges,
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stable 64-bit hash used for seeding and feature hashing.
pub fn stable_hash(s: &str) -> u64 {
    fnv1a(s.as_bytes())
}

/// Pseudo-random unit vector derived from the drug name and a seed.
pub fn hashed_unit_vector(drug: &str, dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(drug) ^ seed.rotate_left(17));
    let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

/// Node features when no transformer embeddings are supplied.
pub fn fallback_embeddings(drugs: &[String], dim: usize, seed: u64) -> Array2<f64> {
    let mut x = Array2::zeros((drugs.len(), dim));
    for (i, d) in drugs.iter().enumerate() {
        x.row_mut(i).assign(&hashed_unit_vector(d, dim, seed));
    }
    x
}

/// Node features from transformer drug-span vectors: each drug's row is the
/// mean of its span vectors over the sentences that mention it. `mentions`
/// lists `(sentence id, drug)` occurrences.
pub fn init_node_embeddings<S: AsRef<str>>(
    drugs: &[String],
    mentions: &[(S, S)],
    store: &EmbeddingStore,
) -> Result<Array2<f64>> {
    let mut x = Array2::<f64>::zeros((drugs.len(), store.dim()));
    let mut counts = vec![0usize; drugs.len()];
    for (sentence, drug) in mentions {
        let Ok(i) = drugs.binary_search_by(|d| d.as_str().cmp(drug.as_ref())) else {
            continue;
        };
        if let Some(v) = store.span(sentence.as_ref(), drug.as_ref()) {
            x.row_mut(i)
                .zip_mut_with(&ndarray::ArrayView1::from(v), |a, b| *a += f64::from(*b));
            counts[i] += 1;
        }
    }
    let missing: Vec<&str> = drugs
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c == 0)
        .map(|(d, _)| d.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingEmbedding(missing.join(", ")));
    }
    for (mut row, &c) in x.rows_mut().into_iter().zip(&counts) {
        row /= c as f64;
    }
    Ok(x)
}
