//! The co-training loop and the weighted-sum ensemble.
//!
//! Iteration `t` of [`run_cycle`]:
//!
//! 1. for `t >= 1`, retrain the backbone from its seed on gold labels plus
//!    `gamma_b`-weighted auxiliary pseudo labels from iteration `t - 1`
//!    (iteration 0 reuses the bootstrap backbone trained on gold only);
//! 2. score every pair with the backbone;
//! 3. rebuild the drug graph from those scores;
//! 4. retrain the GCN from its seed on gold labels plus `gamma_a`-weighted
//!    backbone pseudo labels;
//! 5. score the test pairs with the GCN;
//! 6. record held-out metrics.
//!
//! Both networks restart from their seeds every iteration, so the only state
//! carried between iterations is the exchanged pseudo labels. Node features
//! are fixed for the whole run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    Backbone, BackboneObjective, BackboneScorer, EmbeddingScorer, LexicalScorer, PairText, Sentence,
};
use crate::checkpoint::Checkpoint;
use crate::concept_diff::{assemble_diff, ConceptDiffVector, DiffScaler, DIFF_DIM};
use crate::config::{BackboneKind, Config, Mode};
use crate::data::SentencePair;
use crate::drug_graph::{
    collect_drug_nodes, fallback_embeddings, init_node_embeddings, stable_hash, DrugGraph, GraphInputs,
    OntologyWeights, PairDrugs, PairIndex,
};
use crate::emb::EmbeddingStore;
use crate::error::{Error, Result};
use crate::gcn::{Example, GcnModel, PairInput};
use crate::metrics::{mse, pearson, PairRecord, Pearson};
use crate::ontology::{DistanceMatrix, IngredientGraph, PMaxScope};
use crate::par::Exec;
use crate::rx_parse::{extract_concepts, Lexicon, PrescriptionConcepts};

/// Seed for a named sub-component.
pub fn derive_seed(seed: u64, what: &str) -> u64 {
    stable_hash(what) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// A split dataset with everything that stays fixed across iterations.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub pairs: Vec<SentencePair>,
    pub sentence_ids: Vec<(String, String)>,
    pub concepts: Vec<(PrescriptionConcepts, PrescriptionConcepts)>,
    pub drugs: Vec<String>,
    pub pair_drugs: Vec<PairDrugs>,
    pub index: PairIndex,
    pub raw_diffs: Vec<ConceptDiffVector>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Initial node features.
    pub features: Array2<f64>,
    pub distances: Option<DistanceMatrix>,
    pub store: Option<Arc<EmbeddingStore>>,
}

impl Workspace {
    /// Parses every sentence and fixes node features. `pairs` must already
    /// carry split labels; pairs without one count as test pairs.
    pub fn prepare(
        pairs: Vec<SentencePair>,
        lexicon: &Lexicon,
        ontology: Option<&IngredientGraph>,
        store: Option<EmbeddingStore>,
        fallback_dim: usize,
        seed: u64,
        exec: Exec,
    ) -> Result<Self> {
        let parse = |text: &str, id: &str, side: &str| {
            extract_concepts(text, lexicon)
                .map(|p| p.concepts)
                .map_err(|e| Error::InvalidArgument(format!("pair `{id}` sentence {side}: {e}")))
        };
        let mut concepts = Vec::with_capacity(pairs.len());
        for p in &pairs {
            concepts.push((parse(&p.text_a, &p.id, "a")?, parse(&p.text_b, &p.id, "b")?));
        }
        let drugs = collect_drug_nodes(
            concepts
                .iter()
                .flat_map(|(a, b)| [a.drugs.as_slice(), b.drugs.as_slice()]),
        );
        let idx = |names: &[String]| -> Vec<usize> {
            names
                .iter()
                .map(|n| drugs.binary_search(n).expect("collected above"))
                .collect()
        };
        let pair_drugs: Vec<PairDrugs> = concepts
            .iter()
            .map(|(a, b)| PairDrugs {
                a: idx(&a.drugs),
                b: idx(&b.drugs),
            })
            .collect();
        let index = PairIndex::build(&pair_drugs);
        let raw_diffs = concepts.iter().map(|(a, b)| assemble_diff(a, b)).collect();
        let train: Vec<usize> = (0..pairs.len()).filter(|&k| pairs[k].is_train()).collect();
        let test: Vec<usize> = (0..pairs.len()).filter(|&k| !pairs[k].is_train()).collect();
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "need both train and test pairs, got {} and {}",
                train.len(),
                test.len()
            )));
        }
        let sentence_ids: Vec<(String, String)> = pairs.iter().map(SentencePair::sentence_ids).collect();
        let features = match &store {
            Some(s) => {
                s.check_sentences(sentence_ids.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]))?;
                let mentions: Vec<(&str, &str)> = sentence_ids
                    .iter()
                    .zip(&concepts)
                    .flat_map(|((sa, sb), (ca, cb))| {
                        let a = ca.drugs.iter().map(move |d| (sa.as_str(), d.as_str()));
                        let b = cb.drugs.iter().map(move |d| (sb.as_str(), d.as_str()));
                        a.chain(b)
                    })
                    .collect();
                init_node_embeddings(&drugs, &mentions, s)?
            }
            None => fallback_embeddings(&drugs, fallback_dim, derive_seed(seed, "features")),
        };
        let distances = ontology.map(|g| g.distance_matrix(&drugs, exec));
        Ok(Workspace {
            pairs,
            sentence_ids,
            concepts,
            drugs,
            pair_drugs,
            index,
            raw_diffs,
            train,
            test,
            features,
            distances,
            store: store.map(Arc::new),
        })
    }

    pub fn gold(&self, k: usize) -> Option<f64> {
        self.pairs[k].gold
    }

    pub fn pair_text(&self, k: usize) -> PairText<'_> {
        let (a, b) = &self.sentence_ids[k];
        PairText {
            a: Sentence {
                id: a,
                text: &self.pairs[k].text_a,
            },
            b: Sentence {
                id: b,
                text: &self.pairs[k].text_b,
            },
        }
    }

    /// Difference features, min-max scaled over training pairs when asked.
    pub fn diffs(&self, scale: bool) -> Vec<[f64; DIFF_DIM]> {
        let scaler = if scale {
            DiffScaler::fit(self.train.iter().map(|&k| &self.raw_diffs[k]))
        } else {
            DiffScaler::identity()
        };
        self.raw_diffs.iter().map(|d| scaler.apply(d)).collect()
    }

    pub fn p_max(&self, scope: PMaxScope) -> Option<u32> {
        let d = self.distances.as_ref()?;
        Some(match scope {
            PMaxScope::AllPairs => d.p_max(),
            PMaxScope::CoOccurring => d.p_max_over(self.index.edges()),
        })
    }

    pub fn new_backbone(&self, config: &Config) -> Result<Backbone> {
        Ok(match config.backbone {
            BackboneKind::Lexical => Backbone::Lexical(LexicalScorer::new(crate::backbone::LexicalConfig {
                seed: derive_seed(config.seed, "backbone"),
                ..config.lexical()
            })),
            BackboneKind::Embedding => {
                let store = self
                    .store
                    .clone()
                    .ok_or_else(|| Error::Config("embedding backbone needs an embeddings file".into()))?;
                Backbone::Embedding(EmbeddingScorer::new(store))
            }
        })
    }

    /// Builds the drug graph from backbone scores over every pair.
    pub fn graph(&self, config: &Config, pseudo_b: &[f64], exec: Exec) -> Result<DrugGraph> {
        let gold: Vec<Option<f64>> = (0..self.pairs.len())
            .map(|k| if self.pairs[k].is_train() { self.gold(k) } else { None })
            .collect();
        let pseudo: Vec<Option<f64>> = pseudo_b.iter().copied().map(Some).collect();
        let p_max = self.p_max(config.p_max_scope);
        let ontology = match config.mode {
            Mode::Local => None,
            Mode::Medical => Some(OntologyWeights {
                distances: self
                    .distances
                    .as_ref()
                    .ok_or_else(|| Error::Config("medical mode needs an ontology".into()))?,
                p_max: p_max.expect("distances present"),
            }),
        };
        let inputs = GraphInputs {
            n_drugs: self.drugs.len(),
            pairs: &self.pair_drugs,
            index: &self.index,
            gold: &gold,
            pseudo: &pseudo,
            ontology,
        };
        DrugGraph::build(
            self.drugs.clone(),
            self.features.clone(),
            &inputs,
            config.graph_mode(),
            config.normalization,
            exec,
        )
    }

    pub fn gcn_inputs(&self, graph: &DrugGraph, diffs: &[[f64; DIFF_DIM]]) -> Result<Vec<PairInput>> {
        self.concepts
            .iter()
            .zip(diffs)
            .map(|((a, b), d)| PairInput::resolve(graph, &a.drugs, &b.drugs, *d))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetMetrics {
    pub pearson: Pearson,
    pub mse: f64,
}

fn metrics_on(ws: &Workspace, idx: &[usize], pred: &[f64]) -> Result<Option<NetMetrics>> {
    let mut g = Vec::with_capacity(idx.len());
    for &k in idx {
        match ws.gold(k) {
            Some(y) => g.push(y),
            None => return Ok(None),
        }
    }
    let p: Vec<f64> = idx.iter().map(|&k| pred[k]).collect();
    if p.len() < 2 {
        return Ok(None);
    }
    Ok(Some(NetMetrics {
        pearson: pearson(&p, &g)?,
        mse: mse(&p, &g)?,
    }))
}

/// Snapshot after one completed iteration.
#[derive(Debug, Clone)]
pub struct CyclicState {
    pub iteration: usize,
    pub backbone: Checkpoint,
    pub gcn: Checkpoint,
    pub graph: DrugGraph,
    /// Backbone scores for every pair.
    pub pseudo_b: Vec<f64>,
    /// GCN scores for every pair (test entries are the exchanged labels).
    pub pseudo_a: Vec<f64>,
    /// Held-out metrics; absent when some test pair has no gold score.
    pub backbone_metrics: Option<NetMetrics>,
    pub gcn_metrics: Option<NetMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFit {
    pub lambda: f64,
    pub train_pearson: Pearson,
    pub test: Option<NetMetrics>,
}

#[derive(Debug, Clone)]
pub struct CycleHistory {
    pub bootstrap: Checkpoint,
    pub bootstrap_trace: Vec<f64>,
    pub states: Vec<CyclicState>,
    /// Ensemble of the iteration-0 backbone and GCN.
    pub ensemble: Option<EnsembleFit>,
}

impl CycleHistory {
    /// Held-out backbone Pearson of the final iteration.
    pub fn cyclic_pearson(&self) -> Option<f64> {
        self.states.last()?.backbone_metrics.map(|m| m.pearson.r)
    }

    /// Held-out backbone Pearson of iteration 0 (no co-training).
    pub fn baseline_pearson(&self) -> Option<f64> {
        self.states.first()?.backbone_metrics.map(|m| m.pearson.r)
    }

    pub fn backbone_curve(&self) -> Vec<Option<f64>> {
        self.states
            .iter()
            .map(|s| s.backbone_metrics.map(|m| m.pearson.r))
            .collect()
    }

    /// `iteration,network,pearson,mse`
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("iteration,network,pearson,mse\n");
        for st in &self.states {
            for (name, m) in [("backbone", st.backbone_metrics), ("gcn", st.gcn_metrics)] {
                if let Some(m) = m {
                    let _ = writeln!(s, "{},{name},{},{}", st.iteration, m.pearson.r, m.mse);
                }
            }
        }
        s
    }
}

/// `lambda * backbone + (1 - lambda) * gcn`
pub fn ensemble_score(backbone: f64, gcn: f64, lambda: f64) -> f64 {
    lambda * backbone + (1.0 - lambda) * gcn
}

/// Grid search over `lambda` in steps of 0.05 maximizing Pearson against
/// `gold`; near-ties (1e-12) go to the lambda closest to 0.5.
pub fn fit_lambda(backbone: &[f64], gcn: &[f64], gold: &[f64]) -> Result<(f64, Pearson)> {
    let mut best: Option<(f64, Pearson)> = None;
    for k in 0..=20 {
        let lambda = f64::from(k) / 20.0;
        let mix: Vec<f64> = backbone
            .iter()
            .zip(gcn)
            .map(|(b, g)| ensemble_score(*b, *g, lambda))
            .collect();
        let r = pearson(&mix, gold)?;
        best = match best {
            None => Some((lambda, r)),
            Some((bl, br)) => {
                let better =
                    r.r > br.r + 1e-12 || ((r.r - br.r).abs() <= 1e-12 && (lambda - 0.5).abs() < (bl - 0.5).abs());
                Some(if better { (lambda, r) } else { (bl, br) })
            }
        };
    }
    Ok(best.expect("grid is non-empty"))
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    fn write(&self, rel: &str, body: impl AsRef<[u8]>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

/// `id,split,gold,backbone,gcn`
pub fn predictions_csv(ws: &Workspace, backbone: &[f64], gcn: &[f64]) -> String {
    let mut s = String::from("id,split,gold,backbone,gcn\n");
    for (k, p) in ws.pairs.iter().enumerate() {
        let split = if p.is_train() { "train" } else { "test" };
        let gold = p.gold.map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{split},{gold},{},{}", p.id, backbone[k], gcn[k]);
    }
    s
}

/// Per-pair records for the test pairs, for [`crate::metrics::EvalReport`].
pub fn test_records(ws: &Workspace, backbone: &[f64], gcn: &[f64]) -> Vec<PairRecord> {
    ws.test
        .iter()
        .filter_map(|&k| {
            Some(PairRecord {
                id: ws.pairs[k].id.clone(),
                gold: ws.gold(k)?,
                backbone: backbone[k],
                gcn: gcn[k],
            })
        })
        .collect()
}

/// Trains a fresh backbone on the training gold, plus the GCN pseudo labels
/// on the test pairs when given. Returns the scorer and its loss trace.
pub fn train_backbone(ws: &Workspace, config: &Config, pseudo_a: Option<&[f64]>) -> Result<(Backbone, Vec<f64>)> {
    let mut bb = ws.new_backbone(config)?;
    let labeled: Vec<(PairText<'_>, f64)> = ws
        .train
        .iter()
        .map(|&k| (ws.pair_text(k), ws.gold(k).expect("train pairs have gold")))
        .collect();
    let pseudo: Vec<(PairText<'_>, f64)> = match pseudo_a {
        Some(p) if config.gamma_b > 0.0 => ws.test.iter().map(|&k| (ws.pair_text(k), p[k])).collect(),
        _ => Vec::new(),
    };
    let obj = BackboneObjective {
        labeled: &labeled,
        pseudo: &pseudo,
        gamma_b: if pseudo.is_empty() { 0.0 } else { config.gamma_b },
    };
    let trace = bb.train(&obj, config.backbone_epochs, config.backbone_lr)?;
    Ok((bb, trace))
}

/// Backbone scores for every pair, clamped to `[0, 5]`.
pub fn score_backbone(ws: &Workspace, bb: &Backbone, exec: Exec) -> Vec<f64> {
    exec.map_range(ws.pairs.len(), |k| bb.score_pair(&ws.pair_text(k)))
}

/// One auxiliary training: the graph built from backbone scores, the trained
/// GCN, its loss trace and its clamped scores for every pair.
pub struct GcnRun {
    pub graph: DrugGraph,
    pub model: GcnModel,
    pub trace: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Builds the drug graph from `pseudo_b` and trains a GCN from its seed on
/// the training gold plus `pseudo_b` on the test pairs.
pub fn train_gcn(
    ws: &Workspace,
    config: &Config,
    diffs: &[[f64; DIFF_DIM]],
    pseudo_b: &[f64],
    exec: Exec,
) -> Result<GcnRun> {
    let graph = ws.graph(config, pseudo_b, exec)?;
    let inputs = ws.gcn_inputs(&graph, diffs)?;
    let example = |k: usize, target: f64| Example {
        input: inputs[k].clone(),
        target,
    };
    let labeled: Vec<Example> = ws
        .train
        .iter()
        .map(|&k| example(k, ws.gold(k).expect("train pairs have gold")))
        .collect();
    let pseudo: Vec<Example> = ws.test.iter().map(|&k| example(k, pseudo_b[k])).collect();
    let mut model = GcnModel::new(ws.features.ncols(), config.gcn(), derive_seed(config.seed, "gcn"));
    let trace = model.train(&graph, &labeled, &pseudo)?;
    let scores = model.predict(&graph, &inputs)?;
    Ok(GcnRun {
        graph,
        model,
        trace,
        scores,
    })
}

/// Runs the bootstrap plus `config.iterations` co-training iterations. With
/// `out_dir`, every completed iteration is persisted before the next starts.
pub fn run_cycle(ws: &Workspace, config: &Config, out_dir: Option<&Path>, exec: Exec) -> Result<CycleHistory> {
    config.validate()?;
    let dir = out_dir.map(RunDir::create).transpose()?;
    if let Some(d) = &dir {
        d.write("config.toml", config.to_toml())?;
    }
    let diffs = ws.diffs(config.scale_diffs);

    let (bootstrap_bb, bootstrap_trace) = train_backbone(ws, config, None)?;
    let bootstrap = bootstrap_bb.to_checkpoint();
    if let Some(d) = &dir {
        d.write("backbone_bootstrap.ckpt", bootstrap.to_bytes())?;
    }

    let mut history = CycleHistory {
        bootstrap,
        bootstrap_trace,
        states: Vec::with_capacity(config.iterations),
        ensemble: None,
    };
    let mut backbone = bootstrap_bb;
    let mut pseudo_a: Option<Vec<f64>> = None;
    for t in 0..config.iterations {
        if t > 0 {
            backbone = train_backbone(ws, config, pseudo_a.as_deref())?.0;
        }
        let pseudo_b = score_backbone(ws, &backbone, exec);
        let GcnRun {
            graph,
            model: gcn,
            scores: scores_a,
            ..
        } = train_gcn(ws, config, &diffs, &pseudo_b, exec)?;

        let state = CyclicState {
            iteration: t,
            backbone: backbone.to_checkpoint(),
            gcn: gcn.to_checkpoint(),
            backbone_metrics: metrics_on(ws, &ws.test, &pseudo_b)?,
            gcn_metrics: metrics_on(ws, &ws.test, &scores_a)?,
            graph,
            pseudo_b,
            pseudo_a: scores_a,
        };
        if t == 0 {
            let take = |v: &[f64]| ws.train.iter().map(|&k| v[k]).collect::<Vec<f64>>();
            let gold: Vec<f64> = ws.train.iter().filter_map(|&k| ws.gold(k)).collect();
            let (lambda, train_pearson) = fit_lambda(&take(&state.pseudo_b), &take(&state.pseudo_a), &gold)?;
            let mixed: Vec<f64> = state
                .pseudo_b
                .iter()
                .zip(&state.pseudo_a)
                .map(|(b, a)| ensemble_score(*b, *a, lambda))
                .collect();
            let fit = EnsembleFit {
                lambda,
                train_pearson,
                test: metrics_on(ws, &ws.test, &mixed)?,
            };
            if let Some(d) = &dir {
                let test = fit
                    .test
                    .map(|m| format!("{},{}", m.pearson.r, m.mse))
                    .unwrap_or_else(|| ",".into());
                d.write(
                    "ensemble.csv",
                    format!(
                        "lambda,train_pearson,test_pearson,test_mse\n{lambda},{},{test}\n",
                        train_pearson.r
                    ),
                )?;
            }
            history.ensemble = Some(fit);
        }
        pseudo_a = Some(state.pseudo_a.clone());
        history.states.push(state);

        if let Some(d) = &dir {
            let st = history.states.last().expect("just pushed");
            let sub = format!("iter{t:02}");
            d.write(&format!("{sub}/backbone.ckpt"), st.backbone.to_bytes())?;
            d.write(&format!("{sub}/gcn.ckpt"), st.gcn.to_bytes())?;
            d.write(
                &format!("{sub}/graph.json"),
                serde_json::to_string_pretty(&st.graph.to_json())?,
            )?;
            d.write(
                &format!("{sub}/predictions.csv"),
                predictions_csv(ws, &st.pseudo_b, &st.pseudo_a),
            )?;
            d.write("metrics.csv", history.metrics_csv())?;
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub backbone_pearson: Option<f64>,
}

/// `beta` in `{0, 0.1, ..., 1}`.
pub fn beta_grid() -> Vec<f64> {
    (0..=10).map(|k| f64::from(k) / 10.0).collect()
}

/// Medical-mode cycles at the given `alpha`, one per `beta`; reports the
/// final-iteration held-out backbone Pearson.
pub fn sweep_beta(ws: &Workspace, base: &Config, alpha: f64, betas: &[f64], exec: Exec) -> Result<Vec<SweepPoint>> {
    betas
        .iter()
        .map(|&beta| {
            let config = Config {
                mode: Mode::Medical,
                alpha: Some(alpha),
                beta,
                ..base.clone()
            };
            let h = run_cycle(ws, &config, None, exec)?;
            Ok(SweepPoint {
                beta,
                backbone_pearson: h.cyclic_pearson(),
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("beta,backbone_pearson\n");
    for p in points {
        let r = p.backbone_pearson.map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{r}", p.beta);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_score(4.0, 2.0, 0.5), 3.0);
        assert_eq!(ensemble_score(4.0, 2.0, 1.0), 4.0);
        assert_eq!(ensemble_score(4.0, 2.0, 0.0), 2.0);
    }

    #[test]
    fn lambda_prefers_better_scorer_and_half_on_ties() {
        let gold = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let good = [0.1, 1.0, 2.1, 2.9, 4.0, 5.0];
        let noisy = [2.0, 0.0, 3.0, 1.0, 5.0, 3.0];
        let (lambda, _) = fit_lambda(&noisy, &good, &gold).unwrap();
        assert!(lambda < 0.5);
        let (lambda, _) = fit_lambda(&good, &good, &gold).unwrap();
        assert_eq!(lambda, 0.5);
    }
}
