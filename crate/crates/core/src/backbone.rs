//! Backbone sentence-pair scorers.
//!
//! [`BackboneScorer`] is the contract the co-training loop relies on. Two
//! implementations ship with the crate:
//!
//! * [`LexicalScorer`]: token Jaccard overlap, character-trigram cosine and
//!   hashed bag-of-words cosine, affinely calibrated, plus an optional
//!   trainable hashed-token encoder whose sentence codes interact through a
//!   dot product. The encoder is what lets pseudo labels change the scorer
//!   beyond its calibration.
//! * [`EmbeddingScorer`]: cosine of precomputed sentence vectors from an
//!   [`EmbeddingStore`], affinely calibrated.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::drug_graph::stable_hash;
use crate::emb::EmbeddingStore;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::rx_parse::tokenize;

/// A sentence with its dataset-wide id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sentence<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairText<'a> {
    pub a: Sentence<'a>,
    pub b: Sentence<'a>,
}

/// Training examples for the backbone: labelled pairs with gold targets and
/// target pairs with auxiliary pseudo targets.
#[derive(Debug, Clone, Copy)]
pub struct BackboneObjective<'a> {
    pub labeled: &'a [(PairText<'a>, f64)],
    pub pseudo: &'a [(PairText<'a>, f64)],
    pub gamma_b: f64,
}

pub trait BackboneScorer {
    /// Unclamped score.
    fn raw_score(&self, pair: &PairText<'_>) -> f64;

    /// Score clamped to `[0, 5]`.
    fn score_pair(&self, pair: &PairText<'_>) -> f64 {
        self.raw_score(pair).clamp(0.0, 5.0)
    }

    /// Minimizes `MSE(labeled) + gamma_b * MSE(pseudo)` by full-batch
    /// gradient descent. Returns the loss before each step.
    fn train(&mut self, obj: &BackboneObjective<'_>, epochs: usize, lr: f64) -> Result<Vec<f64>>;

    fn to_checkpoint(&self) -> Checkpoint;
}

/// Scores many pairs; clamped.
pub fn score_all<S: BackboneScorer + Sync>(scorer: &S, pairs: &[PairText<'_>], exec: Exec) -> Vec<f64> {
    exec.map(pairs, |p| scorer.score_pair(p))
}

/// Squared-error objective shared by both scorers. `grad(k, g)` receives
/// `dL/df` for example `k` of the concatenated labelled+pseudo list.
fn mse_objective(raw: &[f64], targets: &[f64], n_labeled: usize, gamma: f64, mut grad: impl FnMut(usize, f64)) -> f64 {
    let n_pseudo = raw.len() - n_labeled;
    let mut loss = 0.0;
    for (k, (f, y)) in raw.iter().zip(targets).enumerate() {
        let scale = if k < n_labeled {
            1.0 / n_labeled as f64
        } else if gamma != 0.0 {
            gamma / n_pseudo as f64
        } else {
            continue;
        };
        let r = f - y;
        loss += scale * r * r;
        grad(k, 2.0 * scale * r);
    }
    loss
}

fn check_loss(loss: f64, epoch: usize, lr: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            what: "backbone loss".into(),
            epoch,
            lr,
        })
    }
}

fn cosine_counts<K: std::hash::Hash + Eq>(a: &HashMap<K, f64>, b: &HashMap<K, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Token-set Jaccard overlap.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    let sa: std::collections::HashSet<&String> = a.iter().collect();
    let sb: std::collections::HashSet<&String> = b.iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

fn trigram_counts(tokens: &[String]) -> HashMap<[char; 3], f64> {
    let padded: Vec<char> = format!(" {} ", tokens.join(" ")).chars().collect();
    let mut m = HashMap::new();
    for w in padded.windows(3) {
        *m.entry([w[0], w[1], w[2]]).or_insert(0.0) += 1.0;
    }
    m
}

fn bucket_counts(tokens: &[String], buckets: usize) -> HashMap<usize, f64> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry((stable_hash(t) % buckets as u64) as usize).or_insert(0.0) += 1.0;
    }
    m
}

pub const LEXICAL_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexicalConfig {
    /// Buckets of the hashed bag-of-words cosine feature.
    pub bow_buckets: usize,
    /// Width of the trainable token encoder; 0 disables it.
    pub encoder_dim: usize,
    pub encoder_buckets: usize,
    pub encoder_init: f64,
    /// Encoder step size relative to the calibration step.
    pub encoder_lr_scale: f64,
    pub seed: u64,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        LexicalConfig {
            bow_buckets: 1024,
            encoder_dim: 16,
            encoder_buckets: 2048,
            encoder_init: 0.1,
            encoder_lr_scale: 7.0,
            seed: 0,
        }
    }
}

/// Per-pair quantities that do not change during training.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalPair {
    pub features: [f64; LEXICAL_FEATURES],
    tokens_a: Vec<usize>,
    tokens_b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexicalScorer {
    pub config: LexicalConfig,
    pub weights: [f64; LEXICAL_FEATURES],
    pub bias: f64,
    /// `encoder_buckets x encoder_dim`
    pub encoder: Array2<f64>,
}

impl LexicalScorer {
    /// Calibration starts at `5 * mean(features)`; the encoder is seeded
    /// Gaussian noise.
    pub fn new(config: LexicalConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.encoder_init.max(0.0)).expect("finite std");
        let rows = if config.encoder_dim == 0 {
            0
        } else {
            config.encoder_buckets
        };
        let encoder = Array2::from_shape_simple_fn((rows, config.encoder_dim), || normal.sample(&mut rng));
        LexicalScorer {
            config,
            weights: [5.0 / LEXICAL_FEATURES as f64; LEXICAL_FEATURES],
            bias: 0.0,
            encoder,
        }
    }

    /// Raw, uncalibrated features `[jaccard, trigram cosine, bow cosine]`.
    pub fn features(&self, a: &str, b: &str) -> [f64; LEXICAL_FEATURES] {
        self.prepare(&PairText {
            a: Sentence { id: "a", text: a },
            b: Sentence { id: "b", text: b },
        })
        .features
    }

    pub fn prepare(&self, pair: &PairText<'_>) -> LexicalPair {
        let ta = tokenize(pair.a.text);
        let tb = tokenize(pair.b.text);
        let buckets = |ts: &[String]| -> Vec<usize> {
            if self.config.encoder_dim == 0 {
                return Vec::new();
            }
            ts.iter()
                .map(|t| (stable_hash(t) % self.config.encoder_buckets as u64) as usize)
                .collect()
        };
        LexicalPair {
            features: [
                jaccard(&ta, &tb),
                cosine_counts(&trigram_counts(&ta), &trigram_counts(&tb)),
                cosine_counts(
                    &bucket_counts(&ta, self.config.bow_buckets),
                    &bucket_counts(&tb, self.config.bow_buckets),
                ),
            ],
            tokens_a: buckets(&ta),
            tokens_b: buckets(&tb),
        }
    }

    fn code(&self, tokens: &[usize]) -> Array1<f64> {
        let mut s = Array1::zeros(self.config.encoder_dim);
        if tokens.is_empty() || self.config.encoder_dim == 0 {
            return s;
        }
        for &t in tokens {
            s += &self.encoder.row(t);
        }
        s / (tokens.len() as f64).sqrt()
    }

    pub fn raw_prepared(&self, p: &LexicalPair) -> f64 {
        let lin: f64 = self.weights.iter().zip(&p.features).map(|(w, x)| w * x).sum();
        let enc = if self.config.encoder_dim == 0 {
            0.0
        } else {
            self.code(&p.tokens_a).dot(&self.code(&p.tokens_b))
        };
        self.bias + lin + enc
    }

    fn loss_and_step(
        &mut self,
        prepared: &[LexicalPair],
        targets: &[f64],
        n_labeled: usize,
        gamma: f64,
        lr: f64,
    ) -> f64 {
        let codes: Vec<(Array1<f64>, Array1<f64>)> = prepared
            .iter()
            .map(|p| (self.code(&p.tokens_a), self.code(&p.tokens_b)))
            .collect();
        let raw: Vec<f64> = prepared
            .iter()
            .zip(&codes)
            .map(|(p, (ca, cb))| {
                let lin: f64 = self.weights.iter().zip(&p.features).map(|(w, x)| w * x).sum();
                self.bias + lin + if self.config.encoder_dim == 0 { 0.0 } else { ca.dot(cb) }
            })
            .collect();
        let mut d_w = [0.0; LEXICAL_FEATURES];
        let mut d_b = 0.0;
        let mut d_e = Array2::<f64>::zeros(self.encoder.dim());
        let with_encoder = self.config.encoder_dim > 0;
        let loss = mse_objective(&raw, targets, n_labeled, gamma, |k, g| {
            let p = &prepared[k];
            for (dw, x) in d_w.iter_mut().zip(&p.features) {
                *dw += g * x;
            }
            d_b += g;
            if with_encoder {
                let (ca, cb) = &codes[k];
                let sa = g / (p.tokens_a.len() as f64).sqrt();
                for &t in &p.tokens_a {
                    d_e.row_mut(t).scaled_add(sa, cb);
                }
                let sb = g / (p.tokens_b.len() as f64).sqrt();
                for &t in &p.tokens_b {
                    d_e.row_mut(t).scaled_add(sb, ca);
                }
            }
        });
        for (w, d) in self.weights.iter_mut().zip(d_w) {
            *w -= lr * d;
        }
        self.bias -= lr * d_b;
        if with_encoder {
            self.encoder.scaled_add(-lr * self.config.encoder_lr_scale, &d_e);
        }
        loss
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "lexical" {
            return Err(Error::Checkpoint(format!(
                "expected lexical checkpoint, found `{}`",
                ck.kind
            )));
        }
        let config: LexicalConfig = serde_json::from_str(&ck.config)?;
        let w = ck.get("calibration.w")?;
        if w.len() != LEXICAL_FEATURES {
            return Err(Error::Checkpoint("calibration.w has wrong length".into()));
        }
        Ok(LexicalScorer {
            weights: [w[0], w[1], w[2]],
            bias: ck.get("calibration.b")?[0],
            encoder: ck.array2("encoder")?,
            config,
        })
    }
}

impl BackboneScorer for LexicalScorer {
    fn raw_score(&self, pair: &PairText<'_>) -> f64 {
        self.raw_prepared(&self.prepare(pair))
    }

    fn train(&mut self, obj: &BackboneObjective<'_>, epochs: usize, lr: f64) -> Result<Vec<f64>> {
        let all: Vec<&(PairText<'_>, f64)> = obj.labeled.iter().chain(obj.pseudo.iter()).collect();
        let prepared: Vec<LexicalPair> = all.iter().map(|(p, _)| self.prepare(p)).collect();
        let targets: Vec<f64> = all.iter().map(|(_, y)| *y).collect();
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let loss = self.loss_and_step(&prepared, &targets, obj.labeled.len(), obj.gamma_b, lr);
            check_loss(loss, epoch, lr)?;
            trace.push(loss);
        }
        Ok(trace)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            "lexical",
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        ck.push("calibration.w", vec![LEXICAL_FEATURES], self.weights.to_vec());
        ck.push("calibration.b", vec![1], vec![self.bias]);
        ck.push_array2("encoder", &self.encoder);
        ck
    }
}

/// Affine map of sentence-vector cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingScorer {
    store: Arc<EmbeddingStore>,
    pub slope: f64,
    pub intercept: f64,
    /// When false only the slope is trained.
    pub fit_intercept: bool,
}

impl EmbeddingScorer {
    /// Identity calibration: cosine 1 maps to 5.
    pub fn new(store: Arc<EmbeddingStore>) -> Self {
        EmbeddingScorer {
            store,
            slope: 5.0,
            intercept: 0.0,
            fit_intercept: true,
        }
    }

    /// Cosine of the two sentence vectors; 0 when either is missing or zero.
    pub fn cosine(&self, pair: &PairText<'_>) -> f64 {
        let (Some(a), Some(b)) = (self.store.sentence(pair.a.id), self.store.sentence(pair.b.id)) else {
            return 0.0;
        };
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (x, y) in a.iter().zip(b) {
            let (x, y) = (f64::from(*x), f64::from(*y));
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        if pair.a.id == pair.b.id {
            return 1.0;
        }
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn from_checkpoint(ck: &Checkpoint, store: Arc<EmbeddingStore>) -> Result<Self> {
        if ck.kind != "embedding" {
            return Err(Error::Checkpoint(format!(
                "expected embedding checkpoint, found `{}`",
                ck.kind
            )));
        }
        let c = ck.get("calibration")?;
        if c.len() != 3 {
            return Err(Error::Checkpoint("calibration has wrong length".into()));
        }
        Ok(EmbeddingScorer {
            store,
            slope: c[0],
            intercept: c[1],
            fit_intercept: c[2] != 0.0,
        })
    }
}

impl BackboneScorer for EmbeddingScorer {
    fn raw_score(&self, pair: &PairText<'_>) -> f64 {
        self.slope * self.cosine(pair) + self.intercept
    }

    fn train(&mut self, obj: &BackboneObjective<'_>, epochs: usize, lr: f64) -> Result<Vec<f64>> {
        let all: Vec<&(PairText<'_>, f64)> = obj.labeled.iter().chain(obj.pseudo.iter()).collect();
        let cos: Vec<f64> = all.iter().map(|(p, _)| self.cosine(p)).collect();
        let targets: Vec<f64> = all.iter().map(|(_, y)| *y).collect();
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let raw: Vec<f64> = cos.iter().map(|c| self.slope * c + self.intercept).collect();
            let (mut d_s, mut d_i) = (0.0, 0.0);
            let loss = mse_objective(&raw, &targets, obj.labeled.len(), obj.gamma_b, |k, g| {
                d_s += g * cos[k];
                d_i += g;
            });
            check_loss(loss, epoch, lr)?;
            trace.push(loss);
            self.slope -= lr * d_s;
            if self.fit_intercept {
                self.intercept -= lr * d_i;
            }
        }
        Ok(trace)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("embedding", "{}".into());
        ck.push(
            "calibration",
            vec![3],
            vec![self.slope, self.intercept, if self.fit_intercept { 1.0 } else { 0.0 }],
        );
        ck
    }
}

/// Runtime choice between the built-in scorers.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Lexical(LexicalScorer),
    Embedding(EmbeddingScorer),
}

impl Backbone {
    /// Restores either scorer; embedding checkpoints need the store.
    pub fn from_checkpoint(ck: &Checkpoint, store: Option<Arc<EmbeddingStore>>) -> Result<Self> {
        match ck.kind.as_str() {
            "lexical" => Ok(Backbone::Lexical(LexicalScorer::from_checkpoint(ck)?)),
            "embedding" => {
                let store =
                    store.ok_or_else(|| Error::Config("embedding checkpoint needs an embeddings file".into()))?;
                Ok(Backbone::Embedding(EmbeddingScorer::from_checkpoint(ck, store)?))
            }
            other => Err(Error::Checkpoint(format!("unknown backbone checkpoint kind `{other}`"))),
        }
    }
}

impl BackboneScorer for Backbone {
    fn raw_score(&self, pair: &PairText<'_>) -> f64 {
        match self {
            Backbone::Lexical(s) => s.raw_score(pair),
            Backbone::Embedding(s) => s.raw_score(pair),
        }
    }

    fn train(&mut self, obj: &BackboneObjective<'_>, epochs: usize, lr: f64) -> Result<Vec<f64>> {
        match self {
            Backbone::Lexical(s) => s.train(obj, epochs, lr),
            Backbone::Embedding(s) => s.train(obj, epochs, lr),
        }
    }

    fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Backbone::Lexical(s) => s.to_checkpoint(),
            Backbone::Embedding(s) => s.to_checkpoint(),
        }
    }
}

pub fn load_embedding_store(path: impl AsRef<std::path::Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::load(path)
}
