//! Graph convolutional auxiliary scorer.
//!
//! Each layer computes `h_i = sum_{j in N(i)} a_ij * tanh(U h_j + v)`. The
//! final drug embeddings of the two sentences are compared by cosine
//! similarity; the cosine is concatenated with the concept difference vector
//! and fed to an affine regression head. Training is full-batch gradient
//! descent with a hand-written backward pass.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::concept_diff::DIFF_DIM;
use crate::drug_graph::DrugGraph;
use crate::error::{Error, Result};

pub const HEAD_DIM: usize = 1 + DIFF_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `a_ij` from the (normalized) adjacency.
    #[default]
    Weighted,
    /// `a_ij = 1` for every neighbour.
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    /// Output width of each layer; the input width comes from the features.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub gamma_a: f64,
    pub aggregation: Aggregation,
    /// Step size of the layer parameters relative to `lr`; 0 trains only the
    /// regression head.
    pub layer_lr_scale: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden: vec![256, 128],
            lr: 0.2,
            epochs: 200,
            gamma_a: 0.5,
            aggregation: Aggregation::Weighted,
            layer_lr_scale: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `d_out x d_in`
    pub u: Array2<f64>,
    pub v: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: Array1<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub layers: Vec<Layer>,
    pub head: Head,
    pub config: GcnConfig,
}

/// One sentence pair as seen by the GCN: drug node indices of both sides and
/// the (possibly scaled) concept difference features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub diff: [f64; DIFF_DIM],
}

impl PairInput {
    pub fn resolve<S: AsRef<str>>(graph: &DrugGraph, a: &[S], b: &[S], diff: [f64; DIFF_DIM]) -> Result<Self> {
        let look = |names: &[S]| -> Result<Vec<usize>> {
            if names.is_empty() {
                return Err(Error::InvalidArgument("sentence has no drug".into()));
            }
            names
                .iter()
                .map(|n| {
                    graph
                        .index_of(n.as_ref())
                        .ok_or_else(|| Error::UnknownDrug(n.as_ref().to_string()))
                })
                .collect()
        };
        Ok(PairInput {
            a: look(a)?,
            b: look(b)?,
            diff,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: PairInput,
    pub target: f64,
}

/// Labelled pairs plus pseudo-labelled pairs weighted by `gamma`.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub labeled: &'a [Example],
    pub pseudo: &'a [Example],
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
    pub head: Head,
}

struct Cache {
    /// Input of each layer, then the final output.
    h: Vec<Array2<f64>>,
    /// tanh activations per layer.
    t: Vec<Array2<f64>>,
}

fn uniform(rng: &mut ChaCha8Rng, d_in: usize, shape: (usize, usize)) -> Array2<f64> {
    let bound = 1.0 / (d_in.max(1) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Aggregation matrix for the chosen mode.
pub fn aggregation_matrix(graph: &DrugGraph, aggregation: Aggregation) -> Array2<f64> {
    match aggregation {
        Aggregation::Weighted => graph.adjacency.clone(),
        Aggregation::Unweighted => graph.edge_mask.mapv(|m| if m { 1.0 } else { 0.0 }),
    }
}

/// One graph convolution: `agg · tanh(H Uᵀ + v)`.
pub fn forward_layer(h_prev: &Array2<f64>, agg: &Array2<f64>, layer: &Layer) -> Result<Array2<f64>> {
    Ok(layer_pass(h_prev, agg, layer)?.1)
}

fn layer_pass(h_prev: &Array2<f64>, agg: &Array2<f64>, layer: &Layer) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, d_in) = h_prev.dim();
    if layer.u.ncols() != d_in || layer.v.len() != layer.u.nrows() {
        return Err(Error::Dimension(format!(
            "layer expects input width {} (bias {}), got {d_in}",
            layer.u.ncols(),
            layer.v.len()
        )));
    }
    if agg.dim() != (n, n) {
        return Err(Error::Dimension(format!("aggregation {:?} for {n} nodes", agg.dim())));
    }
    let mut t = h_prev.dot(&layer.u.t());
    t += &layer.v;
    t.mapv_inplace(f64::tanh);
    let h = agg.dot(&t);
    Ok((t, h))
}

/// Cosine similarity of two drug sets: max over cross pairs. A shared drug
/// gives exactly 1. Returns the maximizing pair when it carries gradient.
fn set_cosine(h: &Array2<f64>, a: &[usize], b: &[usize]) -> (f64, Option<(usize, usize)>) {
    if a.iter().any(|i| b.contains(i)) {
        return (1.0, None);
    }
    let mut best: Option<(f64, Option<(usize, usize)>)> = None;
    for &i in a {
        for &j in b {
            let (hi, hj) = (h.row(i), h.row(j));
            let (ni, nj) = (hi.dot(&hi).sqrt(), hj.dot(&hj).sqrt());
            let cand = if ni > 0.0 && nj > 0.0 {
                (hi.dot(&hj) / (ni * nj), Some((i, j)))
            } else {
                (0.0, None)
            };
            if best.is_none_or(|(c, _)| cand.0 > c) {
                best = Some(cand);
            }
        }
    }
    best.unwrap_or((0.0, None))
}

impl GcnModel {
    /// Weights are seeded uniform in `±1/sqrt(d_in)`; biases start at zero.
    /// A random bias is shared by every node and survives neighbourhood
    /// averaging while the node-specific part shrinks, which pushes all
    /// embedding cosines towards 1.
    pub fn new(input_dim: usize, config: GcnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.hidden.len());
        let mut d_in = input_dim;
        for &d_out in &config.hidden {
            let u = uniform(&mut rng, d_in, (d_out, d_in));
            let v = Array1::zeros(d_out);
            layers.push(Layer { u, v });
            d_in = d_out;
        }
        let hw = uniform(&mut rng, HEAD_DIM, (1, HEAD_DIM)).remove_axis(Axis(0));
        GcnModel {
            layers,
            head: Head { w: hw, b: 0.0 },
            config,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.u.nrows())
    }

    fn forward_cached(&self, graph: &DrugGraph) -> Result<Cache> {
        let agg = aggregation_matrix(graph, self.config.aggregation);
        let mut h = vec![graph.features.clone()];
        let mut t = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (ti, hi) = layer_pass(h.last().expect("non-empty"), &agg, layer)?;
            t.push(ti);
            h.push(hi);
        }
        Ok(Cache { h, t })
    }

    /// Final drug embeddings.
    pub fn embed(&self, graph: &DrugGraph) -> Result<Array2<f64>> {
        Ok(self.forward_cached(graph)?.h.pop().expect("non-empty"))
    }

    /// Head features `[cos, d_1..d_5]` of a pair under embeddings `h`.
    pub fn features(h: &Array2<f64>, pair: &PairInput) -> [f64; HEAD_DIM] {
        let mut f = [0.0; HEAD_DIM];
        f[0] = set_cosine(h, &pair.a, &pair.b).0;
        f[1..].copy_from_slice(&pair.diff);
        f
    }

    fn head_out(&self, f: &[f64; HEAD_DIM]) -> f64 {
        self.head.b + self.head.w.iter().zip(f).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Unclamped scores (training-time output).
    pub fn raw_scores(&self, graph: &DrugGraph, pairs: &[PairInput]) -> Result<Vec<f64>> {
        let h = self.embed(graph)?;
        Ok(pairs.iter().map(|p| self.head_out(&Self::features(&h, p))).collect())
    }

    /// Inference scores clamped to `[0, 5]`.
    pub fn predict(&self, graph: &DrugGraph, pairs: &[PairInput]) -> Result<Vec<f64>> {
        Ok(self
            .raw_scores(graph, pairs)?
            .into_iter()
            .map(|s| s.clamp(0.0, 5.0))
            .collect())
    }

    pub fn pair_score(&self, graph: &DrugGraph, pair: &PairInput) -> Result<f64> {
        Ok(self.predict(graph, std::slice::from_ref(pair))?[0])
    }

    /// Auxiliary loss: MSE on labelled pairs plus `gamma` times MSE against
    /// pseudo targets. Empty parts contribute 0.
    pub fn loss(&self, graph: &DrugGraph, obj: &Objective<'_>) -> Result<f64> {
        let h = self.embed(graph)?;
        Ok(self.loss_with(&h, obj))
    }

    fn loss_with(&self, h: &Array2<f64>, obj: &Objective<'_>) -> f64 {
        let part = |set: &[Example]| {
            if set.is_empty() {
                return 0.0;
            }
            set.iter()
                .map(|e| {
                    let r = self.head_out(&Self::features(h, &e.input)) - e.target;
                    r * r
                })
                .sum::<f64>()
                / set.len() as f64
        };
        let mut l = part(obj.labeled);
        if obj.gamma != 0.0 {
            l += obj.gamma * part(obj.pseudo);
        }
        l
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, graph: &DrugGraph, obj: &Objective<'_>) -> Result<(f64, Gradient)> {
        let cache = self.forward_cached(graph)?;
        let h = cache.h.last().expect("non-empty");
        let (n, d) = h.dim();
        let mut d_h = Array2::<f64>::zeros((n, d));
        let mut d_w = Array1::<f64>::zeros(HEAD_DIM);
        let mut d_b = 0.0;
        let mut loss = 0.0;

        let mut accumulate = |set: &[Example], weight: f64| {
            if set.is_empty() || weight == 0.0 {
                return;
            }
            let scale = weight / set.len() as f64;
            for e in set {
                let (cos, arg) = set_cosine(h, &e.input.a, &e.input.b);
                let mut f = [0.0; HEAD_DIM];
                f[0] = cos;
                f[1..].copy_from_slice(&e.input.diff);
                let r = self.head_out(&f) - e.target;
                loss += scale * r * r;
                let g = 2.0 * scale * r;
                for (dw, x) in d_w.iter_mut().zip(f) {
                    *dw += g * x;
                }
                d_b += g;
                if let Some((i, j)) = arg {
                    let g_cos = g * self.head.w[0];
                    let (hi, hj) = (h.row(i).to_owned(), h.row(j).to_owned());
                    let (ni, nj) = (hi.dot(&hi).sqrt(), hj.dot(&hj).sqrt());
                    let gi = (&hj / (ni * nj) - &hi * (cos / (ni * ni))) * g_cos;
                    let gj = (&hi / (ni * nj) - &hj * (cos / (nj * nj))) * g_cos;
                    let mut row = d_h.row_mut(i);
                    row += &gi;
                    let mut row = d_h.row_mut(j);
                    row += &gj;
                }
            }
        };
        accumulate(obj.labeled, 1.0);
        accumulate(obj.pseudo, obj.gamma);

        let agg = aggregation_matrix(graph, self.config.aggregation);
        let mut layer_grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let t = &cache.t[k];
            let mut d_z = agg.t().dot(&d_h);
            d_z.zip_mut_with(t, |g, &tv| *g *= 1.0 - tv * tv);
            let d_u = d_z.t().dot(&cache.h[k]);
            let d_v = d_z.sum_axis(Axis(0));
            if k > 0 {
                d_h = d_z.dot(&layer.u);
            }
            layer_grads.push(Layer { u: d_u, v: d_v });
        }
        layer_grads.reverse();
        Ok((
            loss,
            Gradient {
                layers: layer_grads,
                head: Head { w: d_w, b: d_b },
            },
        ))
    }

    /// Visits parameters in a fixed order: layers (U row-major, then v), head
    /// weights, head bias.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.u.iter_mut().for_each(&mut f);
            l.v.iter_mut().for_each(&mut f);
        }
        self.head.w.iter_mut().for_each(&mut f);
        f(&mut self.head.b);
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.u.len() + l.v.len()).sum::<usize>() + HEAD_DIM + 1
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.u.iter().chain(l.v.iter()).all(|x| x.is_finite()))
            && self.head.w.iter().all(|x| x.is_finite())
            && self.head.b.is_finite()
    }

    fn apply(&mut self, grad: &Gradient, lr: f64) {
        let layer_lr = lr * self.config.layer_lr_scale;
        if layer_lr != 0.0 {
            for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
                l.u.scaled_add(-layer_lr, &g.u);
                l.v.scaled_add(-layer_lr, &g.v);
            }
        }
        self.head.w.scaled_add(-lr, &grad.head.w);
        self.head.b -= lr * grad.head.b;
    }

    /// Full-batch gradient descent for `config.epochs` steps. Returns the loss
    /// before each step.
    pub fn train(&mut self, graph: &DrugGraph, labeled: &[Example], pseudo: &[Example]) -> Result<Vec<f64>> {
        let obj = Objective {
            labeled,
            pseudo,
            gamma: self.config.gamma_a,
        };
        let (lr, epochs) = (self.config.lr, self.config.epochs);
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let (loss, grad) = self.loss_and_gradient(graph, &obj)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    what: "auxiliary loss".into(),
                    epoch,
                    lr,
                });
            }
            trace.push(loss);
            self.apply(&grad, lr);
            if !self.params_finite() {
                return Err(Error::Diverged {
                    what: "auxiliary parameters".into(),
                    epoch,
                    lr,
                });
            }
        }
        Ok(trace)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new("gcn", serde_json::to_string(&self.config).expect("config serializes"));
        for (k, l) in self.layers.iter().enumerate() {
            ck.push_array2(&format!("layer{k}.u"), &l.u);
            ck.push(&format!("layer{k}.v"), vec![l.v.len()], l.v.to_vec());
        }
        ck.push("head.w", vec![HEAD_DIM], self.head.w.to_vec());
        ck.push("head.b", vec![1], vec![self.head.b]);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "gcn" {
            return Err(Error::Checkpoint(format!(
                "expected gcn checkpoint, found `{}`",
                ck.kind
            )));
        }
        let config: GcnConfig = serde_json::from_str(&ck.config)?;
        let mut layers = Vec::new();
        for k in 0..config.hidden.len() {
            let u = ck.array2(&format!("layer{k}.u"))?;
            let v = Array1::from(ck.get(&format!("layer{k}.v"))?.to_vec());
            layers.push(Layer { u, v });
        }
        let w = Array1::from(ck.get("head.w")?.to_vec());
        let b = ck.get("head.b")?[0];
        Ok(GcnModel {
            layers,
            head: Head { w, b },
            config,
        })
    }
}

/// Flattened analytic gradient, in [`GcnModel::for_each_param_mut`] order.
pub fn flat_gradient(model: &GcnModel, graph: &DrugGraph, obj: &Objective<'_>) -> Result<Vec<f64>> {
    let (_, grad) = model.loss_and_gradient(graph, obj)?;
    let mut g = GcnModel {
        layers: grad.layers,
        head: grad.head,
        config: model.config.clone(),
    };
    let mut out = Vec::with_capacity(model.param_count());
    g.for_each_param_mut(|x| out.push(*x));
    Ok(out)
}

/// Central finite differences of the loss with step `step`, one entry per
/// parameter.
pub fn numeric_gradient(model: &GcnModel, graph: &DrugGraph, obj: &Objective<'_>, step: f64) -> Result<Vec<f64>> {
    let nudged = |k: usize, delta: f64| {
        let mut m = model.clone();
        let mut idx = 0;
        m.for_each_param_mut(|x| {
            if idx == k {
                *x += delta;
            }
            idx += 1;
        });
        m
    };
    (0..model.param_count())
        .map(|k| Ok((nudged(k, step).loss(graph, obj)? - nudged(k, -step).loss(graph, obj)?) / (2.0 * step)))
        .collect()
}

/// Relative error of the analytic gradient against central differences with
/// step 1e-6: the largest absolute deviation over the largest analytic
/// component. Measuring each component against its own size instead is
/// dominated by cancellation noise on components near zero.
pub fn gradient_check(model: &GcnModel, graph: &DrugGraph, obj: &Objective<'_>) -> Result<f64> {
    let analytic = flat_gradient(model, graph, obj)?;
    let numeric = numeric_gradient(model, graph, obj, 1e-6)?;
    let dev = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, f)| (a - f).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().map(|a| a.abs()).fold(0.0, f64::max);
    Ok(dev / scale.max(1e-8))
}
