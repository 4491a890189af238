//! Seeded synthetic benchmark: prescription sentence pairs, an ingredient
//! ontology and a lexicon.
//!
//! Drugs hang off ingredient hubs (one cluster per hub, a few drugs on a
//! second hub that bridges clusters), so hop distances grade drug
//! relatedness. Hubs can optionally be chained through drug-class nodes.
//! Gold scores are planted as
//!
//! ```text
//! clamp(5 - 5 * (C_DIFF * m + C_PATH * p / p_max) + N(0, sigma^2), 0, 5)
//! ```
//!
//! where `m` in `[0, 1]` is the mean normalized concept difference and `p` the
//! hop distance on the *true* ontology. The ontology written out is a noisy
//! copy: some secondary hub links are dropped, some drugs are attached to the
//! wrong hub and spurious links can be added.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{dataset_to_jsonl, SentencePair};
use crate::error::{Error, Result};
use crate::ontology::{DistanceMatrix, IngredientGraph};
use crate::par::Exec;
use crate::rx_parse::{DosageForm, Route, StrengthUnit};

/// Weight of the concept-difference term in the planted gold score.
pub const C_DIFF: f64 = 0.4;
/// Weight of the ontology-distance term in the planted gold score.
pub const C_PATH: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_drugs: usize,
    pub n_pairs: usize,
    /// Ingredient hubs; drugs are spread evenly over them.
    pub n_clusters: usize,
    /// Probability that a drug also links to a second hub.
    pub secondary_link_rate: f64,
    /// Chain consecutive hubs through drug-class nodes, connecting all clusters.
    pub chain_hubs: bool,
    /// Probability that a true secondary link is missing from the published ontology.
    pub drop_rate: f64,
    /// Number of spurious drug-hub links added to the published ontology.
    pub spurious_links: usize,
    /// Number of drugs whose primary hub is replaced by a wrong one in the
    /// published ontology.
    pub misassigned: usize,
    /// Probability that sentence B names the same drug as sentence A.
    pub same_drug_rate: f64,
    /// Probability that sentence B names a drug at most 4 hops away.
    pub near_drug_rate: f64,
    /// Per-attribute probability that sentence B changes an attribute of A.
    pub perturb_rate: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_drugs: 60,
            n_pairs: 400,
            n_clusters: 6,
            secondary_link_rate: 0.1,
            chain_hubs: false,
            drop_rate: 0.5,
            spurious_links: 0,
            misassigned: 6,
            same_drug_rate: 0.2,
            near_drug_rate: 0.4,
            perturb_rate: 0.4,
            sigma: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.secondary_link_rate,
            self.drop_rate,
            self.same_drug_rate,
            self.near_drug_rate,
            self.perturb_rate,
        ];
        if self.n_drugs < 2 || self.n_pairs == 0 || self.n_clusters == 0 {
            return Err(Error::InvalidArgument(
                "synth: need n_drugs >= 2, n_pairs > 0, n_clusters > 0".into(),
            ));
        }
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || self.same_drug_rate + self.near_drug_rate > 1.0 {
            return Err(Error::InvalidArgument("synth: rates must lie in [0, 1]".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("synth: sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

const PREFIXES: &[&str] = &[
    "bel", "cal", "dor", "fen", "gal", "hex", "lor", "mar", "nex", "pra", "quin", "ral", "sul", "tor", "val", "zan",
    "bex", "cor", "lev", "mon", "ner", "pel", "rom", "tel",
];
const SUFFIXES: &[&str] = &[
    "azine", "olol", "opril", "astatin", "omycin", "oxetine", "afil", "idone", "asone", "otidine", "ipine", "artan",
    "umab", "oprazole", "amide",
];
const BASE_STRENGTHS: &[f64] = &[2.5, 5.0, 10.0, 20.0, 25.0, 40.0, 50.0, 100.0, 200.0, 250.0, 500.0];
const STRENGTH_FACTORS: &[f64] = &[0.5, 1.0, 1.0, 2.0];
const DOSES: &[f64] = &[0.5, 1.0, 1.0, 2.0, 3.0];

/// `(phrase, administrations per day)`
const FREQUENCIES: &[(&str, f64)] = &[
    ("once daily", 1.0),
    ("one time daily", 1.0),
    ("daily", 1.0),
    ("at bedtime", 1.0),
    ("twice a day", 2.0),
    ("two times daily", 2.0),
    ("every 12 hours", 2.0),
    ("three times a day", 3.0),
    ("every 8 hours", 3.0),
    ("four times daily", 4.0),
    ("every 6 hours", 4.0),
    ("every other day", 0.5),
    ("once a week", 1.0 / 7.0),
];

/// Planted attributes of one generated sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceSpec {
    pub drug: String,
    pub strength: f64,
    pub unit: StrengthUnit,
    pub form: DosageForm,
    pub dose: f64,
    pub frequency: usize,
    pub route: Route,
    pub template: usize,
}

impl SentenceSpec {
    pub fn frequency_per_day(&self) -> f64 {
        FREQUENCIES[self.frequency].1
    }
}

fn num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

fn dose_text(dose: f64) -> String {
    if dose == 0.5 {
        "1/2".into()
    } else {
        num(dose)
    }
}

fn form_text(form: DosageForm, dose: f64) -> &'static str {
    match (form, dose > 1.0) {
        (DosageForm::Capsule, false) => "capsule",
        (DosageForm::Capsule, true) => "capsules",
        (_, false) => "tablet",
        (_, true) => "tablets",
    }
}

fn route_text(route: Route) -> &'static str {
    match route {
        Route::Oral => "by mouth ",
        _ => "",
    }
}

pub const TEMPLATES: usize = 4;

/// Renders a sentence from its planted attributes.
pub fn render(s: &SentenceSpec) -> String {
    let (d, u) = (num(s.strength), s.unit.as_str());
    let form = form_text(s.form, 1.0);
    let forms = form_text(s.form, s.dose);
    let dose = dose_text(s.dose);
    let freq = FREQUENCIES[s.frequency].0;
    let route = route_text(s.route);
    match s.template {
        0 => format!("{} {d} {u} {form} {dose} {forms} {route}{freq}", s.drug),
        1 => format!("{} {d}{u} {form} take {dose} {forms} {route}{freq}", s.drug),
        2 => format!("take {dose} {forms} of {} {d} {u} {route}{freq}", s.drug),
        _ => format!("{} {d} {u} {form}: {dose} {forms} {route}{freq}", s.drug),
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub pairs: Vec<SentencePair>,
    /// Planted attributes of sentence A and B for every pair.
    pub sentences: Vec<(SentenceSpec, SentenceSpec)>,
    pub drugs: Vec<String>,
    /// Published (noisy) ontology.
    pub ontology_edges: String,
    pub drug_map: String,
    /// Ontology the gold scores were planted from.
    pub true_ontology_edges: String,
    pub lexicon: String,
}

impl SynthOutput {
    /// Writes `dataset.jsonl`, `ontology_edges.tsv`, `drug_map.tsv`,
    /// `true_ontology_edges.tsv` and `lexicon.txt` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("dataset.jsonl", dataset_to_jsonl(&self.pairs)),
            ("ontology_edges.tsv", self.ontology_edges.clone()),
            ("drug_map.tsv", self.drug_map.clone()),
            ("true_ontology_edges.tsv", self.true_ontology_edges.clone()),
            ("lexicon.txt", self.lexicon.clone()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn drug_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut all: Vec<String> = PREFIXES
        .iter()
        .flat_map(|p| SUFFIXES.iter().map(move |s| format!("{p}{s}")))
        .collect();
    all.shuffle(rng);
    if n <= all.len() {
        all.truncate(n);
    } else {
        let extra: Vec<String> = (0..n - all.len())
            .map(|k| format!("{}{}", all[k % all.len()], "ex".repeat(k / all.len() + 1)))
            .collect();
        all.extend(extra);
    }
    all.sort();
    all
}

/// Mean normalized concept difference in `[0, 1]`.
pub fn diff_magnitude(a: &SentenceSpec, b: &SentenceSpec) -> f64 {
    let strength = (a.strength - b.strength).abs() / a.strength.max(b.strength);
    let unit = f64::from(u8::from(a.unit != b.unit));
    let freq = ((a.frequency_per_day() - b.frequency_per_day()).abs() / 3.0).min(1.0);
    let form = f64::from(u8::from(a.form != b.form));
    let dose = ((a.dose - b.dose).abs() / 2.0).min(1.0);
    (strength + unit + freq + form + dose) / 5.0
}

/// Noise-free planted score.
pub fn planted_score(m: f64, p: f64, p_max: f64) -> f64 {
    (5.0 - 5.0 * (C_DIFF * m + C_PATH * (p.min(p_max) / p_max))).clamp(0.0, 5.0)
}

fn edges_text(edges: &BTreeSet<(String, String)>) -> String {
    let mut s = String::from("# concept\tconcept\n");
    for (a, b) in edges {
        let _ = writeln!(s, "{a}\t{b}");
    }
    s
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drugs = drug_names(spec.n_drugs, &mut rng);
    let k = spec.n_clusters.min(spec.n_drugs);
    let node = |d: &str| format!("RXD:{d}");
    let hub = |c: usize| format!("RXI:hub{c:02}");

    // true ontology
    let mut true_edges = BTreeSet::new();
    let mut secondary = Vec::new();
    let mut cluster_of = vec![0; drugs.len()];
    let mut order: Vec<usize> = (0..drugs.len()).collect();
    order.shuffle(&mut rng);
    for (rank, &d) in order.iter().enumerate() {
        cluster_of[d] = rank % k;
    }
    for (d, name) in drugs.iter().enumerate() {
        true_edges.insert((node(name), hub(cluster_of[d])));
        if k > 1 && rng.random_bool(spec.secondary_link_rate) {
            let other = (cluster_of[d] + rng.random_range(1..k)) % k;
            true_edges.insert((node(name), hub(other)));
            secondary.push((node(name), hub(other)));
        }
    }
    for c in 0..if spec.chain_hubs { k.saturating_sub(1) } else { 0 } {
        let class = format!("RXC:class{c:02}");
        true_edges.insert((hub(c), class.clone()));
        true_edges.insert((hub(c + 1), class));
    }

    // published ontology
    let mut published = true_edges.clone();
    for e in &secondary {
        if rng.random_bool(spec.drop_rate) {
            published.remove(e);
        }
    }
    let mut moved: Vec<usize> = (0..drugs.len()).collect();
    moved.shuffle(&mut rng);
    for &d in moved.iter().take(if k > 1 { spec.misassigned } else { 0 }) {
        published.remove(&(node(&drugs[d]), hub(cluster_of[d])));
        let wrong = (cluster_of[d] + rng.random_range(1..k)) % k;
        published.insert((node(&drugs[d]), hub(wrong)));
    }
    for _ in 0..spec.spurious_links {
        let d = rng.random_range(0..drugs.len());
        published.insert((node(&drugs[d]), hub(rng.random_range(0..k))));
    }

    let mut drug_map = String::from("# drug\tconcept\n");
    for d in &drugs {
        let _ = writeln!(drug_map, "{d}\t{}", node(d));
    }
    let true_ontology_edges = edges_text(&true_edges);
    let truth = IngredientGraph::parse(&true_ontology_edges, &drug_map)?;
    let dist: DistanceMatrix = truth.distance_matrix(&drugs, Exec::Serial);
    let p_max = f64::from(dist.p_max());

    // per-drug strength conventions
    let conventions: Vec<(f64, StrengthUnit)> = drugs
        .iter()
        .map(|_| {
            let unit = if rng.random_bool(0.1) {
                StrengthUnit::Mcg
            } else {
                StrengthUnit::Mg
            };
            (*BASE_STRENGTHS.choose(&mut rng).expect("non-empty"), unit)
        })
        .collect();
    let near: Vec<Vec<usize>> = (0..drugs.len())
        .map(|i| {
            (0..drugs.len())
                .filter(|&j| j != i && dist.get(i, j).is_some_and(|p| p <= 4))
                .collect()
        })
        .collect();

    let fresh = |d: usize, rng: &mut ChaCha8Rng| -> SentenceSpec {
        let (base, unit) = conventions[d];
        SentenceSpec {
            drug: drugs[d].clone(),
            strength: base * STRENGTH_FACTORS.choose(rng).expect("non-empty"),
            unit,
            form: if rng.random_bool(0.7) {
                DosageForm::Tablet
            } else {
                DosageForm::Capsule
            },
            dose: *DOSES.choose(rng).expect("non-empty"),
            frequency: rng.random_range(0..FREQUENCIES.len()),
            route: if rng.random_bool(0.7) {
                Route::Oral
            } else {
                Route::Unknown
            },
            template: rng.random_range(0..TEMPLATES),
        }
    };

    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut pairs = Vec::with_capacity(spec.n_pairs);
    let mut sentences = Vec::with_capacity(spec.n_pairs);
    for idx in 0..spec.n_pairs {
        let da = rng.random_range(0..drugs.len());
        let a = fresh(da, &mut rng);
        let roll: f64 = rng.random();
        let db = if roll < spec.same_drug_rate {
            da
        } else if roll < spec.same_drug_rate + spec.near_drug_rate && !near[da].is_empty() {
            *near[da].choose(&mut rng).expect("non-empty")
        } else {
            loop {
                let j = rng.random_range(0..drugs.len());
                if j != da {
                    break j;
                }
            }
        };
        let mut b = a.clone();
        let other = fresh(db, &mut rng);
        b.drug = other.drug;
        b.unit = other.unit;
        if db != da || rng.random_bool(spec.perturb_rate) {
            b.strength = other.strength;
        }
        if rng.random_bool(spec.perturb_rate) {
            b.form = other.form;
        }
        if rng.random_bool(spec.perturb_rate) {
            b.dose = other.dose;
        }
        if rng.random_bool(spec.perturb_rate) {
            b.frequency = other.frequency;
        }
        if rng.random_bool(spec.perturb_rate) {
            b.route = other.route;
        }
        if rng.random_bool(0.5) {
            b.template = other.template;
        }
        let p = f64::from(dist.get(da, db).unwrap_or(dist.p_max()));
        let gold = (planted_score(diff_magnitude(&a, &b), p, p_max) + noise.sample(&mut rng)).clamp(0.0, 5.0);
        pairs.push(SentencePair {
            id: format!("p{idx:04}"),
            text_a: render(&a),
            text_b: render(&b),
            gold: Some((gold * 1e4).round() / 1e4),
            split: None,
        });
        sentences.push((a, b));
    }

    let mut lexicon = String::from("# synthetic drug lexicon\n");
    for d in &drugs {
        let _ = writeln!(lexicon, "{d}");
    }
    Ok(SynthOutput {
        pairs,
        sentences,
        drugs,
        ontology_edges: edges_text(&published),
        drug_map,
        true_ontology_edges,
        lexicon,
    })
}
