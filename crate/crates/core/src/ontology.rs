//! Drug–ingredient ontology graph, hop distances and medical weights.
//!
//! The graph is undirected and unweighted. Drugs reach each other through
//! shared ingredient (or combination product) nodes, so two drugs sharing an
//! ingredient are 2 hops apart.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use crate::error::{Error, Result};
use crate::par::Exec;

/// Ontology concepts and their undirected links.
#[derive(Debug, Clone, Default)]
pub struct IngredientGraph {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
    drug_index: BTreeMap<String, usize>,
    unmapped: Vec<String>,
}

/// Max hop distance stand-in for unreachable pairs.
pub type Distance = Option<u32>;

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

fn two_columns<'a>(file: &str, lineno: usize, line: &'a str) -> Result<(&'a str, &'a str)> {
    let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
    match cols.as_slice() {
        [a, b] if !a.is_empty() && !b.is_empty() => Ok((a, b)),
        _ => Err(Error::format(
            file,
            lineno,
            format!("expected two tab-separated columns, got `{line}`"),
        )),
    }
}

impl IngredientGraph {
    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(id.to_string());
        self.index.insert(id.to_string(), i);
        self.adjacency.push(Vec::new());
        i
    }

    /// Adds an undirected edge; self-edges and duplicates are dropped.
    pub fn add_edge(&mut self, a: &str, b: &str) {
        let (i, j) = (self.intern(a), self.intern(b));
        if i == j {
            return;
        }
        if !self.adjacency[i].contains(&j) {
            self.adjacency[i].push(j);
            self.adjacency[j].push(i);
        }
    }

    /// Maps a dataset drug name onto a concept node (created if absent).
    pub fn map_drug(&mut self, drug: &str, concept: &str) -> Result<()> {
        let node = self.intern(concept);
        match self.drug_index.get(drug) {
            Some(&prev) if prev != node => Err(Error::InvalidArgument(format!(
                "drug `{drug}` mapped to both `{}` and `{concept}`",
                self.nodes[prev]
            ))),
            _ => {
                self.drug_index.insert(drug.to_string(), node);
                Ok(())
            }
        }
    }

    /// Parses the edge TSV and drug-map TSV contents.
    pub fn parse(edges: &str, drug_map: &str) -> Result<Self> {
        let mut g = IngredientGraph::default();
        for (lineno, line) in data_lines(edges) {
            let (a, b) = two_columns("edges", lineno, line)?;
            g.add_edge(a, b);
        }
        for (lineno, line) in data_lines(drug_map) {
            let (drug, concept) = two_columns("drug map", lineno, line)?;
            g.map_drug(&drug.to_lowercase(), concept)
                .map_err(|e| Error::format("drug map", lineno, e.to_string()))?;
        }
        for adj in &mut g.adjacency {
            adj.sort_unstable();
        }
        Ok(g)
    }

    pub fn load(edge_file: impl AsRef<Path>, drug_map_file: impl AsRef<Path>) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let edges = read(edge_file.as_ref())?;
        let map = read(drug_map_file.as_ref())?;
        IngredientGraph::parse(&edges, &map).map_err(|e| match e {
            Error::Format { file, line, message } => {
                let path = if file == "edges" {
                    edge_file.as_ref()
                } else {
                    drug_map_file.as_ref()
                };
                Error::Format {
                    file: path.display().to_string(),
                    line,
                    message,
                }
            }
            other => other,
        })
    }

    /// Records which dataset drugs have no ontology node. Returns them.
    pub fn register_dataset_drugs<S: AsRef<str>>(&mut self, drugs: &[S]) -> &[String] {
        self.unmapped = drugs
            .iter()
            .map(|d| d.as_ref())
            .filter(|d| !self.drug_index.contains_key(*d))
            .map(str::to_string)
            .collect();
        &self.unmapped
    }

    pub fn unmapped(&self) -> &[String] {
        &self.unmapped
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn drug_node(&self, drug: &str) -> Option<usize> {
        self.drug_index.get(drug).copied()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// Hop counts from `source` to every node.
    pub fn bfs(&self, source: usize) -> Vec<Distance> {
        let mut dist = vec![None; self.nodes.len()];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Breadth-first hop count between two drugs; `None` when either is
    /// unmapped or no path exists.
    pub fn shortest_path(&self, i: &str, j: &str) -> Distance {
        let (a, b) = (self.drug_node(i)?, self.drug_node(j)?);
        if a == b {
            return Some(0);
        }
        self.bfs(a)[b]
    }

    /// Pairwise distances among `drugs`, one BFS per source drug.
    pub fn distance_matrix<S: AsRef<str> + Sync>(&self, drugs: &[S], exec: Exec) -> DistanceMatrix {
        let nodes: Vec<Option<usize>> = drugs.iter().map(|d| self.drug_node(d.as_ref())).collect();
        let rows = exec.map(&nodes, |src| match src {
            None => vec![None; nodes.len()],
            Some(s) => {
                let dist = self.bfs(*s);
                nodes.iter().map(|t| t.and_then(|t| dist[t])).collect()
            }
        });
        DistanceMatrix { n: drugs.len(), rows }
    }
}

/// Symmetric hop distances among an ordered drug list.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    rows: Vec<Vec<Distance>>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Distance {
        self.rows[i][j]
    }

    /// Largest finite distance over all unordered pairs, or 1 when no pair is
    /// connected.
    pub fn p_max(&self) -> u32 {
        let pairs = (0..self.n).flat_map(|i| (i + 1..self.n).map(move |j| (i, j)));
        self.p_max_over(pairs)
    }

    /// Largest finite distance over the given pairs, or 1.
    pub fn p_max_over(&self, pairs: impl IntoIterator<Item = (usize, usize)>) -> u32 {
        pairs
            .into_iter()
            .filter_map(|(i, j)| self.get(i, j))
            .max()
            .filter(|&p| p > 0)
            .unwrap_or(1)
    }
}

/// Which drug pairs define `p_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PMaxScope {
    #[default]
    AllPairs,
    /// Only drug pairs that meet across some sentence pair.
    CoOccurring,
}

/// `p_max` over every unordered pair of `drugs`.
pub fn compute_p_max<S: AsRef<str> + Sync>(g: &IngredientGraph, drugs: &[S]) -> u32 {
    g.distance_matrix(drugs, Exec::default()).p_max()
}

/// Ontology weight in `[0, 5]`: 5 for the same drug, 0 at `p_max` or beyond.
/// Unreachable pairs count as `p_max`.
pub fn medical_weight(p: Distance, p_max: u32) -> f64 {
    let p_max = p_max.max(1);
    let p = p.unwrap_or(p_max).min(p_max);
    5.0 * f64::from(p_max - p) / f64::from(p_max)
}
