//! EMB1 embedding files and the in-memory [`EmbeddingStore`].
//!
//! ```text
//! EMB1 <dim> <n_sentence> <n_drugspan>
//! S <sentence-id> <base64 of dim little-endian f32>
//! D <sentence-id> <drug> <base64 of dim little-endian f32>
//! ```
//!
//! All `S` records precede all `D` records. Drug names may contain spaces;
//! sentence ids may not. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    dim: usize,
    sentences: Vec<(String, Vec<f32>)>,
    spans: Vec<(String, String, Vec<f32>)>,
    sentence_index: HashMap<String, usize>,
    span_index: HashMap<(String, String), usize>,
}

fn encode(v: &[f32]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(payload: &str, dim: usize, record: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(payload)
        .map_err(|e| Error::Emb1(format!("record {record}: bad base64 payload: {e}")))?;
    if bytes.len() != dim * 4 {
        return Err(Error::Emb1(format!(
            "record {record}: expected {dim} floats, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn span_count(&self) -> usize {
        self.spans.len()
    }

    fn check_dim(&self, v: &[f32], what: &str) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "{what} has {} components, store dimension is {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn insert_sentence(&mut self, id: &str, v: Vec<f32>) -> Result<()> {
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "sentence id `{id}` must be non-empty without whitespace"
            )));
        }
        self.check_dim(&v, id)?;
        if self.sentence_index.contains_key(id) {
            return Err(Error::InvalidArgument(format!("duplicate sentence id `{id}`")));
        }
        self.sentence_index.insert(id.to_string(), self.sentences.len());
        self.sentences.push((id.to_string(), v));
        Ok(())
    }

    pub fn insert_span(&mut self, sentence: &str, drug: &str, v: Vec<f32>) -> Result<()> {
        if !self.sentence_index.contains_key(sentence) {
            return Err(Error::InvalidArgument(format!(
                "span for unknown sentence `{sentence}`"
            )));
        }
        if drug.trim().is_empty() || drug != drug.trim() || drug.contains(['\n', '\t']) {
            return Err(Error::InvalidArgument(format!("bad drug name `{drug}`")));
        }
        self.check_dim(&v, &format!("{sentence}/{drug}"))?;
        let key = (sentence.to_string(), drug.to_string());
        if self.span_index.contains_key(&key) {
            return Err(Error::InvalidArgument(format!("duplicate span {sentence}/{drug}")));
        }
        self.span_index.insert(key, self.spans.len());
        self.spans.push((sentence.to_string(), drug.to_string(), v));
        Ok(())
    }

    pub fn sentence(&self, id: &str) -> Option<&[f32]> {
        self.sentence_index.get(id).map(|&k| self.sentences[k].1.as_slice())
    }

    pub fn span(&self, sentence: &str, drug: &str) -> Option<&[f32]> {
        self.span_index
            .get(&(sentence.to_string(), drug.to_string()))
            .map(|&k| self.spans[k].2.as_slice())
    }

    /// Fails naming the first dataset sentence with no vector.
    pub fn check_sentences<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in ids {
            if self.sentence(id).is_none() {
                return Err(Error::Emb1(format!("missing sentence `{id}`")));
            }
        }
        Ok(())
    }

    pub fn to_emb1(&self) -> String {
        let mut out = format!("EMB1 {} {} {}\n", self.dim, self.sentences.len(), self.spans.len());
        for (id, v) in &self.sentences {
            let _ = writeln!(out, "S {id} {}", encode(v));
        }
        for (id, drug, v) in &self.spans {
            let _ = writeln!(out, "D {id} {drug} {}", encode(v));
        }
        out
    }

    pub fn parse_emb1(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Emb1("empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.first() != Some(&"EMB1") {
            return Err(Error::Emb1("bad magic, expected `EMB1`".into()));
        }
        let num = |k: usize| -> Result<usize> {
            fields
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Emb1(format!("bad header `{header}`")))
        };
        if fields.len() != 4 {
            return Err(Error::Emb1(format!("bad header `{header}`")));
        }
        let (dim, n_s, n_d) = (num(1)?, num(2)?, num(3)?);
        let mut store = EmbeddingStore::new(dim);
        let at = |lineno: usize, e: Error| Error::Emb1(format!("line {}: {e}", lineno + 1));

        for _ in 0..n_s {
            let (lineno, line) = lines.next().ok_or_else(|| {
                Error::Emb1(format!(
                    "truncated: expected {n_s} sentence records, found {}",
                    store.sentence_count()
                ))
            })?;
            let f: Vec<&str> = line.split(' ').collect();
            match f.as_slice() {
                ["S", id, payload] => {
                    let v = decode(payload, dim, id).map_err(|e| at(lineno, e))?;
                    store.insert_sentence(id, v).map_err(|e| at(lineno, e))?;
                }
                _ => return Err(at(lineno, Error::Emb1("expected `S <id> <payload>`".into()))),
            }
        }
        for _ in 0..n_d {
            let (lineno, line) = lines.next().ok_or_else(|| {
                Error::Emb1(format!(
                    "truncated: expected {n_d} drug-span records, found {}",
                    store.span_count()
                ))
            })?;
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() < 4 || f[0] != "D" {
                return Err(at(lineno, Error::Emb1("expected `D <id> <drug> <payload>`".into())));
            }
            let id = f[1];
            let drug = f[2..f.len() - 1].join(" ");
            let record = format!("{id}/{drug}");
            let v = decode(f[f.len() - 1], dim, &record).map_err(|e| at(lineno, e))?;
            store.insert_span(id, &drug, v).map_err(|e| at(lineno, e))?;
        }
        if let Some((lineno, _)) = lines.next() {
            return Err(at(lineno, Error::Emb1("records beyond header counts".into())));
        }
        Ok(store)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_emb1()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmbeddingStore::parse_emb1(&text)
    }
}
