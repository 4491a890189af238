//! Sentence-pair datasets: JSONL reading and writing, validation and the
//! seeded train/test split.
//!
//! One JSON object per line with fields `id`, `text_a`, `text_b`, `gold`
//! (number or null) and `split` (`"train"` or `"test"`, optional before
//! splitting).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentencePair {
    pub id: String,
    pub text_a: String,
    pub text_b: String,
    #[serde(default)]
    pub gold: Option<f64>,
    #[serde(default)]
    pub split: Option<Split>,
}

impl SentencePair {
    /// Sentence ids used in embedding stores: `<id>:a` and `<id>:b`.
    pub fn sentence_ids(&self) -> (String, String) {
        (format!("{}:a", self.id), format!("{}:b", self.id))
    }

    pub fn is_train(&self) -> bool {
        self.split == Some(Split::Train)
    }
}

fn validate(pair: &SentencePair, seen: &mut HashSet<String>) -> std::result::Result<(), String> {
    if pair.id.is_empty() || pair.id.contains(char::is_whitespace) {
        return Err(format!("id `{}` must be non-empty without whitespace", pair.id));
    }
    if let Some(g) = pair.gold {
        if !(0.0..=5.0).contains(&g) {
            return Err(format!("gold {g} of `{}` outside [0, 5]", pair.id));
        }
    }
    if pair.is_train() && pair.gold.is_none() {
        return Err(format!("training pair `{}` has no gold score", pair.id));
    }
    if !seen.insert(pair.id.clone()) {
        return Err(format!("duplicate id `{}`", pair.id));
    }
    Ok(())
}

/// Parses JSONL text; `file` is only used in error messages.
pub fn parse_dataset(text: &str, file: &str) -> Result<Vec<SentencePair>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: SentencePair = serde_json::from_str(line).map_err(|e| Error::format(file, k + 1, e.to_string()))?;
        validate(&pair, &mut seen).map_err(|m| {
            if m.starts_with("duplicate") {
                Error::DuplicateId(pair.id.clone())
            } else {
                Error::format(file, k + 1, m)
            }
        })?;
        out.push(pair);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn dataset_to_jsonl(pairs: &[SentencePair]) -> String {
    let mut s = String::new();
    for p in pairs {
        let _ = writeln!(s, "{}", serde_json::to_string(p).expect("pairs serialize"));
    }
    s
}

pub fn write_dataset(path: impl AsRef<Path>, pairs: &[SentencePair]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset_to_jsonl(pairs)).map_err(|e| Error::io(path, e))
}

/// Training-set size for `n` pairs: `round(ratio * n)` kept within `[1, n-1]`.
pub fn train_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n - 1)
}

/// Seeded shuffle followed by a prefix split. Split labels are written back
/// into the returned pairs, which keep their original order.
pub fn split_dataset(pairs: &[SentencePair], ratio: f64, seed: u64) -> Result<Vec<SentencePair>> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 pairs to split, got {}",
            pairs.len()
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} not in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_size(pairs.len(), ratio);
    let mut out = pairs.to_vec();
    for (rank, &k) in order.iter().enumerate() {
        out[k].split = Some(if rank < n_train { Split::Train } else { Split::Test });
    }
    if let Some(p) = out.iter().find(|p| p.is_train() && p.gold.is_none()) {
        return Err(Error::InvalidArgument(format!(
            "pair `{}` assigned to train has no gold score",
            p.id
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize) -> Vec<SentencePair> {
        (0..n)
            .map(|k| SentencePair {
                id: format!("p{k}"),
                text_a: "a".into(),
                text_b: "b".into(),
                gold: Some(1.0),
                split: None,
            })
            .collect()
    }

    #[test]
    fn loads_and_validates() {
        let good = "{\"id\":\"1\",\"text_a\":\"x\",\"text_b\":\"y\",\"gold\":3.5}\n\
                    {\"id\":\"2\",\"text_a\":\"x\",\"text_b\":\"y\",\"gold\":null,\"split\":\"test\"}\n\
                    {\"id\":\"3\",\"text_a\":\"x\",\"text_b\":\"y\",\"gold\":0,\"split\":\"train\"}\n";
        assert_eq!(parse_dataset(good, "d").unwrap().len(), 3);
        let bad = "{\"id\":\"1\",\"text_a\":\"x\",\"text_b\":\"y\",\"gold\":7}\n";
        let e = parse_dataset(bad, "d").unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("outside"), "{e}");
        let dup = format!("{0}{0}", "{\"id\":\"q\",\"text_a\":\"x\",\"text_b\":\"y\"}\n");
        assert!(parse_dataset(&dup, "d").unwrap_err().to_string().contains('q'));
        let e = parse_dataset("{\"id\":\"1\"}\n", "d").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split_dataset(&pairs(100), 0.65, 9).unwrap();
        assert_eq!(s.iter().filter(|p| p.is_train()).count(), 65);
        assert_eq!(s, split_dataset(&pairs(100), 0.65, 9).unwrap());
        assert_ne!(s, split_dataset(&pairs(100), 0.65, 10).unwrap());
        let two = split_dataset(&pairs(2), 0.5, 0).unwrap();
        assert_eq!(two.iter().filter(|p| p.is_train()).count(), 1);
        assert!(split_dataset(&pairs(1), 0.5, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let s = split_dataset(&pairs(5), 0.6, 1).unwrap();
        assert_eq!(parse_dataset(&dataset_to_jsonl(&s), "x").unwrap(), s);
    }
}
