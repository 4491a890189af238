//! Run configuration, read from flat `key = value` TOML files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::LexicalConfig;
use crate::drug_graph::{GraphMode, Normalization};
use crate::error::{Error, Result};
use crate::gcn::{Aggregation, GcnConfig};
use crate::ontology::PMaxScope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Local,
    Medical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Lexical,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub split_ratio: f64,
    pub iterations: usize,
    pub mode: Mode,
    /// Defaults to 0.2 in local mode and 0.5 in medical mode.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,

    pub backbone: BackboneKind,
    pub backbone_epochs: usize,
    pub backbone_lr: f64,
    pub encoder_dim: usize,
    pub encoder_buckets: usize,
    pub encoder_init: f64,
    pub encoder_lr_scale: f64,

    pub hidden: Vec<usize>,
    pub gcn_epochs: usize,
    pub gcn_lr: f64,
    /// Layer step size relative to `gcn_lr`; 0 trains only the head.
    pub gcn_layer_lr_scale: f64,
    pub aggregation: Aggregation,
    pub normalization: Normalization,
    /// Min-max scale concept differences over the training pairs.
    pub scale_diffs: bool,
    /// Node feature width when no embedding file is given.
    pub fallback_dim: usize,
    pub p_max_scope: PMaxScope,

    pub embeddings: Option<PathBuf>,
    pub ontology_edges: Option<PathBuf>,
    pub drug_map: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let gcn = GcnConfig::default();
        let lex = LexicalConfig::default();
        Config {
            seed: 0,
            split_ratio: 0.65,
            iterations: 5,
            mode: Mode::Medical,
            alpha: None,
            beta: 0.5,
            gamma_a: gcn.gamma_a,
            gamma_b: 0.5,
            backbone: BackboneKind::Lexical,
            backbone_epochs: 200,
            backbone_lr: 0.05,
            encoder_dim: lex.encoder_dim,
            encoder_buckets: lex.encoder_buckets,
            encoder_init: lex.encoder_init,
            encoder_lr_scale: lex.encoder_lr_scale,
            hidden: gcn.hidden,
            gcn_epochs: gcn.epochs,
            gcn_lr: gcn.lr,
            gcn_layer_lr_scale: gcn.layer_lr_scale,
            aggregation: gcn.aggregation,
            normalization: Normalization::default(),
            scale_diffs: true,
            fallback_dim: 64,
            p_max_scope: PMaxScope::AllPairs,
            embeddings: None,
            ontology_edges: None,
            drug_map: None,
            lexicon: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.mode {
            Mode::Local => 0.2,
            Mode::Medical => 0.5,
        })
    }

    pub fn graph_mode(&self) -> GraphMode {
        match self.mode {
            Mode::Local => GraphMode::Local { alpha: self.alpha() },
            Mode::Medical => GraphMode::Medical {
                alpha: self.alpha(),
                beta: self.beta,
            },
        }
    }

    pub fn gcn(&self) -> GcnConfig {
        GcnConfig {
            hidden: self.hidden.clone(),
            lr: self.gcn_lr,
            epochs: self.gcn_epochs,
            gamma_a: self.gamma_a,
            aggregation: self.aggregation,
            layer_lr_scale: self.gcn_layer_lr_scale,
        }
    }

    pub fn lexical(&self) -> LexicalConfig {
        LexicalConfig {
            encoder_dim: self.encoder_dim,
            encoder_buckets: self.encoder_buckets,
            encoder_init: self.encoder_init,
            encoder_lr_scale: self.encoder_lr_scale,
            seed: self.seed,
            ..LexicalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = String::new();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.alpha()) {
            let _ = write!(bad, "alpha {} not in [0, 1]; ", self.alpha());
        }
        if !unit(self.beta) {
            let _ = write!(bad, "beta {} not in [0, 1]; ", self.beta);
        }
        if !(self.gamma_a >= 0.0 && self.gamma_b >= 0.0) {
            bad.push_str("gamma_a and gamma_b must be >= 0; ");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            let _ = write!(bad, "split_ratio {} not in (0, 1); ", self.split_ratio);
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            bad.push_str("hidden must list positive layer widths; ");
        }
        if self.fallback_dim == 0 {
            bad.push_str("fallback_dim must be positive; ");
        }
        if !(self.backbone_lr > 0.0 && self.gcn_lr > 0.0) {
            bad.push_str("learning rates must be positive; ");
        }
        if !(self.gcn_layer_lr_scale >= 0.0 && self.encoder_lr_scale >= 0.0) {
            bad.push_str("learning-rate scales must be >= 0; ");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.trim_end_matches("; ").to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_keys() {
        let c = Config::parse("seed = 7\nmode = \"local\"\nhidden = [8, 4]\nbeta = 0.3\n").unwrap();
        assert_eq!(
            (c.seed, c.mode, c.alpha(), c.hidden.clone()),
            (7, Mode::Local, 0.2, vec![8, 4])
        );
        assert_eq!(Config::default().alpha(), 0.5);
        assert!(Config::parse("beta = 2.0").is_err());
        assert!(Config::parse("no_such_key = 1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = Config {
            alpha: Some(0.3),
            embeddings: Some("x.emb".into()),
            ..Config::default()
        };
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }
}
