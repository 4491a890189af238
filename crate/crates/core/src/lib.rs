//! Graph-augmented cyclic co-training for prescription sentence similarity.
//!
//! The pipeline parses tablet prescription sentences into structured
//! concepts ([`rx_parse`]), turns sentence pairs into concept difference
//! features ([`concept_diff`]), builds a drug graph from gold labels, backbone
//! pseudo labels and ontology distances ([`ontology`], [`drug_graph`]), trains
//! a GCN scorer on it ([`gcn`]) and alternates pseudo labels between the GCN
//! and a pluggable sentence-pair scorer ([`backbone`], [`cycle`]).

pub mod backbone;
pub mod checkpoint;
pub mod concept_diff;
pub mod config;
pub mod cycle;
pub mod data;
pub mod drug_graph;
pub mod emb;
pub mod error;
pub mod gcn;
pub mod metrics;
pub mod ontology;
pub mod par;
pub mod rx_parse;
pub mod synth;

pub use error::{Error, Result};
