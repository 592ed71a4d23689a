//! Graphs, bundle IO, synthetic block-model benchmarks, dataset statistics
//! and the target/shadow/k-shot sampling protocol.

mod graph;
mod io;
mod sbm;
mod split;
mod stats;

pub use graph::{standardize_columns, Graph};
pub use io::{load_graph, save_graph, BundleMeta};
pub use sbm::{generate_sbm, SbmSpec};
pub use split::{sample_k_shot, split_target_shadow, KShot, KSpec, SplitSpec, ATTACK_TRAIN_FRACTION};
pub use stats::{class_connectivity, edge_homophily, incidence_counts};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("missing bundle file {0}")]
    MissingFile(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{what}: expected {expected} rows, found {found}")]
    RowCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("node {node} has label {label} outside [0, {num_classes})")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) is not in canonical u < v order (directed input is not supported)")]
    NonCanonicalEdge(usize, usize),
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("graph has no edges")]
    NoEdges,
    #[error("no sensitive attribute and feature column {0} does not exist")]
    NoSensitiveColumn(usize),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("category {category} has {available} target nodes, need {needed}")]
    InsufficientNodes {
        category: usize,
        available: usize,
        needed: usize,
    },
}
