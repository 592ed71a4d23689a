//! Attribute and link inference against released capability matrices,
//! trained on the attacker's shadow nodes.

mod forest;
mod gnn;
mod mlp;

pub use forest::{ForestSpec, RandomForest};
pub use gnn::{GnnAttacker, GnnSpec};
pub use mlp::{Mlp, MlpSpec};

use std::collections::HashSet;
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdata::{Graph, GraphError, SplitSpec, ATTACK_TRAIN_FRACTION};
use crate::harness::{accuracy, auc, MetricError};
use crate::numcore::{cosine_sim, NumError, Tensor2};
use crate::prompt::{CapabilityKind, CapabilityMatrix};
use crate::seeded_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("sensitive attribute takes a single value in the {0} split")]
    SingleValued(&'static str),
    #[error("capability matrix has {rows} rows for {n} nodes")]
    RowMismatch { rows: usize, n: usize },
    #[error("pair ({0}, {1}) touches a node outside the shadow set")]
    OutsideShadow(usize, usize),
    #[error("shadow subgraph has {edges} edges but only {non_edges} non-edges")]
    TooFewNonEdges { edges: usize, non_edges: usize },
    #[error("shadow subgraph has no internal edges")]
    NoShadowEdges,
    #[error("empty training split")]
    EmptySplit,
    #[error("{attacker} cannot run {task}")]
    Unsupported { attacker: AttackerKind, task: &'static str },
    #[error("invalid attacker spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackerKind {
    Mlp,
    RandomForest,
    Gnn,
    Cosine,
}

impl fmt::Display for AttackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackerKind::Mlp => "MLP",
            AttackerKind::RandomForest => "RandomForest",
            AttackerKind::Gnn => "GNN",
            AttackerKind::Cosine => "Cosine",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackTask {
    Aia,
    Lia,
}

impl fmt::Display for AttackTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackTask::Aia => "AIA",
            AttackTask::Lia => "LIA",
        })
    }
}

/// Attacker model and its hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackerModelSpec {
    Mlp(MlpSpec),
    RandomForest(ForestSpec),
    Gnn(GnnSpec),
    /// Fixed threshold on the rescaled cosine score, or chosen on train pairs.
    Cosine { threshold: Option<f64> },
}

impl AttackerModelSpec {
    pub fn kind(&self) -> AttackerKind {
        match self {
            AttackerModelSpec::Mlp(_) => AttackerKind::Mlp,
            AttackerModelSpec::RandomForest(_) => AttackerKind::RandomForest,
            AttackerModelSpec::Gnn(_) => AttackerKind::Gnn,
            AttackerModelSpec::Cosine { .. } => AttackerKind::Cosine,
        }
    }

    /// Default hyper-parameters of `kind` for `task`.
    pub fn default_for(kind: AttackerKind, task: AttackTask) -> Self {
        let hidden = match task {
            AttackTask::Aia => vec![128, 64],
            AttackTask::Lia => vec![64, 32],
        };
        match kind {
            AttackerKind::Mlp => AttackerModelSpec::Mlp(MlpSpec {
                hidden,
                epochs: 100,
                lr: 1e-3,
                batch: 64,
            }),
            AttackerKind::RandomForest => AttackerModelSpec::RandomForest(ForestSpec::default()),
            AttackerKind::Gnn => AttackerModelSpec::Gnn(GnnSpec::default()),
            AttackerKind::Cosine => AttackerModelSpec::Cosine { threshold: None },
        }
    }
}

/// One attack to mount: the task plus the attacker family at its default
/// hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttackSpec {
    pub task: AttackTask,
    pub attacker: AttackerKind,
}

impl AttackSpec {
    pub const fn new(task: AttackTask, attacker: AttackerKind) -> Self {
        Self { task, attacker }
    }

    pub fn model(&self) -> AttackerModelSpec {
        AttackerModelSpec::default_for(self.attacker, self.task)
    }
}

/// Capability rows of the shadow nodes with their sensitive bits.
#[derive(Clone, Debug)]
pub struct AiaDataset {
    pub kind: CapabilityKind,
    /// Global ids of the shadow nodes; row `i` below belongs to `shadow[i]`.
    pub shadow: Vec<usize>,
    pub features: Tensor2,
    pub labels: Vec<u8>,
    /// Local row indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Neighbor lists of the shadow-induced subgraph in local indices.
    pub shadow_neighbors: Vec<Vec<usize>>,
}

impl AiaDataset {
    pub fn train_labels(&self) -> Vec<u8> {
        self.train.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn test_labels(&self) -> Vec<u8> {
        self.test.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Balanced node pairs for link inference with their symmetric features.
#[derive(Clone, Debug)]
pub struct LiaPairSet {
    pub kind: CapabilityKind,
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<u8>,
    pub features: Tensor2,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl LiaPairSet {
    fn labels_of(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub task: AttackTask,
    pub capability: CapabilityKind,
    pub attacker: AttackerKind,
    pub auc: f64,
    pub acc: f64,
    pub seed: u64,
    pub runtime_secs: f64,
}

fn check_rows(cap: &CapabilityMatrix, g: &Graph) -> Result<(), AttackError> {
    if cap.matrix.rows() != g.num_nodes() {
        return Err(AttackError::RowMismatch {
            rows: cap.matrix.rows(),
            n: g.num_nodes(),
        });
    }
    Ok(())
}

/// Restricts the capability to shadow nodes and attaches sensitive bits.
pub fn build_aia_dataset(
    cap: &CapabilityMatrix,
    g: &Graph,
    split: &SplitSpec,
    sensitive: &[u8],
) -> Result<AiaDataset, AttackError> {
    check_rows(cap, g)?;
    if sensitive.len() != g.num_nodes() {
        return Err(AttackError::RowMismatch {
            rows: sensitive.len(),
            n: g.num_nodes(),
        });
    }
    let mut local = vec![usize::MAX; g.num_nodes()];
    for (i, &v) in split.shadow.iter().enumerate() {
        local[v] = i;
    }
    let to_local = |nodes: &[usize]| -> Result<Vec<usize>, AttackError> {
        nodes
            .iter()
            .map(|&v| match local[v] {
                usize::MAX => Err(AttackError::OutsideShadow(v, v)),
                i => Ok(i),
            })
            .collect()
    };
    let train = to_local(&split.attack_train)?;
    let test = to_local(&split.attack_test)?;
    let labels: Vec<u8> = split.shadow.iter().map(|&v| sensitive[v]).collect();
    for (name, idx) in [("train", &train), ("test", &test)] {
        let ones = idx.iter().filter(|&&i| labels[i] != 0).count();
        if ones == 0 || ones == idx.len() {
            return Err(AttackError::SingleValued(name));
        }
    }
    let shadow_neighbors = split
        .shadow
        .iter()
        .map(|&v| g.neighbors(v).iter().filter_map(|&u| (local[u] != usize::MAX).then_some(local[u])).collect())
        .collect();
    Ok(AiaDataset {
        kind: cap.kind,
        shadow: split.shadow.clone(),
        features: cap.matrix.select_rows(&split.shadow),
        labels,
        train,
        test,
        shadow_neighbors,
    })
}

/// `[f_u ⊙ f_v, |f_u − f_v|]`, symmetric in its arguments.
pub fn pair_features(fu: &[f64], fv: &[f64]) -> Vec<f64> {
    assert_eq!(fu.len(), fv.len(), "pair endpoints must have equal width");
    fu.iter()
        .zip(fv)
        .map(|(a, b)| a * b)
        .chain(fu.iter().zip(fv).map(|(a, b)| (a - b).abs()))
        .collect()
}

/// All shadow-internal edges plus as many uniformly drawn shadow non-edges,
/// each class split 70/30 into train and test.
pub fn build_lia_pairs(g: &Graph, cap: &CapabilityMatrix, split: &SplitSpec, seed: u64) -> Result<LiaPairSet, AttackError> {
    check_rows(cap, g)?;
    let in_shadow = split.shadow_mask(g.num_nodes());
    let positives: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| in_shadow[u] && in_shadow[v])
        .collect();
    if positives.is_empty() {
        return Err(AttackError::NoShadowEdges);
    }
    let s = split.shadow.len();
    let non_edges = s * (s - 1) / 2 - positives.len();
    if non_edges < positives.len() {
        return Err(AttackError::TooFewNonEdges {
            edges: positives.len(),
            non_edges,
        });
    }
    let mut rng = seeded_rng(seed, 0x11a);
    let mut seen = HashSet::with_capacity(positives.len());
    let mut negatives = Vec::with_capacity(positives.len());
    while negatives.len() < positives.len() {
        let a = split.shadow[rng.random_range(0..s)];
        let b = split.shadow[rng.random_range(0..s)];
        let pair = (a.min(b), a.max(b));
        if a != b && !g.has_edge(a, b) && seen.insert(pair) {
            negatives.push(pair);
        }
    }

    let mut pairs = positives.clone();
    pairs.extend(&negatives);
    let labels: Vec<u8> = std::iter::repeat_n(1, positives.len())
        .chain(std::iter::repeat_n(0, negatives.len()))
        .collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for range in [0..positives.len(), positives.len()..pairs.len()] {
        let mut idx: Vec<usize> = range.collect();
        idx.shuffle(&mut rng);
        let cut = (ATTACK_TRAIN_FRACTION * idx.len() as f64).floor() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();

    let q = cap.matrix.cols();
    let mut features = Tensor2::zeros(pairs.len(), 2 * q);
    for (i, &(u, v)) in pairs.iter().enumerate() {
        features
            .row_mut(i)
            .copy_from_slice(&pair_features(cap.matrix.row(u), cap.matrix.row(v)));
    }
    Ok(LiaPairSet {
        kind: cap.kind,
        pairs,
        labels,
        features,
        train,
        test,
    })
}

/// A trained attack model.
#[derive(Clone, Debug)]
pub enum FittedAttacker {
    Mlp(Mlp),
    RandomForest(RandomForest),
    Gnn(GnnAttacker),
    Cosine { threshold: f64 },
}

impl FittedAttacker {
    pub fn kind(&self) -> AttackerKind {
        match self {
            FittedAttacker::Mlp(_) => AttackerKind::Mlp,
            FittedAttacker::RandomForest(_) => AttackerKind::RandomForest,
            FittedAttacker::Gnn(_) => AttackerKind::Gnn,
            FittedAttacker::Cosine { .. } => AttackerKind::Cosine,
        }
    }

    /// Positive-class scores for feature rows (MLP and forest only).
    pub fn score_rows(&self, x: &Tensor2) -> Result<Vec<f64>, AttackError> {
        match self {
            FittedAttacker::Mlp(m) => m.predict_proba(x),
            FittedAttacker::RandomForest(f) => Ok(f.predict_proba(x)),
            other => Err(AttackError::Unsupported {
                attacker: other.kind(),
                task: "row scoring",
            }),
        }
    }
}

fn fit_rows(spec: &AttackerModelSpec, x: &Tensor2, y: &[u8], seed: u64) -> Result<FittedAttacker, AttackError> {
    match spec {
        AttackerModelSpec::Mlp(s) => Ok(FittedAttacker::Mlp(Mlp::fit(s, x, y, seed)?)),
        AttackerModelSpec::RandomForest(s) => Ok(FittedAttacker::RandomForest(RandomForest::fit(s, x, y, seed)?)),
        _ => unreachable!("row models only"),
    }
}

/// Fits an attribute-inference attacker on the shadow training rows.
pub fn train_aia_attacker(spec: &AttackerModelSpec, data: &AiaDataset, seed: u64) -> Result<FittedAttacker, AttackError> {
    if data.train.is_empty() {
        return Err(AttackError::EmptySplit);
    }
    let y = data.train_labels();
    match spec {
        AttackerModelSpec::Gnn(s) => Ok(FittedAttacker::Gnn(GnnAttacker::fit(
            s,
            &data.features,
            &data.shadow_neighbors,
            &data.train,
            &y,
            seed,
        )?)),
        AttackerModelSpec::Cosine { .. } => Err(AttackError::Unsupported {
            attacker: AttackerKind::Cosine,
            task: "attribute inference",
        }),
        _ => fit_rows(spec, &data.features.select_rows(&data.train), &y, seed),
    }
}

/// Fits a link-inference attacker on the training pairs.
pub fn train_lia_attacker(spec: &AttackerModelSpec, pairs: &LiaPairSet, cap: &Tensor2, seed: u64) -> Result<FittedAttacker, AttackError> {
    if pairs.train.is_empty() {
        return Err(AttackError::EmptySplit);
    }
    match spec {
        AttackerModelSpec::Gnn(_) => Err(AttackError::Unsupported {
            attacker: AttackerKind::Gnn,
            task: "link inference",
        }),
        AttackerModelSpec::Cosine { threshold } => {
            let threshold = match threshold {
                Some(t) => (t + 1.0) / 2.0,
                None => {
                    let scores = cosine_scores(cap, &pairs.pairs, &pairs.train);
                    best_threshold(&scores, &pairs.labels_of(&pairs.train))
                }
            };
            Ok(FittedAttacker::Cosine { threshold })
        }
        _ => fit_rows(spec, &pairs.features.select_rows(&pairs.train), &pairs.labels_of(&pairs.train), seed),
    }
}

/// Cosine similarity of endpoint rows rescaled to `[0, 1]`; a zero row counts as similarity 0.
pub fn cosine_score(fu: &[f64], fv: &[f64]) -> f64 {
    (cosine_sim(fu, fv).unwrap_or(0.0) + 1.0) / 2.0
}

fn cosine_scores(cap: &Tensor2, pairs: &[(usize, usize)], idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .map(|&i| {
            let (u, v) = pairs[i];
            cosine_score(cap.row(u), cap.row(v))
        })
        .collect()
}

/// Threshold maximizing accuracy of `score > t` on the given examples.
fn best_threshold(scores: &[f64], labels: &[u8]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // everything predicted positive
    let mut correct = labels.iter().filter(|&&l| l != 0).count();
    let mut best = (correct, scores[order[0]] - 1.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                correct -= 1;
            } else {
                correct += 1;
            }
            i += 1;
        }
        let t = if i < order.len() { 0.5 * (s + scores[order[i]]) } else { s };
        if correct > best.0 {
            best = (correct, t);
        }
    }
    best.1
}

fn result(task: AttackTask, kind: CapabilityKind, attacker: &FittedAttacker, scores: &[f64], labels: &[u8], threshold: f64, seed: u64, start: Instant) -> Result<AttackResult, AttackError> {
    let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    Ok(AttackResult {
        task,
        capability: kind,
        attacker: attacker.kind(),
        auc: auc(scores, labels)?,
        acc: accuracy(&pred, labels)?,
        seed,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// AUC and accuracy (threshold 0.5) of a fitted attacker on the test rows.
pub fn run_aia(attacker: &FittedAttacker, data: &AiaDataset, seed: u64) -> Result<AttackResult, AttackError> {
    let start = Instant::now();
    let scores = match attacker {
        FittedAttacker::Gnn(m) => {
            let all = m.predict_proba(&data.features, &data.shadow_neighbors)?;
            data.test.iter().map(|&i| all[i]).collect()
        }
        _ => attacker.score_rows(&data.features.select_rows(&data.test))?,
    };
    result(AttackTask::Aia, data.kind, attacker, &scores, &data.test_labels(), 0.5, seed, start)
}

/// AUC and accuracy of a fitted attacker on the test pairs.
pub fn run_lia(attacker: &FittedAttacker, pairs: &LiaPairSet, cap: &Tensor2, seed: u64) -> Result<AttackResult, AttackError> {
    let start = Instant::now();
    let (scores, threshold) = match attacker {
        FittedAttacker::Cosine { threshold } => (cosine_scores(cap, &pairs.pairs, &pairs.test), *threshold),
        _ => (attacker.score_rows(&pairs.features.select_rows(&pairs.test))?, 0.5),
    };
    result(AttackTask::Lia, pairs.kind, attacker, &scores, &pairs.labels_of(&pairs.test), threshold, seed, start)
}

/// Threshold-free cosine link attack with the threshold picked on train pairs.
pub fn lia_cosine(pairs: &LiaPairSet, cap: &Tensor2, seed: u64) -> Result<AttackResult, AttackError> {
    let attacker = train_lia_attacker(&AttackerModelSpec::Cosine { threshold: None }, pairs, cap, seed)?;
    run_lia(&attacker, pairs, cap, seed)
}

/// Trains `spec` and evaluates it in one step.
pub fn attack_aia(spec: &AttackerModelSpec, data: &AiaDataset, seed: u64) -> Result<AttackResult, AttackError> {
    let start = Instant::now();
    let fitted = train_aia_attacker(spec, data, seed)?;
    let mut r = run_aia(&fitted, data, seed)?;
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Trains `spec` and evaluates it in one step.
pub fn attack_lia(spec: &AttackerModelSpec, pairs: &LiaPairSet, cap: &Tensor2, seed: u64) -> Result<AttackResult, AttackError> {
    let start = Instant::now();
    let fitted = train_lia_attacker(spec, pairs, cap, seed)?;
    let mut r = run_lia(&fitted, pairs, cap, seed)?;
    r.runtime_secs = start.elapsed().as_secs_f64();
    Ok(r)
}

#[cfg(test)]
mod tests;
