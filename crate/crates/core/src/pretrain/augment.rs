use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PretrainError;
use crate::graphdata::Graph;
use crate::seeded_rng;

/// Stochastic graph perturbation rates, each in `[0, 1)` except edge drop
/// which may be 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    #[serde(default)]
    pub edge_drop: f64,
    #[serde(default)]
    pub feature_mask: f64,
    #[serde(default)]
    pub node_drop: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            edge_drop: 0.2,
            feature_mask: 0.2,
            node_drop: 0.0,
        }
    }
}

impl AugmentSpec {
    pub const NONE: AugmentSpec = AugmentSpec {
        edge_drop: 0.0,
        feature_mask: 0.0,
        node_drop: 0.0,
    };

    pub fn validate(&self) -> Result<(), PretrainError> {
        let ok = (0.0..=1.0).contains(&self.edge_drop)
            && (0.0..1.0).contains(&self.feature_mask)
            && (0.0..1.0).contains(&self.node_drop);
        if !ok {
            return Err(PretrainError::InvalidConfig(format!("augmentation rates out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.edge_drop == 0.0 && self.feature_mask == 0.0 && self.node_drop == 0.0
    }
}

/// An augmented view; node `i` of `graph` is node `kept[i]` of the source.
#[derive(Clone, Debug)]
pub struct AugmentedGraph {
    pub graph: Graph,
    pub kept: Vec<usize>,
}

pub fn augment(g: &Graph, spec: &AugmentSpec, seed: u64) -> Result<AugmentedGraph, PretrainError> {
    spec.validate()?;
    let mut rng = seeded_rng(seed, 0xa9);
    let n = g.num_nodes();

    let kept: Vec<usize> = if spec.node_drop > 0.0 {
        (0..n).filter(|_| rng.random::<f64>() >= spec.node_drop).collect()
    } else {
        (0..n).collect()
    };
    if kept.is_empty() {
        return Err(PretrainError::AllNodesDropped);
    }
    let mut view = if kept.len() < n { g.induced(&kept)? } else { g.clone() };

    if spec.edge_drop > 0.0 {
        let edges = view
            .edges()
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() >= spec.edge_drop)
            .collect();
        view = view.with_edges(edges)?;
    }
    if spec.feature_mask > 0.0 {
        let mut x = view.features().clone();
        for v in x.as_mut_slice() {
            if rng.random::<f64>() < spec.feature_mask {
                *v = 0.0;
            }
        }
        view = view.with_features(x)?;
    }
    Ok(AugmentedGraph { graph: view, kept })
}
