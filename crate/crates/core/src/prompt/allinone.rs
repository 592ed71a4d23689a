//! Prompt-token subgraphs: each center's 1-hop ego network joined with `K`
//! learnable token nodes, encoded as one block-diagonal batch.

use std::sync::Arc;

use super::PromptError;
use crate::encoder::{encode, Aggregator, EncoderVars, Propagation};
use crate::graphdata::Graph;
use crate::numcore::{cosine_sim, sigmoid, SparseMatrix, Tape, Tensor2, Var};

/// Local node `i < nodes.len()` is graph node `nodes[i]` (center first);
/// local nodes `nodes.len()..nodes.len() + tokens` are prompt tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptedSubgraph {
    pub nodes: Vec<usize>,
    pub tokens: usize,
    /// Undirected local edges `(a, b)` with `a < b`.
    pub edges: Vec<(usize, usize)>,
}

impl PromptedSubgraph {
    pub fn len(&self) -> usize {
        self.nodes.len() + self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_index(&self, k: usize) -> usize {
        self.nodes.len() + k
    }
}

/// Thresholds of the token wiring rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wiring {
    pub cross_threshold: f64,
    pub inner_threshold: f64,
}

/// Builds the prompted ego subgraph of `center`.
///
/// Tokens `k < l` are linked when `sigmoid(inner[k][l]) > inner_threshold`;
/// token `k` is linked to ego node `v` when `cos(P_k, x_v) > cross_threshold`
/// (zero vectors never link).
pub fn allinone_insert(
    g: &Graph,
    tokens: &Tensor2,
    inner: &Tensor2,
    center: usize,
    wiring: Wiring,
) -> Result<PromptedSubgraph, PromptError> {
    if center >= g.num_nodes() {
        return Err(PromptError::Shape(format!("center {center} of {} nodes", g.num_nodes())));
    }
    let k = tokens.rows();
    if inner.shape() != (k, k) || tokens.cols() != g.feature_dim() {
        return Err(PromptError::Shape(format!(
            "tokens {:?}, inner {:?}, feature dim {}",
            tokens.shape(),
            inner.shape(),
            g.feature_dim()
        )));
    }
    let mut nodes = vec![center];
    nodes.extend_from_slice(g.neighbors(center));
    let m = nodes.len();
    let mut local = std::collections::HashMap::with_capacity(m);
    for (i, &v) in nodes.iter().enumerate() {
        local.insert(v, i);
    }
    let mut edges = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        for u in g.neighbors(v) {
            if let Some(&j) = local.get(u) {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
    }
    for a in 0..k {
        for b in a + 1..k {
            if sigmoid(inner.get(a, b)) > wiring.inner_threshold {
                edges.push((m + a, m + b));
            }
        }
    }
    let x = g.features();
    for a in 0..k {
        for (i, &v) in nodes.iter().enumerate() {
            if let Ok(c) = cosine_sim(tokens.row(a), x.row(v)) {
                if c > wiring.cross_threshold {
                    edges.push((i, m + a));
                }
            }
        }
    }
    edges.sort_unstable();
    Ok(PromptedSubgraph {
        nodes,
        tokens: k,
        edges,
    })
}

/// Encodes a batch of prompted subgraphs and returns, per subgraph, the mean
/// readout (`B x h`) and the center-row embedding (`B x h`).
pub(crate) fn encode_batch(
    tape: &mut Tape,
    g: &Graph,
    subgraphs: &[PromptedSubgraph],
    tokens: Var,
    encoder: &EncoderVars,
    aggregator: Aggregator,
) -> Result<(Var, Var), PromptError> {
    let k = tape.shape(tokens).0;
    let d = g.feature_dim();
    let total: usize = subgraphs.iter().map(PromptedSubgraph::len).sum();
    let mut base = Tensor2::zeros(total, d);
    let mut scatter: Vec<Vec<(usize, f64)>> = vec![Vec::new(); total];
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); total];
    let mut readout: Vec<Vec<(usize, f64)>> = Vec::with_capacity(subgraphs.len());
    let mut centers = Vec::with_capacity(subgraphs.len());
    let mut offset = 0;
    for sg in subgraphs {
        if sg.tokens != k {
            return Err(PromptError::Shape(format!("subgraph has {} tokens, batch has {k}", sg.tokens)));
        }
        for (i, &v) in sg.nodes.iter().enumerate() {
            base.row_mut(offset + i).copy_from_slice(g.features().row(v));
        }
        for t in 0..k {
            scatter[offset + sg.token_index(t)].push((t, 1.0));
        }
        for &(a, b) in &sg.edges {
            neighbors[offset + a].push(offset + b);
            neighbors[offset + b].push(offset + a);
        }
        let w = 1.0 / sg.len() as f64;
        readout.push((offset..offset + sg.len()).map(|r| (r, w)).collect());
        centers.push(offset);
        offset += sg.len();
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    let scatter = Arc::new(SparseMatrix::from_row_lists(k, scatter)?);
    let readout = Arc::new(SparseMatrix::from_row_lists(total, readout)?);
    let base = tape.constant(base);
    let placed = tape.sparse_mix(scatter, tokens)?;
    let x = tape.add(base, placed)?;
    let prop = Propagation::new(&neighbors, aggregator);
    let e = encode(tape, &prop, x, encoder)?;
    let pooled = tape.sparse_mix(readout, e)?;
    let center_rows = tape.select_rows(e, Arc::new(centers))?;
    Ok((pooled, center_rows))
}
