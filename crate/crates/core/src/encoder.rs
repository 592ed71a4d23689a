//! Message-passing node encoder, mean readout and the feature-shuffle
//! corruption used by contrastive pre-training.
//!
//! Layer `l` computes
//! `h_v = act(h_v W_self + AGG{h_u : u ∈ N(v)} W_neigh + b)`
//! where `AGG` is mean, sum or max over neighbors, an empty neighborhood
//! contributes the zero vector, and the last layer has no activation.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graphdata::{Graph, GraphError};
use crate::numcore::{NumError, ParamSet, SparseMatrix, Tape, Tensor2, Var};
use crate::seeded_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("readout over an empty node subset")]
    EmptySubset,
    #[error("corruption needs at least 2 nodes, graph has {0}")]
    TooFewNodes(usize),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Mean,
    Sum,
    Max,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub aggregator: Aggregator,
}

fn default_layers() -> usize {
    2
}

fn default_hidden() -> usize {
    128
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: default_layers(),
            hidden: default_hidden(),
            aggregator: Aggregator::Mean,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(EncoderError::InvalidConfig("layers and hidden must be >= 1".into()));
        }
        Ok(())
    }
}

/// Weights of the encoder, stored as `enc.l{i}.w_self`, `enc.l{i}.w_neigh`
/// and `enc.l{i}.bias` in a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct EncoderParams {
    config: EncoderConfig,
    input_dim: usize,
    params: ParamSet,
    frozen: bool,
}

pub(crate) fn layer_names(l: usize) -> [String; 3] {
    [
        format!("enc.l{l}.w_self"),
        format!("enc.l{l}.w_neigh"),
        format!("enc.l{l}.bias"),
    ]
}

/// Glorot-uniform matrix.
pub(crate) fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor2 {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized by construction")
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, input_dim: usize, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        if input_dim == 0 {
            return Err(EncoderError::InvalidConfig("input_dim must be >= 1".into()));
        }
        let mut rng = seeded_rng(seed, 0xe1);
        let mut params = ParamSet::new();
        for l in 0..config.layers {
            let fan_in = if l == 0 { input_dim } else { config.hidden };
            let [ws, wn, b] = layer_names(l);
            params.insert(ws, glorot(&mut rng, fan_in, config.hidden))?;
            params.insert(wn, glorot(&mut rng, fan_in, config.hidden))?;
            params.insert(b, Tensor2::zeros(1, config.hidden))?;
        }
        Ok(Self {
            config,
            input_dim,
            params,
            frozen: false,
        })
    }

    /// Rebuilds from a parameter set holding (at least) the encoder tensors.
    pub fn from_params(config: EncoderConfig, source: &ParamSet) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut input_dim = 0;
        let mut in_dim = None;
        for l in 0..config.layers {
            for name in layer_names(l) {
                let t = source
                    .get(&name)
                    .ok_or_else(|| EncoderError::Dimension(format!("missing tensor {name}")))?;
                params.insert(name, t.clone())?;
            }
            let [ws, wn, b] = layer_names(l);
            let (ws, wn, b) = (params.get(&ws).unwrap(), params.get(&wn).unwrap(), params.get(&b).unwrap());
            let expected_in = in_dim.unwrap_or(ws.rows());
            if l == 0 {
                input_dim = ws.rows();
            }
            if ws.shape() != (expected_in, config.hidden) || wn.shape() != ws.shape() || b.shape() != (1, config.hidden) {
                return Err(EncoderError::Dimension(format!("layer {l} tensors have inconsistent shapes")));
            }
            in_dim = Some(config.hidden);
        }
        Ok(Self {
            config,
            input_dim,
            params,
            frozen: false,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Hex SHA-256 over tensor names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.params.iter() {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.rows() as u32).to_le_bytes());
            h.update((t.cols() as u32).to_le_bytes());
            for x in t.as_slice() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// Copies encoder tensors out of a larger training parameter set.
    pub(crate) fn load_from(&mut self, source: &ParamSet) -> Result<(), EncoderError> {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let value = source
                .get(&name)
                .ok_or_else(|| EncoderError::Dimension(format!("missing tensor {name}")))?
                .clone();
            self.params.set_value(id, value)?;
        }
        Ok(())
    }

    /// Copies the encoder tensors into `target` (which must not contain them yet).
    pub(crate) fn export_into(&self, target: &mut ParamSet) -> Result<(), EncoderError> {
        for (name, t) in self.params.iter() {
            target.insert(name, t.clone())?;
        }
        Ok(())
    }

    /// Binds weights as constants (no gradient).
    pub fn bind_frozen(&self, tape: &mut Tape) -> EncoderVars {
        self.bind_with(tape, |tape, t| tape.constant(t.clone()))
    }

    pub(crate) fn bind_with(&self, tape: &mut Tape, mut f: impl FnMut(&mut Tape, &Tensor2) -> Var) -> EncoderVars {
        let layers = (0..self.config.layers)
            .map(|l| {
                let [ws, wn, b] = layer_names(l);
                (
                    f(tape, self.params.get(&ws).unwrap()),
                    f(tape, self.params.get(&wn).unwrap()),
                    f(tape, self.params.get(&b).unwrap()),
                )
            })
            .collect();
        EncoderVars { layers }
    }

    /// Binds encoder tensors of a training set (`enc.*` names) as trainable.
    pub fn bind_trainable(config: &EncoderConfig, tape: &mut Tape, params: &ParamSet) -> Result<EncoderVars, EncoderError> {
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let [ws, wn, b] = layer_names(l);
            let get = |n: &str| params.id(n).ok_or_else(|| EncoderError::Dimension(format!("missing tensor {n}")));
            layers.push((tape.param(params, get(&ws)?), tape.param(params, get(&wn)?), tape.param(params, get(&b)?)));
        }
        Ok(EncoderVars { layers })
    }
}

/// Encoder weights recorded on a tape: `(w_self, w_neigh, bias)` per layer.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<(Var, Var, Var)>,
}

/// Precomputed neighbor aggregation for one graph.
#[derive(Clone, Debug)]
pub enum Propagation {
    Linear(Arc<SparseMatrix>),
    Max(Arc<Vec<Vec<usize>>>),
}

impl Propagation {
    pub fn new(neighbors: &[Vec<usize>], aggregator: Aggregator) -> Self {
        match aggregator {
            Aggregator::Max => Propagation::Max(Arc::new(neighbors.to_vec())),
            Aggregator::Mean | Aggregator::Sum => {
                let n = neighbors.len();
                let rows = neighbors
                    .iter()
                    .map(|nb| {
                        let w = match aggregator {
                            Aggregator::Mean => 1.0 / nb.len().max(1) as f64,
                            _ => 1.0,
                        };
                        nb.iter().map(|&u| (u, w)).collect()
                    })
                    .collect();
                Propagation::Linear(Arc::new(SparseMatrix::from_row_lists(n, rows).expect("neighbors in range")))
            }
        }
    }

    pub fn for_graph(g: &Graph, aggregator: Aggregator) -> Self {
        Self::new(g.neighbor_lists(), aggregator)
    }

    pub fn num_nodes(&self) -> usize {
        match self {
            Propagation::Linear(m) => m.rows(),
            Propagation::Max(nb) => nb.len(),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, NumError> {
        match self {
            Propagation::Linear(m) => tape.sparse_mix(m.clone(), x),
            Propagation::Max(nb) => tape.neighbor_max(nb, x),
        }
    }
}

/// Records the encoder forward pass on `tape`.
pub fn encode(tape: &mut Tape, prop: &Propagation, x: Var, vars: &EncoderVars) -> Result<Var, EncoderError> {
    if tape.shape(x).0 != prop.num_nodes() {
        return Err(EncoderError::Dimension(format!(
            "{} feature rows for {} nodes",
            tape.shape(x).0,
            prop.num_nodes()
        )));
    }
    let mut h = x;
    let last = vars.layers.len() - 1;
    for (l, &(ws, wn, b)) in vars.layers.iter().enumerate() {
        if tape.shape(h).1 != tape.shape(ws).0 {
            return Err(EncoderError::Dimension(format!(
                "layer {l} expects {} input columns, got {}",
                tape.shape(ws).0,
                tape.shape(h).1
            )));
        }
        let own = tape.matmul(h, ws)?;
        let agg = prop.apply(tape, h)?;
        let neigh = tape.matmul(agg, wn)?;
        let sum = tape.add(own, neigh)?;
        let pre = tape.add_row(sum, b)?;
        h = if l == last { pre } else { tape.relu(pre)? };
    }
    Ok(h)
}

/// Node embeddings of `g` under frozen `params`, optionally on replacement features.
pub fn gnn_forward(g: &Graph, params: &EncoderParams, features: Option<&Tensor2>) -> Result<Tensor2, EncoderError> {
    let x = features.unwrap_or(g.features());
    if x.shape() != (g.num_nodes(), params.input_dim()) {
        return Err(EncoderError::Dimension(format!(
            "features {:?}, expected {}x{}",
            x.shape(),
            g.num_nodes(),
            params.input_dim()
        )));
    }
    let prop = Propagation::for_graph(g, params.config().aggregator);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = params.bind_frozen(&mut tape);
    let out = encode(&mut tape, &prop, xv, &vars)?;
    Ok(tape.value(out).clone())
}

/// Column mean over all rows or over `subset`.
pub fn readout_mean(e: &Tensor2, subset: Option<&[usize]>) -> Result<Vec<f64>, EncoderError> {
    let rows: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..e.rows()).collect(),
    };
    if rows.is_empty() {
        return Err(EncoderError::EmptySubset);
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= e.rows()) {
        return Err(EncoderError::Dimension(format!("row {bad} of {}", e.rows())));
    }
    let mut out = vec![0.0; e.cols()];
    for &r in &rows {
        for (o, &x) in out.iter_mut().zip(e.row(r)) {
            *o += x;
        }
    }
    let n = rows.len() as f64;
    out.iter_mut().for_each(|x| *x /= n);
    Ok(out)
}

/// Same topology with feature rows shuffled by a uniform random permutation.
pub fn corrupt_graph(g: &Graph, seed: u64) -> Result<Graph, EncoderError> {
    let n = g.num_nodes();
    if n < 2 {
        return Err(EncoderError::TooFewNodes(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(seed, 0xc0));
    Ok(g.with_features(g.features().select_rows(&perm))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{generate_sbm, SbmSpec};
    use crate::testutil::random_tensor;

    fn scalar_encoder(aggregator: Aggregator) -> EncoderParams {
        let mut p = ParamSet::new();
        let [ws, wn, b] = layer_names(0);
        p.insert(ws, Tensor2::scalar(1.0)).unwrap();
        p.insert(wn, Tensor2::scalar(1.0)).unwrap();
        p.insert(b, Tensor2::scalar(0.0)).unwrap();
        EncoderParams::from_params(
            EncoderConfig {
                layers: 1,
                hidden: 1,
                aggregator,
            },
            &p,
        )
        .unwrap()
    }

    fn path4() -> Graph {
        Graph::from_parts(
            "path",
            Tensor2::column_vector(&[1.0, 2.0, 3.0, 4.0]),
            Tensor2::column_vector(&[1.0, 2.0, 3.0, 4.0]),
            vec![(0, 1), (1, 2), (2, 3)],
            vec![0; 4],
            1,
            None,
        )
        .unwrap()
    }

    /// Straight-line message passing for one scalar layer.
    fn brute_force_layer(g: &Graph, x: &[f64], agg: Aggregator) -> Vec<f64> {
        (0..g.num_nodes())
            .map(|v| {
                let nb: Vec<f64> = g.neighbors(v).iter().map(|&u| x[u]).collect();
                let a = if nb.is_empty() {
                    0.0
                } else {
                    match agg {
                        Aggregator::Mean => nb.iter().sum::<f64>() / nb.len() as f64,
                        Aggregator::Sum => nb.iter().sum(),
                        Aggregator::Max => nb.iter().copied().fold(f64::MIN, f64::max),
                    }
                };
                x[v] + a
            })
            .collect()
    }

    #[test]
    fn path_graph_hand_values() {
        let g = path4();
        let oracle = brute_force_layer(&g, &[1.0, 2.0, 3.0, 4.0], Aggregator::Mean);
        assert_eq!(oracle, vec![3.0, 4.0, 6.0, 7.0]);
        for agg in [Aggregator::Mean, Aggregator::Sum, Aggregator::Max] {
            let e = gnn_forward(&g, &scalar_encoder(agg), None).unwrap();
            assert_eq!(e.as_slice(), brute_force_layer(&g, &[1.0, 2.0, 3.0, 4.0], agg).as_slice(), "{agg:?}");
        }
    }

    #[test]
    fn isolated_node_uses_only_self_weight() {
        let g = Graph::from_parts(
            "iso",
            Tensor2::from_rows(&[[1.0, -2.0], [0.5, 0.5], [3.0, 1.0]]).unwrap(),
            Tensor2::zeros(3, 2),
            vec![(1, 2)],
            vec![0; 3],
            1,
            None,
        )
        .unwrap();
        let cfg = EncoderConfig {
            layers: 1,
            hidden: 3,
            aggregator: Aggregator::Mean,
        };
        let enc = EncoderParams::init(cfg, 2, 4).unwrap();
        let e = gnn_forward(&g, &enc, None).unwrap();
        let ws = enc.params().get("enc.l0.w_self").unwrap();
        let expected = g.features().select_rows(&[0]).matmul(ws).unwrap();
        assert!(e.select_rows(&[0]).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn isolated_node_independent_of_others() {
        let spec = SbmSpec {
            n: 12,
            num_classes: 2,
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 3,
            feature_signal: 1.0,
            sensitive_correlation: 1.0,
        };
        let g = generate_sbm(&spec, 1).unwrap();
        let keep: Vec<(usize, usize)> = g.edges().iter().copied().filter(|&(u, v)| u != 0 && v != 0).collect();
        let g = g.with_edges(keep).unwrap();
        let enc = EncoderParams::init(EncoderConfig { hidden: 5, ..Default::default() }, 3, 2).unwrap();
        let base = gnn_forward(&g, &enc, None).unwrap();
        let mut x = g.features().clone();
        for v in 1..12 {
            x.row_mut(v).iter_mut().for_each(|a| *a += 3.0);
        }
        let moved = gnn_forward(&g, &enc, Some(&x)).unwrap();
        assert_eq!(base.row(0), moved.row(0));
    }

    #[test]
    fn identical_connected_nodes_share_embeddings() {
        let g = Graph::from_parts(
            "pair",
            Tensor2::from_rows(&[[0.3, 0.7], [0.3, 0.7]]).unwrap(),
            Tensor2::zeros(2, 2),
            vec![(0, 1)],
            vec![0, 0],
            1,
            None,
        )
        .unwrap();
        let enc = EncoderParams::init(EncoderConfig { hidden: 4, ..Default::default() }, 2, 0).unwrap();
        let e = gnn_forward(&g, &enc, None).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn permutation_equivariance() {
        let spec = SbmSpec {
            n: 10,
            num_classes: 2,
            p_in: 0.5,
            p_out: 0.2,
            feature_dim: 3,
            feature_signal: 1.0,
            sensitive_correlation: 1.0,
        };
        for seed in 0..5 {
            let g = generate_sbm(&spec, seed).unwrap();
            let mut perm: Vec<usize> = (0..10).collect();
            perm.shuffle(&mut seeded_rng(seed, 99));
            // node i of the permuted graph is node perm[i] of the original
            let pg = g.induced(&perm).unwrap();
            for agg in [Aggregator::Mean, Aggregator::Sum, Aggregator::Max] {
                let enc = EncoderParams::init(EncoderConfig { hidden: 6, layers: 2, aggregator: agg }, 3, seed).unwrap();
                let e = gnn_forward(&g, &enc, None).unwrap();
                let pe = gnn_forward(&pg, &enc, None).unwrap();
                assert!(pe.max_abs_diff(&e.select_rows(&perm)) < 1e-9);
            }
        }
    }

    #[test]
    fn digest_tracks_weights() {
        let a = EncoderParams::init(EncoderConfig { hidden: 4, ..Default::default() }, 3, 1).unwrap();
        let b = EncoderParams::init(EncoderConfig { hidden: 4, ..Default::default() }, 3, 1).unwrap();
        let c = EncoderParams::init(EncoderConfig { hidden: 4, ..Default::default() }, 3, 2).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn readout_examples() {
        let same = Tensor2::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(readout_mean(&same, None).unwrap(), vec![1.0, 2.0]);
        let eye = Tensor2::identity(2);
        assert_eq!(readout_mean(&eye, None).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(readout_mean(&eye, Some(&[])), Err(EncoderError::EmptySubset)));
        let mut rng = seeded_rng(1, 1);
        let m = random_tensor(&mut rng, 5, 3, 2.0);
        let r = readout_mean(&m, None).unwrap();
        for c in 0..3 {
            let direct = (0..5).map(|i| m.get(i, c)).sum::<f64>() / 5.0;
            assert!((r[c] - direct).abs() < 1e-15);
        }
        let mut perm = vec![4, 2, 0, 1, 3];
        let shuffled = m.select_rows(&perm);
        let r2 = readout_mean(&shuffled, None).unwrap();
        assert!(r.iter().zip(&r2).all(|(a, b)| (a - b).abs() < 1e-12));
        perm.truncate(2);
        assert_eq!(readout_mean(&m, Some(&perm)).unwrap(), readout_mean(&m.select_rows(&perm), None).unwrap());
    }

    #[test]
    fn corruption_preserves_row_multiset() {
        let g = generate_sbm(&SbmSpec { n: 30, ..SbmSpec::reference() }, 3).unwrap();
        let c = corrupt_graph(&g, 8).unwrap();
        assert_eq!(c.edges(), g.edges());
        let sorted = |t: &Tensor2| {
            let mut rows: Vec<Vec<u64>> = t.iter_rows().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect();
            rows.sort();
            rows
        };
        assert_eq!(sorted(c.features()), sorted(g.features()));
        assert_ne!(c.features(), g.features());
        let one = g.induced(&[0]).unwrap();
        assert!(matches!(corrupt_graph(&one, 0), Err(EncoderError::TooFewNodes(1))));
    }
}
