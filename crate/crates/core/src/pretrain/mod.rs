//! Self-supervised pre-training of the encoder with one of five objectives.

mod augment;
mod losses;

pub use augment::{augment, AugmentSpec, AugmentedGraph};
pub use losses::{dgi_loss, edgepred_loss, graphcl_loss, graphmae_loss, sce_loss, MaeVars};

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{
    corrupt_graph, encode, glorot, layer_names, EncoderConfig, EncoderError, EncoderParams,
    EncoderVars, Propagation,
};
use crate::graphdata::{Graph, GraphError};
use crate::numcore::{AdamHyper, NumError, ParamSet, Tape, Tensor2, Var};
use crate::seeded_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PretrainError {
    #[error("invalid pre-training config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("edge prediction needs at least one positive pair")]
    EmptyPositives,
    #[error("mask set is empty")]
    EmptyMask,
    #[error("contrastive loss needs at least 2 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("augmentation dropped every node")]
    AllNodesDropped,
    #[error("graph too dense to sample {0} negative pairs")]
    NegativeSampling(usize),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl PretrainError {
    fn is_non_finite(&self) -> bool {
        matches!(
            self,
            PretrainError::Num(NumError::NonFinite { .. }) | PretrainError::Encoder(EncoderError::Num(NumError::NonFinite { .. }))
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainMethod {
    Dgi,
    EdgePred,
    GraphMae,
    GraphCl,
    SimGrace,
}

impl PretrainMethod {
    pub const ALL: [PretrainMethod; 5] = [
        PretrainMethod::Dgi,
        PretrainMethod::EdgePred,
        PretrainMethod::GraphMae,
        PretrainMethod::GraphCl,
        PretrainMethod::SimGrace,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PretrainMethod::Dgi => "DGI",
            PretrainMethod::EdgePred => "EdgePred",
            PretrainMethod::GraphMae => "GraphMAE",
            PretrainMethod::GraphCl => "GraphCL",
            PretrainMethod::SimGrace => "SimGRACE",
        }
    }
}

impl fmt::Display for PretrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub method: PretrainMethod,
    pub encoder: EncoderConfig,
    pub epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub sce_gamma: f64,
    pub mask_rate: f64,
    pub simgrace_eta: f64,
    pub neg_multiplier: usize,
    pub augment: AugmentSpec,
    /// Anchors drawn per epoch for the contrastive objectives; the NT-Xent
    /// similarity matrix is quadratic in this.
    pub contrast_anchors: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            method: PretrainMethod::GraphCl,
            encoder: EncoderConfig::default(),
            epochs: 100,
            lr: 1e-3,
            temperature: 0.5,
            sce_gamma: 2.0,
            mask_rate: 0.5,
            simgrace_eta: 0.1,
            neg_multiplier: 1,
            augment: AugmentSpec::default(),
            contrast_anchors: 256,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        let bad = |m: String| Err(PretrainError::InvalidConfig(m));
        self.encoder.validate()?;
        self.augment.validate()?;
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if !(self.sce_gamma >= 1.0) {
            return bad(format!("sce_gamma {} must be >= 1", self.sce_gamma));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask_rate {} must lie in (0, 1)", self.mask_rate));
        }
        if !(self.simgrace_eta >= 0.0) {
            return bad(format!("simgrace_eta {} must be >= 0", self.simgrace_eta));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr {} must be > 0", self.lr));
        }
        if self.contrast_anchors < 2 {
            return bad("contrast_anchors must be >= 2".into());
        }
        if self.method == PretrainMethod::GraphCl && self.augment.is_identity() {
            return bad("GraphCL needs at least one non-zero augmentation rate".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    /// Frozen encoder weights.
    pub params: EncoderParams,
    /// Loss before each epoch's update.
    pub loss_trace: Vec<f64>,
}

/// Gaussian noise with standard deviation `eta * std(W)` for every encoder tensor.
fn simgrace_noise(params: &ParamSet, names: &[String], eta: f64, seed: u64) -> Vec<Tensor2> {
    let mut rng = seeded_rng(seed, 0x51);
    names
        .iter()
        .map(|name| {
            let w = params.get(name).expect("encoder tensor present");
            let n = w.len() as f64;
            let mean = w.sum() / n;
            let std = (w.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let data = (0..w.len()).map(|_| eta * std * rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor2::from_vec(w.rows(), w.cols(), data).expect("same shape")
        })
        .collect()
}

fn encoder_names(config: &EncoderConfig) -> Vec<String> {
    (0..config.layers).flat_map(layer_names).collect()
}

/// A perturbed copy of `params` for the second SimGRACE view.
pub fn simgrace_views(params: &EncoderParams, eta: f64, seed: u64) -> Result<EncoderParams, PretrainError> {
    if !(eta >= 0.0) {
        return Err(PretrainError::InvalidConfig(format!("eta {eta} must be >= 0")));
    }
    let names = encoder_names(params.config());
    let noise = simgrace_noise(params.params(), &names, eta, seed);
    let mut set = ParamSet::new();
    for (name, dn) in names.iter().zip(&noise) {
        let mut w = params.params().get(name).unwrap().clone();
        w.add_scaled(dn, 1.0);
        set.insert(name.clone(), w)?;
    }
    Ok(EncoderParams::from_params(params.config().clone(), &set)?)
}

/// `round(rate * n)` distinct nodes drawn uniformly, sorted.
pub fn mask_nodes(n: usize, rate: f64, seed: u64) -> Result<Vec<usize>, PretrainError> {
    let k = ((rate * n as f64).round() as usize).min(n);
    if k == 0 {
        return Err(PretrainError::EmptyMask);
    }
    let mut picked = sample(&mut seeded_rng(seed, 0x3a), n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// `count` uniformly drawn unordered node pairs that are not edges of `g`.
pub fn sample_non_edges(g: &Graph, count: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>, PretrainError> {
    let n = g.num_nodes();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if n < 2 || attempts > 100 * count + 1000 {
            return Err(PretrainError::NegativeSampling(count));
        }
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v && !g.has_edge(u, v) {
            out.push((u.min(v), u.max(v)));
        }
    }
    Ok(out)
}

/// Up to `cap` node pairs `(row in view 1, row in view 2)` for nodes kept by both views.
fn shared_anchors(a: &AugmentedGraph, b: &AugmentedGraph, n: usize, cap: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut pos_b = vec![usize::MAX; n];
    for (i, &v) in b.kept.iter().enumerate() {
        pos_b[v] = i;
    }
    let shared: Vec<(usize, usize)> = a
        .kept
        .iter()
        .enumerate()
        .filter(|&(_, &v)| pos_b[v] != usize::MAX)
        .map(|(i, &v)| (i, pos_b[v]))
        .collect();
    let chosen = if shared.len() > cap {
        let mut idx = sample(rng, shared.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| shared[k]).collect()
    } else {
        shared
    };
    chosen.into_iter().unzip()
}

fn anchor_sample(n: usize, cap: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

fn bind_layer(tape: &mut Tape, params: &ParamSet, prefix: &str) -> Result<EncoderVars, PretrainError> {
    let mut get = |suffix: &str| -> Result<Var, PretrainError> {
        let name = format!("{prefix}.l0.{suffix}");
        let id = params
            .id(&name)
            .ok_or_else(|| PretrainError::Shape(format!("missing tensor {name}")))?;
        Ok(tape.param(params, id))
    };
    Ok(EncoderVars {
        layers: vec![(get("w_self")?, get("w_neigh")?, get("bias")?)],
    })
}

struct Trainer<'a> {
    g: &'a Graph,
    cfg: &'a PretrainConfig,
    prop: Propagation,
    names: Vec<String>,
}

impl Trainer<'_> {
    fn epoch_loss(&self, tape: &mut Tape, set: &ParamSet, seed: u64) -> Result<Var, PretrainError> {
        let cfg = self.cfg;
        let mut rng = seeded_rng(seed, 0xe9);
        let enc = EncoderParams::bind_trainable(&cfg.encoder, tape, set)?;
        match cfg.method {
            PretrainMethod::Dgi => {
                let corrupted = corrupt_graph(self.g, seed)?;
                let x = tape.constant(self.g.features().clone());
                let xc = tape.constant(corrupted.features().clone());
                let e = encode(tape, &self.prop, x, &enc)?;
                let ec = encode(tape, &self.prop, xc, &enc)?;
                let mean = tape.mean_rows(e)?;
                let summary = tape.sigmoid(mean)?;
                let disc = tape.param(set, set.id("dgi.disc").expect("discriminator registered"));
                dgi_loss(tape, e, ec, summary, disc)
            }
            PretrainMethod::EdgePred => {
                let pos = self.g.edges();
                let neg = sample_non_edges(self.g, cfg.neg_multiplier * pos.len(), &mut rng)?;
                let x = tape.constant(self.g.features().clone());
                let e = encode(tape, &self.prop, x, &enc)?;
                edgepred_loss(tape, e, pos, &neg)
            }
            PretrainMethod::GraphMae => {
                let masked = mask_nodes(self.g.num_nodes(), cfg.mask_rate, seed)?;
                let mae = MaeVars {
                    mask_token: tape.param(set, set.id("mae.mask").expect("registered")),
                    dmask_token: tape.param(set, set.id("mae.dmask").expect("registered")),
                    decoder: bind_layer(tape, set, "dec")?,
                };
                graphmae_loss(tape, &self.prop, self.g.features(), &enc, &mae, Arc::new(masked), cfg.sce_gamma)
            }
            PretrainMethod::GraphCl => {
                let v1 = augment(self.g, &cfg.augment, rng.random())?;
                let v2 = augment(self.g, &cfg.augment, rng.random())?;
                let (r1, r2) = shared_anchors(&v1, &v2, self.g.num_nodes(), cfg.contrast_anchors, &mut rng);
                let mut views = Vec::with_capacity(2);
                for (view, rows) in [(&v1, r1), (&v2, r2)] {
                    let prop = Propagation::for_graph(&view.graph, cfg.encoder.aggregator);
                    let x = tape.constant(view.graph.features().clone());
                    let e = encode(tape, &prop, x, &enc)?;
                    views.push(tape.select_rows(e, Arc::new(rows))?);
                }
                graphcl_loss(tape, views[0], views[1], cfg.temperature)
            }
            PretrainMethod::SimGrace => {
                let noise = simgrace_noise(set, &self.names, cfg.simgrace_eta, rng.random());
                let mut noisy = Vec::with_capacity(enc.layers.len());
                let mut k = 0;
                for &(ws, wn, b) in &enc.layers {
                    let mut shifted = [ws, wn, b];
                    for s in &mut shifted {
                        let dn = tape.constant(noise[k].clone());
                        *s = tape.add(*s, dn)?;
                        k += 1;
                    }
                    noisy.push((shifted[0], shifted[1], shifted[2]));
                }
                let noisy = EncoderVars { layers: noisy };
                let x = tape.constant(self.g.features().clone());
                let anchors = Arc::new(anchor_sample(self.g.num_nodes(), cfg.contrast_anchors, &mut rng));
                let e1 = encode(tape, &self.prop, x, &enc)?;
                let e2 = encode(tape, &self.prop, x, &noisy)?;
                let z1 = tape.select_rows(e1, anchors.clone())?;
                let z2 = tape.select_rows(e2, anchors)?;
                graphcl_loss(tape, z1, z2, cfg.temperature)
            }
        }
    }
}

/// Full-batch Adam training of a fresh encoder on `g`; returns frozen weights.
pub fn pretrain_run(g: &Graph, cfg: &PretrainConfig) -> Result<PretrainOutput, PretrainError> {
    cfg.validate()?;
    let mut encoder = EncoderParams::init(cfg.encoder.clone(), g.feature_dim(), cfg.seed)?;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(PretrainOutput {
            params: encoder.freeze(),
            loss_trace,
        });
    }

    let mut set = ParamSet::new();
    encoder.export_into(&mut set)?;
    let mut init_rng = seeded_rng(cfg.seed, 0x7e);
    let (d, h) = (g.feature_dim(), cfg.encoder.hidden);
    match cfg.method {
        PretrainMethod::Dgi => {
            set.insert("dgi.disc", glorot(&mut init_rng, h, h))?;
        }
        PretrainMethod::GraphMae => {
            set.insert("mae.mask", Tensor2::zeros(1, d))?;
            set.insert("mae.dmask", Tensor2::zeros(1, h))?;
            set.insert("dec.l0.w_self", glorot(&mut init_rng, h, d))?;
            set.insert("dec.l0.w_neigh", glorot(&mut init_rng, h, d))?;
            set.insert("dec.l0.bias", Tensor2::zeros(1, d))?;
        }
        _ => {}
    }

    let trainer = Trainer {
        g,
        cfg,
        prop: Propagation::for_graph(g, cfg.encoder.aggregator),
        names: encoder_names(&cfg.encoder),
    };
    let mut rng = seeded_rng(cfg.seed, 0x97);
    for epoch in 0..cfg.epochs {
        let seed: u64 = rng.random();
        let mut tape = Tape::new();
        let loss = trainer.epoch_loss(&mut tape, &set, seed).map_err(|e| {
            if e.is_non_finite() {
                PretrainError::NonFiniteLoss { epoch }
            } else {
                e
            }
        })?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(PretrainError::NonFiniteLoss { epoch });
        }
        loss_trace.push(value);
        tape.backward(loss, &mut set)?;
        set.optimize_step(cfg.lr, AdamHyper::default());
    }
    encoder.load_from(&set)?;
    Ok(PretrainOutput {
        params: encoder.freeze(),
        loss_trace,
    })
}

#[cfg(test)]
mod tests;
