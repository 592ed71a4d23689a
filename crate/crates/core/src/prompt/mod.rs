//! Prompt mechanisms on a frozen encoder, k-shot prompt tuning, and the
//! three attacker-visible capability matrices.

mod allinone;
mod ops;

pub use allinone::{allinone_insert, PromptedSubgraph, Wiring};
pub use ops::{apply_gpf, apply_gpf_plus, apply_gprompt, cross_entropy, gppt_predict, gpf_plus_prompts};

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{encode, glorot, gnn_forward, EncoderError, EncoderParams, EncoderVars, Propagation};
use crate::graphdata::{Graph, GraphError, KShot};
use crate::numcore::{softmax_in_place, AdamHyper, NumError, ParamSet, Tape, Tensor2, Var};
use crate::seeded_rng;
use allinone::encode_batch;
use ops::{gpf_plus_prompts_var, mul_row};

/// Centers encoded per batch when extracting All-in-One outputs for every node.
const ALLINONE_BATCH: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("invalid prompt config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{capability} capability is not available for {method}")]
    Unsupported { method: PromptKind, capability: CapabilityKind },
    #[error("prompt tuning requires a frozen encoder")]
    EncoderNotFrozen,
    #[error("encoder weights changed during prompt tuning")]
    FrozenViolation,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no labeled nodes to tune on")]
    NoLabels,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// The five prompt designs plus the head-only baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    AllInOne,
    GPrompt,
    Gpf,
    GpfPlus,
    Gppt,
    NoPrompt,
}

impl PromptKind {
    /// Report column order.
    pub const ALL: [PromptKind; 6] = [
        PromptKind::AllInOne,
        PromptKind::GPrompt,
        PromptKind::Gpf,
        PromptKind::GpfPlus,
        PromptKind::Gppt,
        PromptKind::NoPrompt,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PromptKind::AllInOne => "All-in-One",
            PromptKind::GPrompt => "GPrompt",
            PromptKind::Gpf => "GPF",
            PromptKind::GpfPlus => "GPF-plus",
            PromptKind::Gppt => "GPPT",
            PromptKind::NoPrompt => "w/o Prompt",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapabilityKind {
    Posterior,
    Embedding,
    Prompt,
}

impl CapabilityKind {
    pub fn symbol(self) -> &'static str {
        match self {
            CapabilityKind::Posterior => "P*",
            CapabilityKind::Embedding => "E",
            CapabilityKind::Prompt => "P",
        }
    }
}

impl fmt::Display for CapabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Basis tokens for GPF-plus and token nodes for All-in-One.
    pub tokens: usize,
    pub cross_threshold: f64,
    pub inner_threshold: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            tokens: 10,
            cross_threshold: 0.3,
            inner_threshold: 0.5,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.tokens == 0 {
            return Err(PromptError::InvalidConfig("tokens must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(PromptError::InvalidConfig(format!("lr {} must be > 0", self.lr)));
        }
        Ok(())
    }

    fn wiring(&self) -> Wiring {
        Wiring {
            cross_threshold: self.cross_threshold,
            inner_threshold: self.inner_threshold,
        }
    }
}

/// Where a released matrix came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: PromptKind,
    pub seed: u64,
    pub config_hash: String,
    /// Laplace scale applied at release, if any.
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapabilityMatrix {
    pub kind: CapabilityKind,
    pub matrix: Tensor2,
    pub provenance: Provenance,
}

/// Tuned prompt and head parameters bound to a frozen encoder.
#[derive(Clone, Debug)]
pub struct PromptState {
    kind: PromptKind,
    config: PromptConfig,
    params: ParamSet,
    encoder: EncoderParams,
    num_classes: usize,
    seed: u64,
    config_hash: String,
    loss_trace: Vec<f64>,
}

impl PromptState {
    /// Fresh prompt and head parameters. Head and prompt draws use separate
    /// streams, and GPF-plus draws its tokens before its projections, so a
    /// one-token GPF-plus starts from the same vector as GPF.
    pub fn init(
        kind: PromptKind,
        config: PromptConfig,
        encoder: &EncoderParams,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self, PromptError> {
        config.validate()?;
        if !encoder.is_frozen() {
            return Err(PromptError::EncoderNotFrozen);
        }
        let (d, h, k) = (encoder.input_dim(), encoder.hidden(), config.tokens);
        let mut head_rng = seeded_rng(seed, 0x4ead);
        let mut rng = seeded_rng(seed, 0x9a);
        let mut params = ParamSet::new();
        match kind {
            PromptKind::Gpf => {
                params.insert("gpf.p", glorot(&mut rng, 1, d))?;
            }
            PromptKind::GpfPlus => {
                params.insert("gpfplus.tokens", glorot(&mut rng, k, d))?;
                params.insert("gpfplus.proj", glorot(&mut rng, k, d))?;
            }
            PromptKind::GPrompt => {
                params.insert("gprompt.q", Tensor2::ones(1, h))?;
            }
            PromptKind::Gppt => {
                params.insert("gppt.tokens", glorot(&mut rng, num_classes, h))?;
                params.insert("gppt.structure", Tensor2::zeros(1, h))?;
            }
            PromptKind::AllInOne => {
                params.insert("aio.tokens", glorot(&mut rng, k, d))?;
                let inner = (0..k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
                params.insert("aio.inner", Tensor2::from_vec(k, k, inner)?)?;
            }
            PromptKind::NoPrompt => {}
        }
        if kind != PromptKind::Gppt {
            params.insert("head.w", glorot(&mut head_rng, h, num_classes))?;
            params.insert("head.b", Tensor2::zeros(1, num_classes))?;
        }
        Ok(Self {
            kind,
            config,
            params,
            encoder: encoder.clone(),
            num_classes,
            seed,
            config_hash: String::new(),
            loss_trace: Vec::new(),
        })
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    /// Replaces one named prompt or head tensor (same shape).
    pub fn set_param(&mut self, name: &str, value: Tensor2) -> Result<(), PromptError> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| PromptError::Shape(format!("no prompt tensor named {name}")))?;
        Ok(self.params.set_value(id, value)?)
    }

    /// Tag stamped into the provenance of extracted matrices.
    pub fn set_config_hash(&mut self, hash: impl Into<String>) {
        self.config_hash = hash.into();
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            method: self.kind,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            beta: None,
        }
    }

    fn bind(&self, tape: &mut Tape, name: &str) -> Var {
        tape.param(&self.params, self.params.id(name).expect("registered at init"))
    }

    /// Linear head (or GPPT token scoring) applied to representation rows.
    fn head_logits(&self, tape: &mut Tape, e: Var) -> Result<Var, PromptError> {
        match self.kind {
            PromptKind::Gppt => {
                let s = self.bind(tape, "gppt.structure");
                let t = self.bind(tape, "gppt.tokens");
                let shifted = tape.add_row(e, s)?;
                let tt = tape.transpose(t)?;
                Ok(tape.matmul(shifted, tt)?)
            }
            _ => {
                let e = if self.kind == PromptKind::GPrompt {
                    let q = self.bind(tape, "gprompt.q");
                    mul_row(tape, e, q)?
                } else {
                    e
                };
                let w = self.bind(tape, "head.w");
                let b = self.bind(tape, "head.b");
                let z = tape.matmul(e, w)?;
                Ok(tape.add_row(z, b)?)
            }
        }
    }

    /// Prompted input features for the whole graph.
    fn prompted_input(&self, tape: &mut Tape, g: &Graph) -> Result<Var, PromptError> {
        let x = tape.constant(g.features().clone());
        match self.kind {
            PromptKind::Gpf => {
                let p = self.bind(tape, "gpf.p");
                Ok(tape.add_row(x, p)?)
            }
            PromptKind::GpfPlus => {
                let tokens = self.bind(tape, "gpfplus.tokens");
                let proj = self.bind(tape, "gpfplus.proj");
                let prompts = gpf_plus_prompts_var(tape, x, tokens, proj)?;
                Ok(tape.add(x, prompts)?)
            }
            _ => Ok(x),
        }
    }

    fn subgraphs(&self, g: &Graph, centers: &[usize]) -> Result<Vec<PromptedSubgraph>, PromptError> {
        let tokens = self.params.get("aio.tokens").expect("registered at init");
        let inner = self.params.get("aio.inner").expect("registered at init");
        centers
            .iter()
            .map(|&c| allinone_insert(g, tokens, inner, c, self.config.wiring()))
            .collect()
    }

    /// All-in-One representations: mean readouts of the prompted ego subgraphs of `centers`.
    fn pooled_subgraphs(&self, tape: &mut Tape, g: &Graph, frozen: &EncoderVars, centers: &[usize]) -> Result<Var, PromptError> {
        let sgs = self.subgraphs(g, centers)?;
        let tokens = self.bind(tape, "aio.tokens");
        let (pooled, _) = encode_batch(tape, g, &sgs, tokens, frozen, self.encoder.config().aggregator)?;
        Ok(pooled)
    }

    /// Node representation matrix `E` (n x h): the frozen encoder's output on
    /// the prompted input. For All-in-One each row is the mean readout of the
    /// node's prompted ego subgraph, which is what its head classifies.
    pub fn embeddings(&self, g: &Graph) -> Result<Tensor2, PromptError> {
        self.check_graph(g)?;
        match self.kind {
            PromptKind::AllInOne => {
                let all: Vec<usize> = (0..g.num_nodes()).collect();
                let mut out = Tensor2::zeros(g.num_nodes(), self.encoder.hidden());
                for chunk in all.chunks(ALLINONE_BATCH) {
                    let mut tape = Tape::new();
                    let frozen = self.encoder.bind_frozen(&mut tape);
                    let e = self.pooled_subgraphs(&mut tape, g, &frozen, chunk)?;
                    for (i, &v) in chunk.iter().enumerate() {
                        out.row_mut(v).copy_from_slice(tape.value(e).row(i));
                    }
                }
                Ok(out)
            }
            PromptKind::Gpf | PromptKind::GpfPlus => {
                let mut tape = Tape::new();
                let x = self.prompted_input(&mut tape, g)?;
                Ok(gnn_forward(g, &self.encoder, Some(tape.value(x)))?)
            }
            _ => Ok(gnn_forward(g, &self.encoder, None)?),
        }
    }

    /// Per-node GPF-plus prompt rows `p_i` (n x d).
    pub fn prompts(&self, g: &Graph) -> Result<Tensor2, PromptError> {
        if self.kind != PromptKind::GpfPlus {
            return Err(PromptError::Unsupported {
                method: self.kind,
                capability: CapabilityKind::Prompt,
            });
        }
        self.check_graph(g)?;
        gpf_plus_prompts(
            g.features(),
            self.params.get("gpfplus.tokens").unwrap(),
            self.params.get("gpfplus.proj").unwrap(),
        )
    }

    /// Posteriors obtained by feeding representation rows to the head.
    pub fn classify(&self, e: &Tensor2) -> Result<Tensor2, PromptError> {
        if e.cols() != self.encoder.hidden() {
            return Err(PromptError::Shape(format!("{} columns, expected {}", e.cols(), self.encoder.hidden())));
        }
        let mut tape = Tape::new();
        let ev = tape.constant(e.clone());
        let logits = self.head_logits(&mut tape, ev)?;
        let mut out = tape.value(logits).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        Ok(out)
    }

    /// Posteriors when the GPF-plus prompt rows are replaced by `prompts`.
    pub fn classify_with_prompts(&self, g: &Graph, prompts: &Tensor2) -> Result<Tensor2, PromptError> {
        if self.kind != PromptKind::GpfPlus {
            return Err(PromptError::Unsupported {
                method: self.kind,
                capability: CapabilityKind::Prompt,
            });
        }
        let x = g.features().zip_map(prompts, |a, b| a + b)?;
        self.classify(&gnn_forward(g, &self.encoder, Some(&x))?)
    }

    fn check_graph(&self, g: &Graph) -> Result<(), PromptError> {
        if g.feature_dim() != self.encoder.input_dim() {
            return Err(PromptError::Shape(format!(
                "graph has {} feature columns, encoder expects {}",
                g.feature_dim(),
                self.encoder.input_dim()
            )));
        }
        Ok(())
    }
}

/// Trains prompt and head parameters by cross-entropy on the k-shot nodes;
/// the encoder is only ever read.
pub fn prompt_tune(
    g: &Graph,
    encoder: &EncoderParams,
    kshot: &KShot,
    kind: PromptKind,
    config: &PromptConfig,
    seed: u64,
) -> Result<PromptState, PromptError> {
    let before = encoder.digest();
    let mut state = PromptState::init(kind, config.clone(), encoder, g.num_classes(), seed)?;
    state.check_graph(g)?;
    if kshot.labeled.is_empty() {
        return Err(PromptError::NoLabels);
    }
    let rows = kshot.labeled.clone();
    let labels: Vec<usize> = rows.iter().map(|&v| g.labels()[v]).collect();
    let prop = Propagation::for_graph(g, encoder.config().aggregator);
    let frozen_e = match kind {
        PromptKind::NoPrompt | PromptKind::GPrompt | PromptKind::Gppt => Some(gnn_forward(g, encoder, None)?.select_rows(&rows)),
        _ => None,
    };

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let logits = (|| {
            let e = match &frozen_e {
                Some(e) => tape.constant(e.clone()),
                None => {
                    let frozen = encoder.bind_frozen(&mut tape);
                    if kind == PromptKind::AllInOne {
                        state.pooled_subgraphs(&mut tape, g, &frozen, &rows)?
                    } else {
                        let x = state.prompted_input(&mut tape, g)?;
                        let e = encode(&mut tape, &prop, x, &frozen)?;
                        tape.select_rows(e, Arc::new(rows.clone()))?
                    }
                }
            };
            let logits = state.head_logits(&mut tape, e)?;
            cross_entropy(&mut tape, logits, &labels)
        })();
        let loss = match logits {
            Err(PromptError::Num(NumError::NonFinite { .. }))
            | Err(PromptError::Encoder(EncoderError::Num(NumError::NonFinite { .. }))) => {
                return Err(PromptError::NonFiniteLoss { epoch })
            }
            other => other?,
        };
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(PromptError::NonFiniteLoss { epoch });
        }
        state.loss_trace.push(value);
        tape.backward(loss, &mut state.params)?;
        state.params.optimize_step(config.lr, AdamHyper::default());
    }

    if encoder.digest() != before || state.encoder.digest() != before {
        return Err(PromptError::FrozenViolation);
    }
    Ok(state)
}

/// Row-stochastic node posteriors (n x C).
pub fn posteriors(state: &PromptState, g: &Graph) -> Result<CapabilityMatrix, PromptError> {
    let matrix = state.classify(&state.embeddings(g)?)?;
    Ok(CapabilityMatrix {
        kind: CapabilityKind::Posterior,
        matrix,
        provenance: state.provenance(),
    })
}

pub fn capability_extract(state: &PromptState, g: &Graph, kind: CapabilityKind) -> Result<CapabilityMatrix, PromptError> {
    let matrix = match kind {
        CapabilityKind::Posterior => return posteriors(state, g),
        CapabilityKind::Embedding => state.embeddings(g)?,
        CapabilityKind::Prompt => state.prompts(g)?,
    };
    Ok(CapabilityMatrix {
        kind,
        matrix,
        provenance: state.provenance(),
    })
}

#[cfg(test)]
mod tests;
