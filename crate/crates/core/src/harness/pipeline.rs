use std::sync::Arc;

use super::checkpoint::{Checkpoint, CheckpointTrailer};
use super::experiment::tag;
use super::{ExperimentConfig, HarnessError};
use crate::attacks::{
    attack_aia, attack_lia, build_aia_dataset, build_lia_pairs, AttackError, AttackResult, AttackSpec, AttackTask,
};
use crate::defense::DefenseError;
use crate::graphdata::{sample_k_shot, split_target_shadow, Graph, KShot, KSpec, SplitSpec};
use crate::harness::accuracy;
use crate::encoder::EncoderParams;
use crate::numcore::ParamSet;
use crate::pretrain::{pretrain_run, PretrainConfig};
use crate::prompt::{capability_extract, prompt_tune, CapabilityKind, CapabilityMatrix, PromptError, PromptState};

/// The trained target pipeline of one repetition: split, frozen encoder and
/// tuned prompt, ready to release capabilities.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub graph: Arc<Graph>,
    pub sensitive: Arc<Vec<u8>>,
    pub split: SplitSpec,
    pub kshot: KShot,
    pub state: PromptState,
    pub seed: u64,
    pub pretrain_loss: Vec<f64>,
}

/// Graph plus the sensitive bit per node.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Arc<Graph>, Arc<Vec<u8>>), HarnessError> {
    let g = cfg.dataset.materialize(cfg.seed)?;
    let sensitive = match g.explicit_sensitive() {
        Some(s) => s.to_vec(),
        None => g.sensitive_attribute(cfg.sensitive_column)?,
    };
    Ok((Arc::new(g), Arc::new(sensitive)))
}

fn split_for(g: &Graph, cfg: &ExperimentConfig, seed: u64) -> Result<(SplitSpec, KShot), HarnessError> {
    let min_per_category = match cfg.k {
        KSpec::Count(k) => k,
        KSpec::Full => 1,
    };
    let split = split_target_shadow(g, cfg.target_fraction, min_per_category, seed)?;
    let kshot = sample_k_shot(g, &split, cfg.k, seed)?;
    Ok((split, kshot))
}

fn pretrain_config(cfg: &ExperimentConfig, seed: u64) -> PretrainConfig {
    PretrainConfig {
        seed,
        ..cfg.pretrain.clone()
    }
}

/// Checkpoint of the frozen encoder pre-trained for repetition `rep`.
pub fn pretrain_checkpoint(graph: &Graph, cfg: &ExperimentConfig, rep: usize) -> Result<Checkpoint, HarnessError> {
    let pre = pretrain_run(graph, &pretrain_config(cfg, cfg.rep_seed(rep)))?;
    Ok(Checkpoint::from_params(
        [pre.params.params()],
        CheckpointTrailer {
            method: tag(&cfg.pretrain.method),
            config_hash: cfg.hash(),
        },
    ))
}

fn check_hash(ck: &Checkpoint, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    if ck.trailer.config_hash != cfg.hash() {
        return Err(HarnessError::Checkpoint(format!(
            "written for config {}, current config is {}",
            ck.trailer.config_hash,
            cfg.hash()
        )));
    }
    Ok(())
}

/// Frozen encoder restored from a checkpoint written under the same config.
pub fn encoder_from_checkpoint(ck: &Checkpoint, cfg: &ExperimentConfig) -> Result<EncoderParams, HarnessError> {
    check_hash(ck, cfg)?;
    let mut set = ParamSet::new();
    for (name, t) in ck.with_prefix("enc.") {
        set.insert(name, t.clone())?;
    }
    Ok(EncoderParams::from_params(cfg.pretrain.encoder.clone(), &set)?.freeze())
}

impl Pipeline {
    /// Runs split, pre-training and prompt tuning for repetition `rep`.
    pub fn build(
        graph: Arc<Graph>,
        sensitive: Arc<Vec<u8>>,
        cfg: &ExperimentConfig,
        rep: usize,
    ) -> Result<Self, HarnessError> {
        let pre = pretrain_run(&graph, &pretrain_config(cfg, cfg.rep_seed(rep)))?;
        let mut p = Self::tune(graph, sensitive, cfg, rep, &pre.params)?;
        p.pretrain_loss = pre.loss_trace;
        Ok(p)
    }

    /// Prompt tuning on a given frozen encoder.
    pub fn tune(
        graph: Arc<Graph>,
        sensitive: Arc<Vec<u8>>,
        cfg: &ExperimentConfig,
        rep: usize,
        encoder: &EncoderParams,
    ) -> Result<Self, HarnessError> {
        let seed = cfg.rep_seed(rep);
        let (split, kshot) = split_for(&graph, cfg, seed)?;
        let mut state = prompt_tune(&graph, encoder, &kshot, cfg.prompt, &cfg.prompt_config, seed)?;
        state.set_config_hash(cfg.hash());
        Ok(Self {
            graph,
            sensitive,
            split,
            kshot,
            state,
            seed,
            pretrain_loss: Vec::new(),
        })
    }

    /// Rebuilds a tuned pipeline from a full checkpoint without training.
    pub fn restore(
        graph: Arc<Graph>,
        sensitive: Arc<Vec<u8>>,
        cfg: &ExperimentConfig,
        rep: usize,
        ck: &Checkpoint,
    ) -> Result<Self, HarnessError> {
        let encoder = encoder_from_checkpoint(ck, cfg)?;
        let seed = cfg.rep_seed(rep);
        let (split, kshot) = split_for(&graph, cfg, seed)?;
        let mut state = PromptState::init(cfg.prompt, cfg.prompt_config.clone(), &encoder, graph.num_classes(), seed)?;
        let names: Vec<String> = state.params().iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = ck
                .get(&name)
                .ok_or_else(|| HarnessError::Checkpoint(format!("missing tensor {name}")))?;
            state.set_param(&name, t.clone())?;
        }
        state.set_config_hash(cfg.hash());
        Ok(Self {
            graph,
            sensitive,
            split,
            kshot,
            state,
            seed,
            pretrain_loss: Vec::new(),
        })
    }

    /// Encoder and prompt weights with the config hash.
    pub fn checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint {
        Checkpoint::from_params(
            [self.state.encoder().params(), self.state.params()],
            CheckpointTrailer {
                method: format!("{}+{}", tag(&cfg.pretrain.method), tag(&cfg.prompt)),
                config_hash: cfg.hash(),
            },
        )
    }

    pub fn capability(&self, kind: CapabilityKind) -> Result<CapabilityMatrix, PromptError> {
        capability_extract(&self.state, &self.graph, kind)
    }

    /// Target nodes that were not used for tuning.
    pub fn eval_nodes(&self) -> Vec<usize> {
        let mut labeled = vec![false; self.graph.num_nodes()];
        for &v in &self.kshot.labeled {
            labeled[v] = true;
        }
        self.split.target.iter().copied().filter(|&v| !labeled[v]).collect()
    }

    /// Downstream accuracy on held-out target nodes when the pipeline
    /// classifies from the released (possibly perturbed) matrix.
    pub fn utility(&self, released: &CapabilityMatrix) -> Result<f64, DefenseError> {
        let post = match released.kind {
            CapabilityKind::Posterior => released.matrix.clone(),
            CapabilityKind::Embedding => self.state.classify(&released.matrix)?,
            CapabilityKind::Prompt => self.state.classify_with_prompts(&self.graph, &released.matrix)?,
        };
        let nodes = self.eval_nodes();
        let pred: Vec<usize> = nodes.iter().map(|&v| argmax(post.row(v))).collect();
        let truth: Vec<usize> = nodes.iter().map(|&v| self.graph.labels()[v]).collect();
        Ok(accuracy(&pred, &truth)?)
    }

    /// Trains and evaluates one attacker on the released matrix.
    pub fn attack(&self, spec: &AttackSpec, released: &CapabilityMatrix) -> Result<AttackResult, AttackError> {
        match spec.task {
            AttackTask::Aia => {
                let data = build_aia_dataset(released, &self.graph, &self.split, &self.sensitive)?;
                attack_aia(&spec.model(), &data, self.seed)
            }
            AttackTask::Lia => {
                let pairs = build_lia_pairs(&self.graph, released, &self.split, self.seed)?;
                attack_lia(&spec.model(), &pairs, &released.matrix, self.seed)
            }
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

