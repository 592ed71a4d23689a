use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::attacks::{AttackSpec, AttackTask, AttackerKind};
use crate::graphdata::{generate_sbm, load_graph, Graph, KSpec, SbmSpec};
use crate::pretrain::PretrainConfig;
use crate::prompt::{CapabilityKind, PromptConfig, PromptKind};

/// Where the graph comes from: a bundle directory or a generated SBM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRef {
    Bundle(PathBuf),
    Sbm(SbmSpec),
}

impl Default for DatasetRef {
    fn default() -> Self {
        DatasetRef::Sbm(SbmSpec::reference())
    }
}

impl DatasetRef {
    /// Loads the bundle, or generates the SBM with `seed`.
    pub fn materialize(&self, seed: u64) -> Result<Graph, HarnessError> {
        Ok(match self {
            DatasetRef::Bundle(dir) => load_graph(dir)?,
            DatasetRef::Sbm(spec) => generate_sbm(spec, seed)?,
        })
    }
}

/// Everything needed to rerun one experiment. Missing JSON fields take
/// their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    /// The `seed` field inside is ignored; each repetition sets its own.
    pub pretrain: PretrainConfig,
    pub prompt: PromptKind,
    pub prompt_config: PromptConfig,
    pub k: KSpec,
    pub capabilities: Vec<CapabilityKind>,
    pub attacks: Vec<AttackSpec>,
    /// Noise scales for the defense sweep; `None` releases clean matrices.
    pub betas: Option<Vec<f64>>,
    pub repetitions: usize,
    /// Repetition `r` runs with seed `seed + r`.
    pub seed: u64,
    pub target_fraction: f64,
    /// Feature column binarized as the sensitive attribute when the graph
    /// carries none.
    pub sensitive_column: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetRef::default(),
            pretrain: PretrainConfig::default(),
            prompt: PromptKind::Gpf,
            prompt_config: PromptConfig::default(),
            k: KSpec::Count(5),
            capabilities: vec![CapabilityKind::Posterior, CapabilityKind::Embedding],
            attacks: vec![
                AttackSpec::new(AttackTask::Aia, AttackerKind::Mlp),
                AttackSpec::new(AttackTask::Lia, AttackerKind::Mlp),
            ],
            betas: None,
            repetitions: 10,
            seed: 0,
            target_fraction: 0.2,
            sensitive_column: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| HarnessError::io(path.as_ref(), e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.capabilities.is_empty() || self.attacks.is_empty() {
            return bad("need at least one capability and one attack");
        }
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return bad("target_fraction must lie in (0, 1)");
        }
        if let Some(betas) = &self.betas {
            if betas.is_empty() || betas.iter().any(|b| !b.is_finite() || *b < 0.0) {
                return bad("betas must be a non-empty list of finite values >= 0");
            }
        }
        if self.capabilities.contains(&CapabilityKind::Prompt) && self.prompt != PromptKind::GpfPlus {
            return bad("the prompt capability is only released by gpfplus");
        }
        if let DatasetRef::Sbm(spec) = &self.dataset {
            spec.validate()?;
        }
        self.pretrain
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.prompt_config
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hex SHA-256 of the config serialized as JSON with sorted keys.
    pub fn hash(&self) -> String {
        // Value maps are BTreeMaps, so this sorts keys at every level
        let canonical = serde_json::to_value(self).expect("config serializes");
        hex(&Sha256::digest(canonical.to_string().as_bytes()))
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            DatasetRef::Bundle(dir) => dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string()),
            DatasetRef::Sbm(spec) => format!("sbm-n{}-c{}", spec.n, spec.num_classes),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
