use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::pipeline::{load_dataset, Pipeline};
use super::{ci95, ExperimentConfig, HarnessError};
use crate::attacks::{AttackTask, AttackerKind};
use crate::defense::{beta_sweep, SweepOutput};
use crate::graphdata::{Graph, KSpec};
use crate::pretrain::PretrainMethod;
use crate::prompt::{CapabilityKind, PromptKind};

/// Aggregate over repetitions for one (capability, attack, β) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub pretrain: PretrainMethod,
    pub prompt: PromptKind,
    pub k: KSpec,
    pub capability: CapabilityKind,
    pub task: AttackTask,
    pub attacker: AttackerKind,
    pub beta: Option<f64>,
    pub repetitions: usize,
    pub auc_mean: f64,
    pub auc_ci95: f64,
    pub acc_mean: f64,
    pub acc_ci95: f64,
    /// Downstream accuracy with the released matrix at this β.
    pub utility_mean: f64,
    pub utility_ci95: f64,
    pub auc_raw: Vec<f64>,
    pub acc_raw: Vec<f64>,
    pub utility_raw: Vec<f64>,
    /// Base seed; repetition `r` used `seed + r`.
    pub seed: u64,
    pub config_hash: String,
    /// Kept out of results.csv so reruns stay byte-identical.
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<RepFailure>,
    /// Encoder and prompt weights per successful repetition.
    pub checkpoints: Vec<(usize, Checkpoint)>,
    pub wall_time_secs: f64,
}

pub(crate) fn tag<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("expected a unit variant, got {other:?}"),
    }
}

fn run_repetition(
    g: &Arc<Graph>,
    sensitive: &Arc<Vec<u8>>,
    cfg: &ExperimentConfig,
    rep: usize,
) -> Result<(SweepOutput, Checkpoint), HarnessError> {
    let p = Pipeline::build(g.clone(), sensitive.clone(), cfg, rep)?;
    let betas = cfg.betas.clone().unwrap_or_else(|| vec![0.0]);
    let sweep = beta_sweep(&p, &cfg.capabilities, &cfg.attacks, &betas)?;
    Ok((sweep, p.checkpoint(cfg)))
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    match values {
        [v] => (*v, 0.0),
        _ => ci95(values).expect("at least two finite values"),
    }
}

/// Runs every repetition (in parallel on the current rayon pool) and
/// aggregates per cell. Failed repetitions are reported, not fatal, unless
/// all of them fail.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let hash = cfg.hash();
    let (g, sensitive) = load_dataset(cfg)?;
    let outcomes: Vec<_> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(&g, &sensitive, cfg, rep))
        .collect();

    let mut failures = Vec::new();
    let mut sweeps = Vec::new();
    let mut checkpoints = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((sweep, ck)) => {
                sweeps.push(sweep);
                checkpoints.push((rep, ck));
            }
            Err(e) => failures.push(RepFailure {
                rep,
                seed: cfg.rep_seed(rep),
                error: e.to_string(),
            }),
        }
    }
    if sweeps.is_empty() {
        return Err(HarnessError::AllRepetitionsFailed(failures));
    }
    let wall_time_secs = start.elapsed().as_secs_f64();

    let first = &sweeps[0];
    let mut records = Vec::with_capacity(first.attacks.len());
    for (i, point) in first.attacks.iter().enumerate() {
        let r = &point.result;
        let utility_index = first
            .utility
            .iter()
            .position(|u| u.beta == point.beta && u.capability == r.capability)
            .expect("one utility point per (beta, capability)");
        let auc_raw: Vec<f64> = sweeps.iter().map(|s| s.attacks[i].result.auc).collect();
        let acc_raw: Vec<f64> = sweeps.iter().map(|s| s.attacks[i].result.acc).collect();
        let utility_raw: Vec<f64> = sweeps.iter().map(|s| s.utility[utility_index].accuracy).collect();
        let (auc_mean, auc_ci95) = mean_ci(&auc_raw);
        let (acc_mean, acc_ci95) = mean_ci(&acc_raw);
        let (utility_mean, utility_ci95) = mean_ci(&utility_raw);
        records.push(ExperimentRecord {
            dataset: cfg.dataset_name(),
            pretrain: cfg.pretrain.method,
            prompt: cfg.prompt,
            k: cfg.k,
            capability: r.capability,
            task: r.task,
            attacker: r.attacker,
            beta: cfg.betas.as_ref().map(|_| point.beta),
            repetitions: sweeps.len(),
            auc_mean,
            auc_ci95,
            acc_mean,
            acc_ci95,
            utility_mean,
            utility_ci95,
            auc_raw,
            acc_raw,
            utility_raw,
            seed: cfg.seed,
            config_hash: hash.clone(),
            wall_time_secs,
        });
    }
    Ok(ExperimentRun {
        config: cfg.clone(),
        config_hash: hash,
        records,
        failures,
        checkpoints,
        wall_time_secs,
    })
}

/// One results.csv line; raw repetition values are `;`-joined.
#[derive(Serialize, Deserialize)]
struct CsvRow {
    dataset: String,
    pretrain: PretrainMethod,
    prompt: PromptKind,
    k: KSpec,
    capability: CapabilityKind,
    task: AttackTask,
    attacker: AttackerKind,
    beta: Option<f64>,
    repetitions: usize,
    auc_mean: f64,
    auc_ci95: f64,
    acc_mean: f64,
    acc_ci95: f64,
    utility_mean: f64,
    utility_ci95: f64,
    auc_raw: String,
    acc_raw: String,
    utility_raw: String,
    seed: u64,
    config_hash: String,
}

/// Column order of results.csv.
pub const RESULTS_COLUMNS: [&str; 20] = [
    "dataset",
    "pretrain",
    "prompt",
    "k",
    "capability",
    "task",
    "attacker",
    "beta",
    "repetitions",
    "auc_mean",
    "auc_ci95",
    "acc_mean",
    "acc_ci95",
    "utility_mean",
    "utility_ci95",
    "auc_raw",
    "acc_raw",
    "utility_raw",
    "seed",
    "config_hash",
];

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn split_values(s: &str) -> Result<Vec<f64>, HarnessError> {
    s.split(';')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| HarnessError::Results(format!("bad value {t:?}"))))
        .collect()
}

impl From<&ExperimentRecord> for CsvRow {
    fn from(r: &ExperimentRecord) -> Self {
        CsvRow {
            dataset: r.dataset.clone(),
            pretrain: r.pretrain,
            prompt: r.prompt,
            k: r.k,
            capability: r.capability,
            task: r.task,
            attacker: r.attacker,
            beta: r.beta,
            repetitions: r.repetitions,
            auc_mean: r.auc_mean,
            auc_ci95: r.auc_ci95,
            acc_mean: r.acc_mean,
            acc_ci95: r.acc_ci95,
            utility_mean: r.utility_mean,
            utility_ci95: r.utility_ci95,
            auc_raw: join(&r.auc_raw),
            acc_raw: join(&r.acc_raw),
            utility_raw: join(&r.utility_raw),
            seed: r.seed,
            config_hash: r.config_hash.clone(),
        }
    }
}

/// Appends records to `path`, writing the header only for a new file.
pub fn append_results(path: impl AsRef<Path>, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in records {
        w.serialize(CsvRow::from(r)).map_err(|e| HarnessError::Results(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads results.csv back; wall times are not stored and come back as 0.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Results(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| HarnessError::Results(e.to_string()))?;
        out.push(ExperimentRecord {
            dataset: row.dataset,
            pretrain: row.pretrain,
            prompt: row.prompt,
            k: row.k,
            capability: row.capability,
            task: row.task,
            attacker: row.attacker,
            beta: row.beta,
            repetitions: row.repetitions,
            auc_mean: row.auc_mean,
            auc_ci95: row.auc_ci95,
            acc_mean: row.acc_mean,
            acc_ci95: row.acc_ci95,
            utility_mean: row.utility_mean,
            utility_ci95: row.utility_ci95,
            auc_raw: split_values(&row.auc_raw)?,
            acc_raw: split_values(&row.acc_raw)?,
            utility_raw: split_values(&row.utility_raw)?,
            seed: row.seed,
            config_hash: row.config_hash,
            wall_time_secs: 0.0,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    records: usize,
    successful_repetitions: usize,
    failures: &'a [RepFailure],
    checkpoints: Vec<String>,
    wall_time_secs: f64,
}

/// Paths written by [`write_run`].
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub results: PathBuf,
    pub manifest: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Appends to `dir/results.csv`, writes `dir/manifest.json` and one
/// checkpoint per repetition under `dir/checkpoints/`.
pub fn write_run(run: &ExperimentRun, dir: impl AsRef<Path>) -> Result<RunFiles, HarnessError> {
    let dir = dir.as_ref();
    let ck_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| HarnessError::io(&ck_dir, e))?;
    let results = dir.join("results.csv");
    append_results(&results, &run.records)?;

    let mut checkpoints = Vec::new();
    for (rep, ck) in &run.checkpoints {
        let path = ck_dir.join(format!("{}-rep{rep:03}.ckpt", &run.config_hash[..12]));
        ck.save(&path)?;
        checkpoints.push(path);
    }
    let manifest = dir.join("manifest.json");
    let body = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: &run.config,
        config_hash: &run.config_hash,
        records: run.records.len(),
        successful_repetitions: run.checkpoints.len(),
        failures: &run.failures,
        checkpoints: checkpoints
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect(),
        wall_time_secs: run.wall_time_secs,
    };
    let text = serde_json::to_string_pretty(&body).expect("manifest serializes");
    std::fs::write(&manifest, text).map_err(|e| HarnessError::io(&manifest, e))?;
    Ok(RunFiles {
        results,
        manifest,
        checkpoints,
    })
}

/// Groups records by a key, preserving first-seen order within each group.
pub(crate) fn group_by<K: Ord, F: Fn(&ExperimentRecord) -> K>(
    records: &[ExperimentRecord],
    key: F,
) -> BTreeMap<K, Vec<&ExperimentRecord>> {
    let mut out: BTreeMap<K, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        out.entry(key(r)).or_default().push(r);
    }
    out
}
