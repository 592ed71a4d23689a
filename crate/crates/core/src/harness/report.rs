use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use super::experiment::{group_by, tag, ExperimentRecord};
use super::pipeline::Pipeline;
use super::HarnessError;
use crate::attacks::{build_lia_pairs, AttackTask, AttackerKind, AttackerModelSpec, Mlp};
use crate::graphdata::{class_connectivity, edge_homophily, Graph};
use crate::numcore::Tensor2;
use crate::prompt::{CapabilityKind, PromptKind};
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReportLayout {
    AiaTable,
    LiaTable,
    BetaCurves,
    Connectivity,
    Projection2d,
}

impl ReportLayout {
    pub const ALL: [ReportLayout; 5] = [
        ReportLayout::AiaTable,
        ReportLayout::LiaTable,
        ReportLayout::BetaCurves,
        ReportLayout::Connectivity,
        ReportLayout::Projection2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportLayout::AiaTable => "aia-table",
            ReportLayout::LiaTable => "lia-table",
            ReportLayout::BetaCurves => "beta-curves",
            ReportLayout::Connectivity => "connectivity",
            ReportLayout::Projection2d => "projection-2d",
        }
    }
}

impl FromStr for ReportLayout {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown report layout {s:?}")))
    }
}

/// Pair points in the plane spanned by the top two principal components.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub capability: CapabilityKind,
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<u8>,
    pub coords: Vec<[f64; 2]>,
    /// Variance captured by each component.
    pub variance: [f64; 2],
    pub seed: u64,
    pub config_hash: String,
}

/// Inputs the graph-level layouts need beyond the records.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReportContext<'a> {
    pub graph: Option<&'a Graph>,
    pub projection: Option<&'a Projection>,
}

const CI_FOOTER: &str = "Cells are mean ± 95% half-width over repetitions in percent; the half-width is the normal approximation 1.96·s/√n with sample standard deviation s.";

/// `"99.58±0.14"` for mean 0.9958 and half-width 0.0014.
pub fn percent_cell(mean: f64, halfwidth: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * halfwidth)
}

/// Inverse of [`percent_cell`], back on the [0, 1] scale.
pub fn parse_percent_cell(cell: &str) -> Option<(f64, f64)> {
    let (m, h) = cell.split_once('±')?;
    Some((m.trim().parse::<f64>().ok()? / 100.0, h.trim().parse::<f64>().ok()? / 100.0))
}

fn write_file(path: &Path, text: &str) -> Result<PathBuf, HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Writes `layout` under `dir` and returns the created files.
pub fn emit_report(
    records: &[ExperimentRecord],
    layout: ReportLayout,
    ctx: &ReportContext<'_>,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    match layout {
        ReportLayout::AiaTable => attack_table(records, AttackTask::Aia, dir, layout.name()),
        ReportLayout::LiaTable => attack_table(records, AttackTask::Lia, dir, layout.name()),
        ReportLayout::BetaCurves => beta_curves(records, dir),
        ReportLayout::Connectivity => {
            let g = ctx
                .graph
                .ok_or_else(|| HarnessError::Config("connectivity report needs the graph".into()))?;
            connectivity(records, g, dir)
        }
        ReportLayout::Projection2d => {
            let p = ctx
                .projection
                .ok_or_else(|| HarnessError::Config("projection report needs a computed projection".into()))?;
            let mut out = String::from("u,v,label,pc1,pc2,seed,config_hash\n");
            for (((u, v), l), c) in p.pairs.iter().zip(&p.labels).zip(&p.coords) {
                writeln!(out, "{u},{v},{l},{},{},{},{}", c[0], c[1], p.seed, p.config_hash).unwrap();
            }
            Ok(vec![write_file(&dir.join("projection-2d.csv"), &out)?])
        }
    }
}

fn provenance(rs: &[&ExperimentRecord]) -> String {
    let mut seen: Vec<String> = rs.iter().map(|r| format!("{}/{}", r.seed, r.config_hash)).collect();
    seen.sort();
    seen.dedup();
    seen.join(";")
}

fn attack_table(records: &[ExperimentRecord], task: AttackTask, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let rows = group_by(records, |r| (r.dataset.clone(), r.capability, r.attacker));
    let mut md = format!("| Dataset | Capability | Attacker | {} |\n", PromptKind::ALL.map(PromptKind::label).join(" | "));
    md.push_str(&format!("|{}\n", "---|".repeat(3 + PromptKind::ALL.len())));
    let mut header: Vec<String> = ["dataset", "capability", "attacker"].map(String::from).to_vec();
    header.extend(PromptKind::ALL.map(|k| k.label().to_string()));
    header.push("provenance".into());
    let mut csv = csv_line(&header);
    let mut reps = Vec::new();
    let mut any = false;
    for ((dataset, capability, attacker), rs) in rows {
        // undefended cells only
        let rs: Vec<&ExperimentRecord> = rs
            .into_iter()
            .filter(|r| r.task == task && r.beta.is_none_or(|b| b == 0.0))
            .collect();
        if rs.is_empty() {
            continue;
        }
        any = true;
        let cells: Vec<String> = PromptKind::ALL
            .iter()
            .map(|&kind| {
                rs.iter()
                    .find(|r| r.prompt == kind)
                    .map(|r| {
                        reps.push(r.repetitions);
                        percent_cell(r.auc_mean, r.auc_ci95)
                    })
                    .unwrap_or_else(|| "-".into())
            })
            .collect();
        writeln!(md, "| {dataset} | {} | {attacker} | {} |", capability.symbol(), cells.join(" | ")).unwrap();
        let mut fields = vec![dataset.clone(), capability.symbol().to_string(), attacker.to_string()];
        fields.extend(cells);
        fields.push(provenance(&rs));
        csv.push_str(&csv_line(&fields));
    }
    if !any {
        return Err(HarnessError::EmptyRecords);
    }
    reps.sort_unstable();
    reps.dedup();
    let reps: Vec<String> = reps.iter().map(usize::to_string).collect();
    writeln!(md, "\n{task} AUC. {CI_FOOTER} Repetitions per cell: {}.", reps.join(", ")).unwrap();
    Ok(vec![
        write_file(&dir.join(format!("{stem}.md")), &md)?,
        write_file(&dir.join(format!("{stem}.csv")), &csv)?,
    ])
}

fn beta_curves(records: &[ExperimentRecord], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let with_beta: Vec<ExperimentRecord> = records.iter().filter(|r| r.beta.is_some()).cloned().collect();
    if with_beta.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let mut files = Vec::new();
    let by_attack = group_by(&with_beta, |r| (r.task, r.attacker));
    for ((task, attacker), rs) in by_attack {
        let mut rs = rs;
        rs.sort_by(|a, b| {
            (a.dataset.as_str(), tag(&a.prompt), a.capability)
                .cmp(&(b.dataset.as_str(), tag(&b.prompt), b.capability))
                .then(a.beta.unwrap().total_cmp(&b.beta.unwrap()))
        });
        let mut out = String::from("beta,dataset,prompt,capability,auc,auc_ci95,acc,utility,utility_ci95,seed,config_hash\n");
        for r in rs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.beta.unwrap(),
                r.dataset,
                tag(&r.prompt),
                tag(&r.capability),
                r.auc_mean,
                r.auc_ci95,
                r.acc_mean,
                r.utility_mean,
                r.utility_ci95,
                r.seed,
                r.config_hash
            )
            .unwrap();
        }
        let name = format!("beta-curves-{}-{}.csv", tag(&task), tag(&attacker));
        files.push(write_file(&dir.join(name), &out)?);
    }
    Ok(files)
}

fn connectivity(records: &[ExperimentRecord], g: &Graph, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let m = class_connectivity(g)?;
    let c = m.rows();
    let mut csv = String::from("class");
    for j in 0..c {
        write!(csv, ",c{j}").unwrap();
    }
    csv.push('\n');
    let mut md = format!("| | {} |\n|{}\n", (0..c).map(|j| format!("c{j}")).collect::<Vec<_>>().join(" | "), "---|".repeat(c + 1));
    for i in 0..c {
        write!(csv, "c{i}").unwrap();
        let mut cells = Vec::with_capacity(c);
        for j in 0..c {
            write!(csv, ",{}", m.get(i, j)).unwrap();
            cells.push(format!("{:.4}", m.get(i, j)));
        }
        csv.push('\n');
        writeln!(md, "| c{i} | {} |", cells.join(" | ")).unwrap();
    }
    let refs: Vec<&ExperimentRecord> = records.iter().collect();
    writeln!(
        md,
        "\nRow-normalized edge counts between label categories of {}. Edge homophily {:.4}. Provenance {}.",
        g.name(),
        edge_homophily(g)?,
        provenance(&refs)
    )
    .unwrap();
    Ok(vec![
        write_file(&dir.join("connectivity.md"), &md)?,
        write_file(&dir.join("connectivity.csv"), &csv)?,
    ])
}

/// Top two principal components of the rows of `x` by power iteration with
/// deflation. Returns the projected coordinates and component variances.
pub fn pca_2d(x: &Tensor2, seed: u64) -> (Vec<[f64; 2]>, [f64; 2]) {
    let (n, q) = x.shape();
    let means = x.column_means();
    let centered = Tensor2::from_vec(
        n,
        q,
        x.iter_rows()
            .flat_map(|r| r.iter().zip(means.as_slice()).map(|(v, m)| v - m))
            .collect(),
    )
    .expect("shape preserved");
    let mut cov = centered.transpose().matmul(&centered).expect("conformable");
    for v in cov.as_mut_slice() {
        *v /= (n.max(2) - 1) as f64;
    }

    let mut rng = seeded_rng(seed, 0x9ca);
    let mut components = [vec![0.0; q], vec![0.0; q]];
    let mut variance = [0.0; 2];
    for k in 0..2 {
        let mut v: Vec<f64> = (0..q).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w: Vec<f64> = (0..q).map(|i| (0..q).map(|j| cov.get(i, j) * v[j]).sum()).collect();
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            w.iter_mut().for_each(|a| *a /= norm);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            lambda = norm;
            if delta < 1e-12 {
                break;
            }
        }
        // fix the sign so the largest-magnitude loading is positive
        let pivot = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|a| *a = -*a);
        }
        for i in 0..q {
            for j in 0..q {
                let d = cov.get(i, j) - lambda * v[i] * v[j];
                cov.set(i, j, d);
            }
        }
        variance[k] = lambda;
        components[k] = v;
    }
    let coords = centered
        .iter_rows()
        .map(|r| {
            let dot = |c: &[f64]| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [dot(&components[0]), dot(&components[1])]
        })
        .collect();
    (coords, variance)
}

/// Trains the link attacker on `capability` and projects the penultimate
/// activations of up to `per_class` test pairs of each label.
pub fn pair_projection(
    pipeline: &Pipeline,
    capability: CapabilityKind,
    per_class: usize,
) -> Result<Projection, HarnessError> {
    let cap = pipeline.capability(capability)?;
    let set = build_lia_pairs(&pipeline.graph, &cap, &pipeline.split, pipeline.seed)?;
    let AttackerModelSpec::Mlp(spec) = AttackerModelSpec::default_for(AttackerKind::Mlp, AttackTask::Lia) else {
        unreachable!("mlp kind yields an mlp spec")
    };
    let train_y: Vec<u8> = set.train.iter().map(|&i| set.labels[i]).collect();
    let mlp = Mlp::fit(&spec, &set.features.select_rows(&set.train), &train_y, pipeline.seed)?;
    let mut chosen = Vec::new();
    for label in [1u8, 0] {
        chosen.extend(set.test.iter().copied().filter(|&i| set.labels[i] == label).take(per_class));
    }
    let hidden = mlp.penultimate(&set.features.select_rows(&chosen))?;
    let (coords, variance) = pca_2d(&hidden, pipeline.seed);
    Ok(Projection {
        capability,
        pairs: chosen.iter().map(|&i| set.pairs[i]).collect(),
        labels: chosen.iter().map(|&i| set.labels[i]).collect(),
        coords,
        variance,
        seed: pipeline.seed,
        config_hash: pipeline.state.provenance().config_hash,
    })
}
