//! Graph bundle directories: `meta.json`, `edges.csv`, `features.csv`,
//! `labels.csv` and optionally `sensitive.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, GraphError};
use crate::numcore::Tensor2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub has_sensitive: bool,
}

fn read(dir: &Path, file: &str) -> Result<String, GraphError> {
    let path = dir.join(file);
    fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GraphError::MissingFile(path.display().to_string()),
        _ => GraphError::Io(format!("{}: {e}", path.display())),
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse<T: std::str::FromStr>(file: &str, line: usize, s: &str) -> Result<T, GraphError> {
    s.trim()
        .parse()
        .map_err(|_| GraphError::Parse(format!("{file}:{line}: cannot parse {s:?}")))
}

pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph, GraphError> {
    let dir = dir.as_ref();
    let meta: BundleMeta =
        serde_json::from_str(&read(dir, "meta.json")?).map_err(|e| GraphError::Parse(format!("meta.json: {e}")))?;

    let mut edges = Vec::new();
    for (line, l) in data_lines(&read(dir, "edges.csv")?) {
        let (u, v) = l
            .split_once(',')
            .ok_or_else(|| GraphError::Parse(format!("edges.csv:{line}: expected \"u,v\"")))?;
        edges.push((parse("edges.csv", line, u)?, parse("edges.csv", line, v)?));
    }

    let mut data = Vec::with_capacity(meta.n * meta.d);
    let mut rows = 0;
    for (line, l) in data_lines(&read(dir, "features.csv")?) {
        let before = data.len();
        for tok in l.split(',') {
            data.push(parse::<f64>("features.csv", line, tok)?);
        }
        if data.len() - before != meta.d {
            return Err(GraphError::RowCount {
                what: "feature columns",
                expected: meta.d,
                found: data.len() - before,
            });
        }
        rows += 1;
    }
    if rows != meta.n {
        return Err(GraphError::RowCount {
            what: "features",
            expected: meta.n,
            found: rows,
        });
    }
    let raw = Tensor2::from_vec(meta.n, meta.d, data).map_err(|e| GraphError::Parse(e.to_string()))?;

    let labels: Vec<usize> = data_lines(&read(dir, "labels.csv")?)
        .map(|(line, l)| parse("labels.csv", line, l))
        .collect::<Result<_, _>>()?;
    if labels.len() != meta.n {
        return Err(GraphError::RowCount {
            what: "labels",
            expected: meta.n,
            found: labels.len(),
        });
    }

    let sensitive = if meta.has_sensitive {
        let s: Vec<u8> = data_lines(&read(dir, "sensitive.csv")?)
            .map(|(line, l)| parse("sensitive.csv", line, l))
            .collect::<Result<_, _>>()?;
        if s.len() != meta.n {
            return Err(GraphError::RowCount {
                what: "sensitive",
                expected: meta.n,
                found: s.len(),
            });
        }
        Some(s)
    } else {
        None
    };

    Graph::new(meta.name, raw, edges, labels, meta.num_classes, sensitive)
}

/// Writes the raw (unstandardized) features, so loading reproduces the graph.
pub fn save_graph(g: &Graph, dir: impl AsRef<Path>) -> Result<(), GraphError> {
    let dir = dir.as_ref();
    let io = |e: std::io::Error| GraphError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let meta = BundleMeta {
        name: g.name().to_string(),
        n: g.num_nodes(),
        d: g.feature_dim(),
        num_classes: g.num_classes(),
        has_sensitive: g.explicit_sensitive().is_some(),
    };
    let meta_json = serde_json::to_string_pretty(&meta).map_err(|e| GraphError::Io(e.to_string()))?;
    fs::write(dir.join("meta.json"), meta_json + "\n").map_err(io)?;

    let mut edges = String::new();
    for &(u, v) in g.edges() {
        writeln!(edges, "{u},{v}").unwrap();
    }
    fs::write(dir.join("edges.csv"), edges).map_err(io)?;

    let mut feats = String::new();
    for row in g.raw_features().iter_rows() {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                feats.push(',');
            }
            // Display for f64 is the shortest string that parses back to the same bits.
            write!(feats, "{x}").unwrap();
        }
        feats.push('\n');
    }
    fs::write(dir.join("features.csv"), feats).map_err(io)?;

    let labels: String = g.labels().iter().map(|l| format!("{l}\n")).collect();
    fs::write(dir.join("labels.csv"), labels).map_err(io)?;
    if let Some(s) = g.explicit_sensitive() {
        let text: String = s.iter().map(|b| format!("{b}\n")).collect();
        fs::write(dir.join("sensitive.csv"), text).map_err(io)?;
    }
    Ok(())
}
