//! Random forest of Gini-split CART trees with bootstrap sampling and
//! `sqrt(p)` candidate features per split.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::AttackError;
use crate::numcore::Tensor2;
use crate::seeded_rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ForestSpec {
    pub trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    pub min_samples_split: usize,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 8,
            bootstrap: true,
            min_samples_split: 2,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { positive_rate: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { positive_rate } => return *positive_rate,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a Tensor2,
    y: &'a [u8],
    spec: &'a ForestSpec,
    max_features: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut impl Rng) -> usize {
        let total = rows.len() as f64;
        let pos = rows.iter().filter(|&&r| self.y[r] != 0).count() as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive_rate: pos / total,
        });
        if depth >= self.spec.max_depth || rows.len() < self.spec.min_samples_split || pos == 0.0 || pos == total {
            return id;
        }

        let parent = gini(pos, total);
        let mut best: Option<(f64, usize, f64)> = None;
        let p = self.x.cols();
        let mut column: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
        for feature in sample(rng, p, self.max_features.min(p)).into_iter() {
            column.clear();
            column.extend(rows.iter().map(|&r| (self.x.get(r, feature), self.y[r])));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0.0;
            for i in 0..column.len() - 1 {
                left_pos += f64::from(column[i].1 != 0);
                if column[i].0 == column[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = total - nl;
                let impurity = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / total;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, feature, 0.5 * (column[i].0 + column[i + 1].0)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let mut split = 0;
        for i in 0..rows.len() {
            if self.x.get(rows[i], feature) <= threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

#[derive(Clone, Debug)]
pub struct RandomForest {
    trees: Vec<Tree>,
}

impl RandomForest {
    /// Trees are grown in parallel, each from its own seeded stream, so the
    /// result does not depend on the thread count.
    pub fn fit(spec: &ForestSpec, x: &Tensor2, y: &[u8], seed: u64) -> Result<Self, AttackError> {
        if x.rows() == 0 || x.rows() != y.len() {
            return Err(AttackError::EmptySplit);
        }
        if spec.trees == 0 || spec.max_depth == 0 {
            return Err(AttackError::InvalidSpec("forest needs trees >= 1 and max_depth >= 1".into()));
        }
        let max_features = ((x.cols() as f64).sqrt().round() as usize).max(1);
        let trees = (0..spec.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seeded_rng(seed, 0xf000 + t as u64);
                let n = x.rows();
                let mut rows: Vec<usize> = if spec.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut b = Builder {
                    x,
                    y,
                    spec,
                    max_features,
                    nodes: Vec::new(),
                };
                b.grow(&mut rows, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Self { trees })
    }

    /// Mean over trees of the positive-class frequency in the reached leaf.
    pub fn predict_proba(&self, x: &Tensor2) -> Vec<f64> {
        x.iter_rows()
            .map(|row| self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64)
            .collect()
    }
}
