use crate::numcore::Tensor2;

use super::GraphError;

/// Undirected, attributed node-classification graph.
///
/// `features` holds the column-standardized matrix every model consumes;
/// `raw_features` keeps the values as loaded, which is what the default
/// sensitive-attribute rule reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    name: String,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Tensor2,
    raw_features: Tensor2,
    labels: Vec<usize>,
    num_classes: usize,
    sensitive: Option<Vec<u8>>,
}

impl Graph {
    /// Validates raw inputs and standardizes features column-wise.
    pub fn new(
        name: impl Into<String>,
        raw_features: Tensor2,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
        sensitive: Option<Vec<u8>>,
    ) -> Result<Self, GraphError> {
        let features = standardize_columns(&raw_features);
        Self::from_parts(name, features, raw_features, edges, labels, num_classes, sensitive)
    }

    /// Like [`Graph::new`] but takes already-normalized features as given.
    pub fn from_parts(
        name: impl Into<String>,
        features: Tensor2,
        raw_features: Tensor2,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
        sensitive: Option<Vec<u8>>,
    ) -> Result<Self, GraphError> {
        let n = labels.len();
        if features.rows() != n || raw_features.shape() != features.shape() {
            return Err(GraphError::RowCount {
                what: "features",
                expected: n,
                found: features.rows(),
            });
        }
        if let Some(s) = &sensitive {
            if s.len() != n {
                return Err(GraphError::RowCount {
                    what: "sensitive",
                    expected: n,
                    found: s.len(),
                });
            }
            if let Some(&bad) = s.iter().find(|&&b| b > 1) {
                return Err(GraphError::Parse(format!("sensitive value {bad} is not 0/1")));
            }
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(GraphError::LabelOutOfRange {
                node,
                label,
                num_classes,
            });
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if u > v {
                return Err(GraphError::NonCanonicalEdge(u, v));
            }
            if v >= n {
                return Err(GraphError::NodeOutOfRange { node: v, n });
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for (u, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                let (a, b) = (u.min(w[0]), u.max(w[0]));
                return Err(GraphError::DuplicateEdge(a, b));
            }
        }
        Ok(Self {
            name: name.into(),
            edges,
            neighbors,
            features,
            raw_features,
            labels,
            num_classes,
            sensitive,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn neighbor_lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn raw_features(&self) -> &Tensor2 {
        &self.raw_features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn explicit_sensitive(&self) -> Option<&[u8]> {
        self.sensitive.as_deref()
    }

    /// The binary sensitive attribute: the explicit one when present,
    /// otherwise raw feature `column` thresholded at its median (strictly
    /// above the median maps to 1).
    pub fn sensitive_attribute(&self, column: usize) -> Result<Vec<u8>, GraphError> {
        if let Some(s) = &self.sensitive {
            return Ok(s.clone());
        }
        if column >= self.raw_features.cols() {
            return Err(GraphError::NoSensitiveColumn(column));
        }
        let mut values: Vec<f64> = (0..self.num_nodes()).map(|v| self.raw_features.get(v, column)).collect();
        let raw = values.clone();
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let median = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        };
        Ok(raw.into_iter().map(|x| u8::from(x > median)).collect())
    }

    /// Same topology and labels with replaced (already normalized) features.
    pub fn with_features(&self, features: Tensor2) -> Result<Self, GraphError> {
        if features.rows() != self.num_nodes() {
            return Err(GraphError::RowCount {
                what: "features",
                expected: self.num_nodes(),
                found: features.rows(),
            });
        }
        let mut g = self.clone();
        if features.cols() != g.raw_features.cols() {
            g.raw_features = features.clone();
        }
        g.features = features;
        Ok(g)
    }

    /// Same nodes and features with a different edge set.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        Self::from_parts(
            self.name.clone(),
            self.features.clone(),
            self.raw_features.clone(),
            edges,
            self.labels.clone(),
            self.num_classes,
            self.sensitive.clone(),
        )
    }

    /// Subgraph induced by `keep`; node `i` of the result is `keep[i]`.
    pub fn induced(&self, keep: &[usize]) -> Result<Self, GraphError> {
        let n = self.num_nodes();
        let mut position = vec![usize::MAX; n];
        for (i, &v) in keep.iter().enumerate() {
            if v >= n {
                return Err(GraphError::NodeOutOfRange { node: v, n });
            }
            position[v] = i;
        }
        let mut edges = Vec::new();
        for &(u, v) in &self.edges {
            let (a, b) = (position[u], position[v]);
            if a != usize::MAX && b != usize::MAX {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        Self::from_parts(
            self.name.clone(),
            self.features.select_rows(keep),
            self.raw_features.select_rows(keep),
            edges,
            keep.iter().map(|&v| self.labels[v]).collect(),
            self.num_classes,
            self.sensitive.as_ref().map(|s| keep.iter().map(|&v| s[v]).collect()),
        )
    }
}

/// Per-column `(x - mean) / std` with population standard deviation;
/// constant columns are only centered.
pub fn standardize_columns(x: &Tensor2) -> Tensor2 {
    let (n, d) = x.shape();
    if n == 0 {
        return x.clone();
    }
    let means = x.column_means();
    let mut var = vec![0.0; d];
    for row in x.iter_rows() {
        for ((v, &xi), &m) in var.iter_mut().zip(row).zip(means.as_slice()) {
            *v += (xi - m) * (xi - m);
        }
    }
    let stds: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    let mut out = x.clone();
    for r in 0..n {
        for ((o, &m), &s) in out.row_mut(r).iter_mut().zip(means.as_slice()).zip(&stds) {
            *o -= m;
            if s > 0.0 {
                *o /= s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::new(
            "tri",
            Tensor2::from_rows(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]).unwrap(),
            vec![(0, 1), (0, 2), (1, 2)],
            vec![0, 0, 1],
            2,
            None,
        )
        .unwrap()
    }

    #[test]
    fn neighbor_index_is_sorted_and_consistent() {
        let g = triangle();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(2), &[0, 1]);
        assert!(g.has_edge(1, 2) && g.has_edge(2, 1));
    }

    #[test]
    fn rejects_invalid_edges() {
        let x = Tensor2::zeros(3, 1);
        let mk = |edges| Graph::new("g", x.clone(), edges, vec![0, 0, 0], 1, None);
        assert!(matches!(mk(vec![(1, 1)]), Err(GraphError::SelfLoop(1))));
        assert!(matches!(mk(vec![(0, 1), (0, 1)]), Err(GraphError::DuplicateEdge(0, 1))));
        assert!(matches!(mk(vec![(2, 1)]), Err(GraphError::NonCanonicalEdge(2, 1))));
        assert!(matches!(mk(vec![(0, 3)]), Err(GraphError::NodeOutOfRange { .. })));
    }

    #[test]
    fn label_range_checked() {
        let err = Graph::new("g", Tensor2::zeros(2, 1), vec![], vec![0, 2], 2, None).unwrap_err();
        assert!(matches!(err, GraphError::LabelOutOfRange { node: 1, label: 2, .. }));
    }

    #[test]
    fn standardization_and_constant_columns() {
        let g = triangle();
        let f = g.features();
        assert!((f.get(0, 0) + 1.224744871391589).abs() < 1e-12);
        assert_eq!(f.get(1, 0), 0.0);
        assert!(f.iter_rows().all(|r| r[1] == 0.0));
    }

    #[test]
    fn median_sensitive_rule() {
        let g = triangle();
        assert_eq!(g.sensitive_attribute(0).unwrap(), vec![0, 0, 1]);
        assert!(g.sensitive_attribute(5).is_err());
    }

    #[test]
    fn induced_subgraph_remaps() {
        let g = triangle();
        let s = g.induced(&[2, 0]).unwrap();
        assert_eq!(s.edges(), &[(0, 1)]);
        assert_eq!(s.labels(), &[1, 0]);
        assert_eq!(s.raw_features().get(0, 0), 3.0);
    }
}
