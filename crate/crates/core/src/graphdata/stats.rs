use super::{Graph, GraphError};
use crate::numcore::Tensor2;

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily(g: &Graph) -> Result<f64, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::NoEdges);
    }
    let labels = g.labels();
    let same = g.edges().iter().filter(|&&(u, v)| labels[u] == labels[v]).count();
    Ok(same as f64 / g.num_edges() as f64)
}

/// Row-normalized category-to-category incidence counts. Each undirected
/// edge contributes once in each direction; categories without incident
/// edges keep an all-zero row.
pub fn class_connectivity(g: &Graph) -> Result<Tensor2, GraphError> {
    let counts = incidence_counts(g)?;
    let mut out = counts.clone();
    for r in 0..out.rows() {
        let total: f64 = counts.row(r).iter().sum();
        if total > 0.0 {
            out.row_mut(r).iter_mut().for_each(|x| *x /= total);
        }
    }
    Ok(out)
}

/// Unnormalized C x C incidence tally behind [`class_connectivity`].
pub fn incidence_counts(g: &Graph) -> Result<Tensor2, GraphError> {
    if g.num_edges() == 0 {
        return Err(GraphError::NoEdges);
    }
    let c = g.num_classes();
    let labels = g.labels();
    let mut counts = Tensor2::zeros(c, c);
    for &(u, v) in g.edges() {
        let (a, b) = (labels[u], labels[v]);
        counts.set(a, b, counts.get(a, b) + 1.0);
        counts.set(b, a, counts.get(b, a) + 1.0);
    }
    Ok(counts)
}
