use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError};
use crate::numcore::Tensor2;
use crate::seeded_rng;

/// Stochastic block model with Gaussian category-mean features and a
/// binary sensitive attribute read off feature column 0.
///
/// Column 0 carries a private per-node bit `b` (independent of category) as
/// `±2μ + noise`; the remaining columns carry a random `±μ` sign pattern per
/// category plus unit noise. The sensitive attribute equals `[x₀ > 0]` with
/// probability `sensitive_correlation` and is flipped otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub n: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    #[serde(default = "default_signal")]
    pub feature_signal: f64,
    #[serde(default = "default_correlation")]
    pub sensitive_correlation: f64,
}

fn default_signal() -> f64 {
    1.0
}

fn default_correlation() -> f64 {
    0.9
}

impl SbmSpec {
    /// The homophilous desk-scale benchmark used throughout the test suite.
    pub fn reference() -> Self {
        Self {
            n: 1200,
            num_classes: 4,
            p_in: 0.04,
            p_out: 0.002,
            feature_dim: 32,
            feature_signal: default_signal(),
            sensitive_correlation: 0.9,
        }
    }

    /// Low-homophily counterpart: inter-category edges twice as likely.
    pub fn heterophilous() -> Self {
        Self {
            p_in: 0.005,
            p_out: 0.01,
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: &str| Err(GraphError::InvalidSpec(m.to_string()));
        if self.n == 0 || self.num_classes == 0 || self.num_classes > self.n {
            return bad("need 1 <= num_classes <= n");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return bad("edge probabilities must lie in [0, 1]");
        }
        if !(0.5..=1.0).contains(&self.sensitive_correlation) {
            return bad("sensitive_correlation must lie in [0.5, 1]");
        }
        if !self.feature_signal.is_finite() || self.feature_signal < 0.0 {
            return bad("feature_signal must be finite and non-negative");
        }
        Ok(())
    }

    /// Expected edge homophily from intra/inter pair counts.
    pub fn expected_homophily(&self, labels: &[usize]) -> f64 {
        let mut counts = vec![0usize; self.num_classes];
        for &l in labels {
            counts[l] += 1;
        }
        let n = labels.len();
        let intra: usize = counts.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
        let inter = n * (n - 1) / 2 - intra;
        let e_in = self.p_in * intra as f64;
        let e_out = self.p_out * inter as f64;
        e_in / (e_in + e_out)
    }
}

pub fn generate_sbm(spec: &SbmSpec, seed: u64) -> Result<Graph, GraphError> {
    spec.validate()?;
    let (n, c, d) = (spec.n, spec.num_classes, spec.feature_dim);

    let mut rng = seeded_rng(seed, 0x5b);
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let patterns: Vec<Vec<f64>> = (0..c)
        .map(|_| (1..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    let mu = spec.feature_signal;
    let mut raw = Tensor2::zeros(n, d);
    let mut sensitive = Vec::with_capacity(n);
    for v in 0..n {
        let private_bit = rng.random::<bool>();
        let carrier = if private_bit { 2.0 * mu } else { -2.0 * mu };
        let row = raw.row_mut(v);
        row[0] = carrier + rng.sample::<f64, _>(StandardNormal);
        for (j, &sign) in patterns[labels[v]].iter().enumerate() {
            row[j + 1] = mu * sign + rng.sample::<f64, _>(StandardNormal);
        }
        let derived = row[0] > 0.0;
        let keep = rng.random::<f64>() < spec.sensitive_correlation;
        sensitive.push(u8::from(derived == keep));
    }

    Graph::new(
        format!("sbm-n{n}-c{c}"),
        raw,
        edges,
        labels,
        c,
        Some(sensitive),
    )
}
