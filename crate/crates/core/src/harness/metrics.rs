use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("AUC needs both label values, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("length mismatch: {0} scores vs {1} labels")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("need at least 2 values for a confidence interval, got {0}")]
    TooFewValues(usize),
    #[error("non-finite score")]
    NonFinite,
}

/// Area under the ROC curve via the Mann-Whitney rank sum with midranks for
/// ties; labels are positive when non-zero.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of positions where prediction equals label.
pub fn accuracy<T: PartialEq>(predictions: &[T], labels: &[T]) -> Result<f64, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::Length(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean and normal-approximation 95% half-width `1.96 s / sqrt(n)` with the
/// sample standard deviation `s`.
pub fn ci95(values: &[f64]) -> Result<(f64, f64), MetricError> {
    if values.len() < 2 {
        return Err(MetricError::TooFewValues(values.len()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn pair_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        let mut count = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] != 0 && labels[j] == 0 {
                    count += 1.0;
                    total += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        total / count
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(auc(&[0.8, 0.3, 0.6, 0.2], &[1, 0, 0, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(MetricError::SingleClass { .. })));
    }

    #[test]
    fn auc_matches_pair_oracle_with_ties() {
        let mut rng = seeded_rng(1, 0);
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 1;
            labels[1] = 0;
            // coarse grid forces ties
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 7.0).collect();
            assert!((auc(&scores, &labels).unwrap() - pair_oracle(&scores, &labels)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn auc_invariant_under_increasing_maps(
            raw in proptest::collection::vec((-3.0f64..3.0, 0u8..2), 2..40)
        ) {
            let mut labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
            labels[0] = 1;
            labels[1] = 0;
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let base = auc(&scores, &labels).unwrap();
            let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
            let affine: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
            prop_assert!((auc(&cubed, &labels).unwrap() - base).abs() < 1e-12);
            prop_assert!((auc(&affine, &labels).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 1, 0, 0], &[1, 1, 0, 1]).unwrap(), 0.75);
        assert!(matches!(accuracy::<u8>(&[], &[]), Err(MetricError::Empty)));
    }

    #[test]
    fn ci95_examples() {
        assert_eq!(ci95(&[0.7; 5]).unwrap(), (0.7, 0.0));
        let (m, hw) = ci95(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        assert!((hw - 0.98).abs() < 1e-4);
        let mut rng = seeded_rng(2, 0);
        let vals: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let mean = vals.iter().sum::<f64>() / 10.0;
        let s = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0).sqrt();
        let (m, hw) = ci95(&vals).unwrap();
        assert!((m - mean).abs() < 1e-12 && (hw - 1.96 * s / 10f64.sqrt()).abs() < 1e-12);
        assert!(ci95(&[1.0]).is_err());
    }
}
