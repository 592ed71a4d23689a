//! Release-time Laplace perturbation of capability matrices and the
//! noise-scale sweep.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{AttackError, AttackResult, AttackSpec};
use crate::harness::{MetricError, Pipeline};
use crate::prompt::{CapabilityKind, CapabilityMatrix, PromptError};
use crate::seeded_rng;

/// Noise scales swept by default.
pub const DEFAULT_BETAS: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefenseError {
    #[error("noise scale must be finite and non-negative, got {0}")]
    InvalidBeta(f64),
    #[error("noise spec targets {expected:?} but the matrix is {found:?}")]
    KindMismatch { expected: CapabilityKind, found: CapabilityKind },
    #[error("empty beta list")]
    NoBetas,
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub beta: f64,
    pub kind: CapabilityKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), DefenseError> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(DefenseError::InvalidBeta(self.beta));
        }
        Ok(())
    }
}

/// `(1 / 2β) exp(-|x| / β)`.
pub fn laplace_density(beta: f64, x: f64) -> f64 {
    (-x.abs() / beta).exp() / (2.0 * beta)
}

/// One Laplace(0, β) draw by inverting the CDF. Requires `beta > 0`.
pub fn sample_laplace(beta: f64, rng: &mut impl Rng) -> f64 {
    debug_assert!(beta > 0.0);
    // u in [-0.5, 0.5); u = -0.5 would give ln(0), so redraw it
    let u = loop {
        let u = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            break u;
        }
    };
    -beta * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Adds independent Laplace noise to every released entry. Posterior rows
/// are not renormalized afterwards. `beta == 0` returns the input unchanged.
pub fn laplace_perturb(x: &CapabilityMatrix, spec: &NoiseSpec) -> Result<CapabilityMatrix, DefenseError> {
    spec.validate()?;
    if x.kind != spec.kind {
        return Err(DefenseError::KindMismatch {
            expected: spec.kind,
            found: x.kind,
        });
    }
    let mut out = x.clone();
    out.provenance.beta = Some(spec.beta);
    if spec.beta == 0.0 {
        return Ok(out);
    }
    let mut rng = seeded_rng(spec.seed, 0x1a9);
    for v in out.matrix.as_mut_slice() {
        *v += sample_laplace(spec.beta, &mut rng);
    }
    Ok(out)
}

/// One attack evaluated on a perturbed release.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub result: AttackResult,
}

/// Downstream accuracy when the pipeline consumes the perturbed release.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityPoint {
    pub beta: f64,
    pub capability: CapabilityKind,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepOutput {
    pub attacks: Vec<SweepPoint>,
    pub utility: Vec<UtilityPoint>,
}

/// Evaluates every attack on every capability at each noise scale. The
/// trained pipeline, splits and seeds stay fixed; only `β` changes, and all
/// scales reuse the same underlying noise draws.
pub fn beta_sweep(
    pipeline: &Pipeline,
    capabilities: &[CapabilityKind],
    attacks: &[AttackSpec],
    betas: &[f64],
) -> Result<SweepOutput, DefenseError> {
    if betas.is_empty() {
        return Err(DefenseError::NoBetas);
    }
    let mut out = SweepOutput::default();
    for &kind in capabilities {
        let clean = pipeline.capability(kind)?;
        for &beta in betas {
            let spec = NoiseSpec {
                beta,
                kind,
                seed: pipeline.seed,
            };
            let released = laplace_perturb(&clean, &spec)?;
            out.utility.push(UtilityPoint {
                beta,
                capability: kind,
                accuracy: pipeline.utility(&released)?,
            });
            for attack in attacks {
                out.attacks.push(SweepPoint {
                    beta,
                    result: pipeline.attack(attack, &released)?,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor2;
    use crate::prompt::{PromptKind, Provenance};

    fn zero_capability(rows: usize, cols: usize) -> CapabilityMatrix {
        CapabilityMatrix {
            kind: CapabilityKind::Embedding,
            matrix: Tensor2::zeros(rows, cols),
            provenance: Provenance {
                method: PromptKind::Gpf,
                seed: 1,
                config_hash: "h".into(),
                beta: None,
            },
        }
    }

    fn draws(beta: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, 0);
        (0..n).map(|_| sample_laplace(beta, &mut rng)).collect()
    }

    fn moments(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn density_at_origin() {
        assert_eq!(laplace_density(1.0, 0.0), 0.5);
        assert_eq!(laplace_density(2.0, 0.0), 0.25);
    }

    #[test]
    fn sample_moments() {
        let (mean, var) = moments(&draws(1.0, 100_000, 3));
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((1.9..=2.1).contains(&var), "{var}");
    }

    #[test]
    fn mean_absolute_value_is_beta() {
        for beta in [0.5, 1.0, 2.0] {
            let x = draws(beta, 100_000, 4);
            let mad = x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64;
            assert!((mad / beta - 1.0).abs() < 0.05, "{beta}: {mad}");
        }
    }

    #[test]
    fn empirical_cdf_matches() {
        let mut x = draws(1.0, 20_000, 5);
        x.sort_by(f64::total_cmp);
        let cdf = |t: f64| if t < 0.0 { 0.5 * t.exp() } else { 1.0 - 0.5 * (-t).exp() };
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, &t)| (cdf(t) - (i as f64 + 0.5) / x.len() as f64).abs())
            .fold(0.0, f64::max);
        // 1.36 / sqrt(n) is the 5% Kolmogorov-Smirnov critical value
        assert!(ks < 1.36 / (x.len() as f64).sqrt(), "{ks}");
    }

    #[test]
    fn zero_beta_is_bit_exact() {
        let mut cap = zero_capability(5, 3);
        cap.matrix = Tensor2::from_vec(5, 3, (0..15).map(|i| (i as f64).sin()).collect()).unwrap();
        let out = laplace_perturb(&cap, &NoiseSpec { beta: 0.0, kind: cap.kind, seed: 9 }).unwrap();
        assert_eq!(out.matrix.as_slice(), cap.matrix.as_slice());
        assert_eq!(out.provenance.beta, Some(0.0));
    }

    #[test]
    fn perturbation_moments_and_independence() {
        let cap = zero_capability(1000, 100);
        let out = laplace_perturb(&cap, &NoiseSpec { beta: 1.0, kind: cap.kind, seed: 2 }).unwrap();
        let x = out.matrix.as_slice();
        let (mean, var) = moments(x);
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var / 2.0 - 1.0).abs() < 0.1, "{var}");
        let lag1 = x.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((x.len() - 1) as f64 * var);
        assert!(lag1.abs() < 0.02, "{lag1}");
    }

    #[test]
    fn posteriors_are_not_renormalized() {
        let mut cap = zero_capability(50, 4);
        cap.kind = CapabilityKind::Posterior;
        cap.matrix = Tensor2::filled(50, 4, 0.25);
        let out = laplace_perturb(&cap, &NoiseSpec { beta: 1.0, kind: cap.kind, seed: 1 }).unwrap();
        let off = out
            .matrix
            .iter_rows()
            .filter(|r| (r.iter().sum::<f64>() - 1.0).abs() > 1e-9)
            .count();
        assert!(off > 40);
    }

    #[test]
    fn determinism_and_validation() {
        let cap = zero_capability(10, 10);
        let spec = |seed| NoiseSpec { beta: 1.0, kind: cap.kind, seed };
        let a = laplace_perturb(&cap, &spec(1)).unwrap();
        assert_eq!(a, laplace_perturb(&cap, &spec(1)).unwrap());
        assert_ne!(a.matrix, laplace_perturb(&cap, &spec(2)).unwrap().matrix);

        let bad = NoiseSpec { beta: -1.0, ..spec(1) };
        assert!(matches!(laplace_perturb(&cap, &bad), Err(DefenseError::InvalidBeta(_))));
        let wrong = NoiseSpec { kind: CapabilityKind::Prompt, ..spec(1) };
        assert!(matches!(laplace_perturb(&cap, &wrong), Err(DefenseError::KindMismatch { .. })));
    }

    #[test]
    fn sweep_covers_every_cell() {
        use crate::attacks::{AttackSpec, AttackTask, AttackerKind};
        use crate::graphdata::SbmSpec;
        use crate::harness::{load_dataset, DatasetRef, ExperimentConfig, Pipeline};

        let mut cfg = ExperimentConfig {
            dataset: DatasetRef::Sbm(SbmSpec {
                n: 160,
                num_classes: 2,
                p_in: 0.1,
                p_out: 0.01,
                feature_dim: 6,
                feature_signal: 1.0,
                sensitive_correlation: 0.9,
            }),
            ..ExperimentConfig::default()
        };
        cfg.pretrain.epochs = 2;
        cfg.pretrain.encoder.hidden = 8;
        cfg.prompt_config.epochs = 3;
        let (g, s) = load_dataset(&cfg).unwrap();
        let p = Pipeline::build(g, s, &cfg, 0).unwrap();
        let attacks = [
            AttackSpec::new(AttackTask::Aia, AttackerKind::Mlp),
            AttackSpec::new(AttackTask::Lia, AttackerKind::Cosine),
        ];
        let out = beta_sweep(&p, &[CapabilityKind::Embedding], &attacks, &DEFAULT_BETAS).unwrap();
        assert_eq!(out.attacks.len(), 12);
        assert_eq!(out.utility.len(), 6);
        for (i, point) in out.attacks.iter().enumerate() {
            assert_eq!(point.beta, DEFAULT_BETAS[i / 2]);
            assert_eq!(point.result.task, attacks[i % 2].task);
        }
        let again = beta_sweep(&p, &[CapabilityKind::Embedding], &attacks, &DEFAULT_BETAS).unwrap();
        let aucs = |o: &SweepOutput| o.attacks.iter().map(|a| a.result.auc).collect::<Vec<_>>();
        assert_eq!(aucs(&out), aucs(&again));
        assert_eq!(out.utility, again.utility);
        assert!(matches!(beta_sweep(&p, &[CapabilityKind::Embedding], &attacks, &[]), Err(DefenseError::NoBetas)));
    }
}
