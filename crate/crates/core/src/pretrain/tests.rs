use super::*;
use crate::encoder::{gnn_forward, Aggregator};
use crate::graphdata::{generate_sbm, SbmSpec};

fn small_sbm(n: usize, p_in: f64, p_out: f64, seed: u64) -> Graph {
    let spec = SbmSpec {
        n,
        num_classes: 2,
        p_in,
        p_out,
        feature_dim: 8,
        feature_signal: 1.0,
        sensitive_correlation: 0.9,
    };
    generate_sbm(&spec, seed).unwrap()
}

fn quick(method: PretrainMethod, epochs: usize) -> PretrainConfig {
    PretrainConfig {
        method,
        encoder: EncoderConfig {
            hidden: 16,
            ..EncoderConfig::default()
        },
        epochs,
        lr: 1e-2,
        seed: 11,
        ..PretrainConfig::default()
    }
}

/// Mann-Whitney AUC by explicit pair counting.
fn pair_count_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &q in neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

#[test]
fn zero_epochs_returns_initialization() {
    let g = small_sbm(30, 0.3, 0.05, 1);
    let cfg = quick(PretrainMethod::Dgi, 0);
    let out = pretrain_run(&g, &cfg).unwrap();
    let init = EncoderParams::init(cfg.encoder.clone(), 8, cfg.seed).unwrap();
    assert!(out.params.is_frozen());
    assert!(out.loss_trace.is_empty());
    for (name, t) in init.params().iter() {
        assert_eq!(out.params.params().get(name).unwrap(), t);
    }
}

#[test]
fn every_method_trains_and_is_deterministic() {
    let g = small_sbm(60, 0.2, 0.02, 2);
    for method in PretrainMethod::ALL {
        let cfg = quick(method, 5);
        let a = pretrain_run(&g, &cfg).unwrap();
        let b = pretrain_run(&g, &cfg).unwrap();
        assert_eq!(a.loss_trace.len(), 5, "{method}");
        assert!(a.loss_trace.iter().all(|l| l.is_finite() && *l >= 0.0), "{method}");
        assert_eq!(a.loss_trace, b.loss_trace, "{method}");
        for (name, t) in a.params.params().iter() {
            assert_eq!(b.params.params().get(name).unwrap(), t, "{method} {name}");
        }
        let init = EncoderParams::init(cfg.encoder.clone(), 8, cfg.seed).unwrap();
        assert_ne!(
            init.params().get("enc.l0.w_self"),
            a.params.params().get("enc.l0.w_self"),
            "{method} did not move"
        );
    }
}

#[test]
fn graphcl_loss_decreases() {
    let g = small_sbm(300, 0.05, 0.005, 3);
    let cfg = PretrainConfig {
        method: PretrainMethod::GraphCl,
        seed: 4,
        ..PretrainConfig::default()
    };
    let out = pretrain_run(&g, &cfg).unwrap();
    let t = &out.loss_trace;
    assert_eq!(t.len(), 100);
    let head: f64 = t[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = t[90..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "first {head} last {tail}");
    assert!(t[99] < t[0], "first {} last {}", t[0], t[99]);
}

#[test]
fn edgepred_separates_held_out_edges() {
    let g = small_sbm(60, 1.0, 0.0, 5);
    let mut rng = seeded_rng(5, 1);
    let mut held = Vec::new();
    let mut train = Vec::new();
    for &e in g.edges() {
        if rng.random::<f64>() < 0.2 {
            held.push(e);
        } else {
            train.push(e);
        }
    }
    let train_graph = g.with_edges(train).unwrap();
    let out = pretrain_run(&train_graph, &quick(PretrainMethod::EdgePred, 100)).unwrap();
    let e = gnn_forward(&train_graph, &out.params, None).unwrap();
    let score = |(u, v): (usize, usize)| e.row(u).iter().zip(e.row(v)).map(|(a, b)| a * b).sum::<f64>();
    let neg = sample_non_edges(&g, held.len(), &mut rng).unwrap();
    let pos: Vec<f64> = held.iter().map(|&p| score(p)).collect();
    let negs: Vec<f64> = neg.iter().map(|&p| score(p)).collect();
    let auc = pair_count_auc(&pos, &negs);
    assert!(auc > 0.8, "held-out AUC {auc}");
}

#[test]
fn simgrace_perturbation_moments() {
    let cfg = EncoderConfig {
        layers: 2,
        hidden: 128,
        aggregator: Aggregator::Mean,
    };
    let p = EncoderParams::init(cfg, 128, 0).unwrap();
    let same = simgrace_views(&p, 0.0, 3).unwrap();
    for (name, t) in p.params().iter() {
        assert_eq!(same.params().get(name).unwrap(), t);
    }
    let eta = 0.1;
    let a = simgrace_views(&p, eta, 3).unwrap();
    let b = simgrace_views(&p, eta, 4).unwrap();
    let w = p.params().get("enc.l1.w_self").unwrap();
    let std = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    };
    let diff: Vec<f64> = a.params().get("enc.l1.w_self").unwrap().as_slice().iter().zip(w.as_slice()).map(|(x, y)| x - y).collect();
    let ratio = std(&diff) / (eta * std(w.as_slice()));
    assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    assert_ne!(a.params().get("enc.l1.w_self"), b.params().get("enc.l1.w_self"));
}

#[test]
fn mask_nodes_size_and_errors() {
    let m = mask_nodes(100, 0.5, 1).unwrap();
    assert_eq!(m.len(), 50);
    assert!(m.windows(2).all(|w| w[0] < w[1]));
    assert!(matches!(mask_nodes(3, 0.1, 1), Err(PretrainError::EmptyMask)));
}

#[test]
fn config_validation() {
    let ok = PretrainConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        PretrainConfig { temperature: 0.0, ..ok.clone() },
        PretrainConfig { sce_gamma: 0.5, ..ok.clone() },
        PretrainConfig { mask_rate: 1.0, ..ok.clone() },
        PretrainConfig { augment: AugmentSpec::NONE, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(PretrainError::InvalidConfig(_))));
    }
    let parsed: PretrainConfig = serde_json::from_str(r#"{"method":"graphmae","epochs":3}"#).unwrap();
    assert_eq!((parsed.method, parsed.epochs, parsed.lr), (PretrainMethod::GraphMae, 3, 1e-3));
}

#[test]
fn non_finite_loss_reports_epoch() {
    let g = small_sbm(30, 0.3, 0.05, 6);
    let cfg = PretrainConfig { lr: 1e300, ..quick(PretrainMethod::EdgePred, 10) };
    match pretrain_run(&g, &cfg) {
        Err(PretrainError::NonFiniteLoss { epoch }) => assert!(epoch >= 1 && epoch < 10),
        other => panic!("expected non-finite abort, got {other:?}"),
    }
}
