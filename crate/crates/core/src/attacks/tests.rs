use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::graphdata::{generate_sbm, split_target_shadow, SbmSpec};
use crate::prompt::{PromptKind, Provenance};

fn capability(kind: CapabilityKind, matrix: Tensor2) -> CapabilityMatrix {
    CapabilityMatrix {
        kind,
        matrix,
        provenance: Provenance {
            method: PromptKind::Gpf,
            seed: 0,
            config_hash: String::new(),
            beta: None,
        },
    }
}

fn sbm(n: usize, p_in: f64) -> Graph {
    let spec = SbmSpec {
        n,
        num_classes: 2,
        p_in,
        p_out: p_in / 10.0,
        feature_dim: 6,
        feature_signal: 1.0,
        sensitive_correlation: 0.9,
    };
    generate_sbm(&spec, 5).unwrap()
}

/// One column per node: `signal * (2s - 1) + N(0, 1)`, plus pure noise columns.
fn leaky_capability(sensitive: &[u8], signal: f64, seed: u64) -> Tensor2 {
    let mut rng = seeded_rng(seed, 1);
    let mut m = Tensor2::zeros(sensitive.len(), 4);
    for (v, &s) in sensitive.iter().enumerate() {
        let row = m.row_mut(v);
        row[0] = signal * (2.0 * s as f64 - 1.0) + rng.sample::<f64, _>(StandardNormal);
        for x in &mut row[1..] {
            *x = rng.sample(StandardNormal);
        }
    }
    m
}

fn quick_mlp() -> AttackerModelSpec {
    AttackerModelSpec::Mlp(MlpSpec {
        hidden: vec![16, 8],
        epochs: 30,
        lr: 1e-2,
        batch: 64,
    })
}

#[test]
fn pair_features_hand_vector() {
    assert_eq!(pair_features(&[1.0, 2.0], &[3.0, -1.0]), vec![3.0, -2.0, 2.0, 3.0]);
}

proptest! {
    #[test]
    fn pair_features_symmetric(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        prop_assert_eq!(pair_features(&a, &b), pair_features(&b, &a));
    }

    #[test]
    fn cosine_score_in_unit_interval(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let s = cosine_score(&a, &b);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&s));
        prop_assert!((s - cosine_score(&b, &a)).abs() < 1e-12);
    }
}

#[test]
fn cosine_score_fixed_points() {
    assert!((cosine_score(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
    assert!(cosine_score(&[1.0, 0.0], &[-3.0, 0.0]).abs() < 1e-12);
    assert_eq!(cosine_score(&[0.0, 0.0], &[1.0, 1.0]), 0.5);
}

#[test]
fn best_threshold_separates_clean_scores() {
    let scores = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
    let labels = [0, 0, 0, 1, 1, 1];
    let t = best_threshold(&scores, &labels);
    assert!(t > 0.3 && t < 0.7, "{t}");
    let all_pos = best_threshold(&[0.5, 0.5], &[1, 1]);
    assert!(all_pos < 0.5);
}

#[test]
fn lia_pairs_balanced_and_valid() {
    let g = sbm(300, 0.05);
    let split = split_target_shadow(&g, 0.5, 5, 1).unwrap();
    let cap = capability(CapabilityKind::Embedding, leaky_capability(&vec![0; 300], 0.0, 2));
    let set = build_lia_pairs(&g, &cap, &split, 9).unwrap();
    let mask = split.shadow_mask(300);
    let expected_pos = g.edges().iter().filter(|&&(u, v)| mask[u] && mask[v]).count();

    let pos = set.labels.iter().filter(|&&l| l == 1).count();
    assert_eq!(pos, expected_pos);
    assert_eq!(set.labels.len(), 2 * pos);
    let mut seen = HashSet::new();
    for (&(u, v), &l) in set.pairs.iter().zip(&set.labels) {
        assert!(mask[u] && mask[v]);
        assert_eq!(g.has_edge(u, v), l == 1);
        assert!(seen.insert((u.min(v), u.max(v))), "duplicate pair");
    }

    let cut = (0.7 * pos as f64).floor() as usize;
    let train_pos = set.train.iter().filter(|&&i| set.labels[i] == 1).count();
    assert_eq!(train_pos, cut);
    assert_eq!(set.train.len(), 2 * cut);
    assert_eq!(set.test.len(), 2 * (pos - cut));
    assert_eq!(set.features.shape(), (2 * pos, 8));
}

#[test]
fn split_arithmetic_for_eighty_edges() {
    // a 20-node cycle fully inside the shadow set has 20 edges; four disjoint cycles give 80
    let n = 80;
    let mut edges = Vec::new();
    for c in 0..4 {
        for i in 0..20 {
            let (a, b) = (c * 20 + i, c * 20 + (i + 1) % 20);
            edges.push((a.min(b), a.max(b)));
        }
    }
    let labels: Vec<usize> = (0..n).map(|v| v % 2).collect();
    let g = Graph::new("cycles", Tensor2::zeros(n, 2), edges, labels, 2, Some(vec![0; n])).unwrap();
    let split = SplitSpec {
        target: vec![],
        shadow: (0..n).collect(),
        attack_train: vec![],
        attack_test: vec![],
        seed: 0,
    };
    let cap = capability(CapabilityKind::Posterior, Tensor2::ones(n, 2));
    let set = build_lia_pairs(&g, &cap, &split, 0).unwrap();
    let train_pos = set.train.iter().filter(|&&i| set.labels[i] == 1).count();
    let test_pos = set.test.iter().filter(|&&i| set.labels[i] == 1).count();
    assert_eq!((train_pos, test_pos), (56, 24));
    assert_eq!((set.train.len(), set.test.len()), (112, 48));
}

#[test]
fn aia_split_arithmetic_for_eighty_shadow_nodes() {
    let g = sbm(100, 0.1);
    let split = split_target_shadow(&g, 0.2, 5, 2).unwrap();
    assert_eq!(split.shadow.len(), 80);
    let s = g.explicit_sensitive().unwrap().to_vec();
    let cap = capability(CapabilityKind::Posterior, leaky_capability(&s, 1.0, 1));
    let data = build_aia_dataset(&cap, &g, &split, &s).unwrap();
    assert_eq!((data.train.len(), data.test.len()), (56, 24));
}

#[test]
fn dense_shadow_lacks_non_edges() {
    let n = 6;
    let edges: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let g = Graph::new("k6", Tensor2::zeros(n, 2), edges, vec![0; n], 1, None).unwrap();
    let split = SplitSpec {
        target: vec![],
        shadow: (0..n).collect(),
        attack_train: vec![],
        attack_test: vec![],
        seed: 0,
    };
    let cap = capability(CapabilityKind::Posterior, Tensor2::ones(n, 1));
    assert!(matches!(
        build_lia_pairs(&g, &cap, &split, 0),
        Err(AttackError::TooFewNonEdges { .. })
    ));
}

#[test]
fn aia_dataset_uses_local_indices() {
    let g = sbm(200, 0.05);
    let split = split_target_shadow(&g, 0.5, 5, 3).unwrap();
    let s = g.explicit_sensitive().unwrap().to_vec();
    let cap = capability(CapabilityKind::Prompt, leaky_capability(&s, 1.0, 4));
    let data = build_aia_dataset(&cap, &g, &split, &s).unwrap();
    assert_eq!(data.train.len() + data.test.len(), split.shadow.len());
    for (&local, &global) in data.train.iter().zip(&split.attack_train) {
        assert_eq!(data.shadow[local], global);
        assert_eq!(data.labels[local], s[global]);
        assert_eq!(data.features.row(local), cap.matrix.row(global));
    }
    for (i, nb) in data.shadow_neighbors.iter().enumerate() {
        for &j in nb {
            assert!(g.has_edge(data.shadow[i], data.shadow[j]));
        }
    }

    let constant = vec![1u8; 200];
    assert!(matches!(
        build_aia_dataset(&cap, &g, &split, &constant),
        Err(AttackError::SingleValued(_))
    ));
}

#[test]
fn shuffled_labels_give_chance_auc() {
    let g = sbm(1200, 0.01);
    let split = split_target_shadow(&g, 0.5, 5, 6).unwrap();
    let s = g.explicit_sensitive().unwrap().to_vec();
    let cap = capability(CapabilityKind::Embedding, leaky_capability(&s, 2.0, 7));
    let mut shuffled = s.clone();
    shuffled.shuffle(&mut seeded_rng(8, 0));
    let data = build_aia_dataset(&cap, &g, &split, &shuffled).unwrap();
    for spec in [quick_mlp(), AttackerModelSpec::RandomForest(ForestSpec { trees: 30, ..ForestSpec::default() })] {
        let r = attack_aia(&spec, &data, 1).unwrap();
        assert!((0.4..=0.6).contains(&r.auc), "{:?}: {}", spec.kind(), r.auc);
    }
}

#[test]
fn leakage_raises_aia_auc() {
    let g = sbm(800, 0.02);
    let split = split_target_shadow(&g, 0.5, 5, 6).unwrap();
    let s = g.explicit_sensitive().unwrap().to_vec();
    let run = |signal: f64, spec: &AttackerModelSpec| {
        let cap = capability(CapabilityKind::Embedding, leaky_capability(&s, signal, 11));
        let data = build_aia_dataset(&cap, &g, &split, &s).unwrap();
        attack_aia(spec, &data, 2).unwrap()
    };
    let gnn = AttackerModelSpec::Gnn(GnnSpec { epochs: 60, ..GnnSpec::default() });
    for spec in [quick_mlp(), AttackerModelSpec::RandomForest(ForestSpec { trees: 30, ..ForestSpec::default() }), gnn] {
        let weak = run(0.0, &spec);
        let strong = run(2.0, &spec);
        assert!(strong.auc > 0.85, "{:?}: {}", spec.kind(), strong.auc);
        assert!(strong.auc > weak.auc + 0.2, "{:?}: {} vs {}", spec.kind(), strong.auc, weak.auc);
        assert_eq!(strong.attacker, spec.kind());
        assert!((0.0..=1.0).contains(&strong.acc));
    }
}

#[test]
fn homophilous_embeddings_leak_links() {
    // rows are one-hot category indicators plus noise, so same-category pairs look alike;
    // with two categories half the negatives share a category, capping AUC near 0.7
    let g = sbm(400, 0.06);
    let split = split_target_shadow(&g, 0.5, 5, 2).unwrap();
    let mut rng = seeded_rng(3, 0);
    let mut m = Tensor2::zeros(400, 2);
    for v in 0..400 {
        m.set(v, g.labels()[v], 1.0);
        for j in 0..2 {
            let x = m.get(v, j) + 0.3 * rng.sample::<f64, _>(StandardNormal);
            m.set(v, j, x);
        }
    }
    let cap = capability(CapabilityKind::Embedding, m);
    let set = build_lia_pairs(&g, &cap, &split, 4).unwrap();
    let cos = lia_cosine(&set, &cap.matrix, 4).unwrap();
    assert!(cos.auc > 0.65, "{}", cos.auc);
    let mlp = attack_lia(&AttackerModelSpec::default_for(AttackerKind::Mlp, AttackTask::Lia), &set, &cap.matrix, 4).unwrap();
    assert!(mlp.auc > 0.65, "{}", mlp.auc);
    assert_eq!(mlp.task, AttackTask::Lia);
}

#[test]
fn unsupported_pairings_rejected() {
    let g = sbm(200, 0.05);
    let split = split_target_shadow(&g, 0.5, 5, 3).unwrap();
    let s = g.explicit_sensitive().unwrap().to_vec();
    let cap = capability(CapabilityKind::Embedding, leaky_capability(&s, 1.0, 4));
    let data = build_aia_dataset(&cap, &g, &split, &s).unwrap();
    let cosine = AttackerModelSpec::default_for(AttackerKind::Cosine, AttackTask::Aia);
    assert!(matches!(train_aia_attacker(&cosine, &data, 0), Err(AttackError::Unsupported { .. })));
    let set = build_lia_pairs(&g, &cap, &split, 0).unwrap();
    let gnn = AttackerModelSpec::default_for(AttackerKind::Gnn, AttackTask::Lia);
    assert!(matches!(
        train_lia_attacker(&gnn, &set, &cap.matrix, 0),
        Err(AttackError::Unsupported { .. })
    ));
}

#[test]
fn default_specs_match_task() {
    match AttackerModelSpec::default_for(AttackerKind::Mlp, AttackTask::Aia) {
        AttackerModelSpec::Mlp(s) => assert_eq!((s.hidden, s.epochs, s.batch), (vec![128, 64], 100, 64)),
        _ => unreachable!(),
    }
    match AttackerModelSpec::default_for(AttackerKind::Mlp, AttackTask::Lia) {
        AttackerModelSpec::Mlp(s) => assert_eq!(s.hidden, vec![64, 32]),
        _ => unreachable!(),
    }
}
