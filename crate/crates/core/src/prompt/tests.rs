use super::*;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::graphdata::{generate_sbm, sample_k_shot, split_target_shadow, KSpec, SbmSpec};
use crate::pretrain::{pretrain_run, PretrainConfig, PretrainMethod};

fn separable() -> Graph {
    let spec = SbmSpec {
        n: 200,
        num_classes: 2,
        p_in: 0.08,
        p_out: 0.005,
        feature_dim: 8,
        feature_signal: 1.5,
        sensitive_correlation: 0.9,
    };
    generate_sbm(&spec, 1).unwrap()
}

fn frozen_encoder(g: &Graph, hidden: usize, epochs: usize) -> EncoderParams {
    let cfg = PretrainConfig {
        method: PretrainMethod::GraphCl,
        encoder: EncoderConfig {
            hidden,
            ..EncoderConfig::default()
        },
        epochs,
        seed: 3,
        ..PretrainConfig::default()
    };
    pretrain_run(g, &cfg).unwrap().params
}

fn five_shot(g: &Graph) -> KShot {
    let split = split_target_shadow(g, 0.5, 5, 2).unwrap();
    sample_k_shot(g, &split, KSpec::Count(5), 2).unwrap()
}

fn quick_config(tokens: usize) -> PromptConfig {
    PromptConfig {
        epochs: 20,
        tokens,
        ..PromptConfig::default()
    }
}

#[test]
fn frozen_contract_and_row_stochastic_posteriors() {
    let g = separable();
    let enc = frozen_encoder(&g, 16, 2);
    let digest = enc.digest();
    let ks = five_shot(&g);
    for kind in PromptKind::ALL {
        let state = prompt_tune(&g, &enc, &ks, kind, &quick_config(3), 7).unwrap();
        assert_eq!(enc.digest(), digest, "{kind}");
        assert_eq!(state.encoder().digest(), digest, "{kind}");
        assert_eq!(state.loss_trace().len(), 20);
        let post = posteriors(&state, &g).unwrap();
        assert_eq!(post.matrix.shape(), (200, 2));
        for row in post.matrix.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{kind}");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
        let e = capability_extract(&state, &g, CapabilityKind::Embedding).unwrap();
        assert_eq!(e.matrix.shape(), (200, 16));
        assert!(e.matrix.is_finite());
        // the head applied to the released representations gives the posteriors
        assert!(state.classify(&e.matrix).unwrap().max_abs_diff(&post.matrix) < 1e-12, "{kind}");
    }
}

#[test]
fn zero_epochs_returns_initial_state() {
    let g = separable();
    let enc = frozen_encoder(&g, 8, 0);
    let cfg = PromptConfig { epochs: 0, ..PromptConfig::default() };
    let state = prompt_tune(&g, &enc, &five_shot(&g), PromptKind::Gpf, &cfg, 4).unwrap();
    let init = PromptState::init(PromptKind::Gpf, cfg, &enc, 2, 4).unwrap();
    for (name, t) in init.params().iter() {
        assert_eq!(state.params().get(name).unwrap(), t);
    }
    assert!(state.loss_trace().is_empty());
}

#[test]
fn unfrozen_encoder_rejected() {
    let g = separable();
    let enc = EncoderParams::init(EncoderConfig::default(), 8, 0).unwrap();
    assert!(matches!(
        prompt_tune(&g, &enc, &five_shot(&g), PromptKind::Gpf, &PromptConfig::default(), 0),
        Err(PromptError::EncoderNotFrozen)
    ));
}

#[test]
fn gpf_five_shot_fits_training_nodes() {
    let g = separable();
    let enc = frozen_encoder(&g, 128, 20);
    let ks = five_shot(&g);
    let state = prompt_tune(&g, &enc, &ks, PromptKind::Gpf, &PromptConfig::default(), 5).unwrap();
    let post = posteriors(&state, &g).unwrap().matrix;
    let correct = ks
        .labeled
        .iter()
        .filter(|&&v| {
            let row = post.row(v);
            let pred = if row[1] > row[0] { 1 } else { 0 };
            pred == g.labels()[v]
        })
        .count();
    let acc = correct as f64 / ks.labeled.len() as f64;
    assert!(acc >= 0.9, "training accuracy {acc}");
}

#[test]
fn default_embedding_width() {
    let g = separable();
    let enc = frozen_encoder(&g, 128, 0);
    let state = PromptState::init(PromptKind::NoPrompt, PromptConfig::default(), &enc, 2, 0).unwrap();
    let e = capability_extract(&state, &g, CapabilityKind::Embedding).unwrap();
    assert_eq!(e.matrix.shape(), (200, 128));
}

#[test]
fn prompt_capability_only_for_gpf_plus() {
    let g = separable();
    let enc = frozen_encoder(&g, 8, 0);
    let gpf = PromptState::init(PromptKind::Gpf, PromptConfig::default(), &enc, 2, 0).unwrap();
    assert!(matches!(
        capability_extract(&gpf, &g, CapabilityKind::Prompt),
        Err(PromptError::Unsupported { .. })
    ));
    let plus = PromptState::init(PromptKind::GpfPlus, quick_config(1), &enc, 2, 0).unwrap();
    let p = capability_extract(&plus, &g, CapabilityKind::Prompt).unwrap();
    assert_eq!(p.matrix.shape(), (200, 8));
    assert!(p.matrix.iter_rows().all(|r| r == p.matrix.row(0)));
}

#[test]
fn zero_head_gives_uniform_posteriors() {
    let g = separable();
    let enc = frozen_encoder(&g, 8, 0);
    let mut state = PromptState::init(PromptKind::NoPrompt, PromptConfig::default(), &enc, 2, 0).unwrap();
    state.set_param("head.w", Tensor2::zeros(8, 2)).unwrap();
    let post = posteriors(&state, &g).unwrap().matrix;
    assert!(post.as_slice().iter().all(|&p| p == 0.5));
}

#[test]
fn hand_set_head_single_node() {
    let g = separable();
    let enc = frozen_encoder(&g, 2, 0);
    let mut state = PromptState::init(PromptKind::NoPrompt, PromptConfig::default(), &enc, 2, 0).unwrap();
    state.set_param("head.w", Tensor2::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap()).unwrap();
    state.set_param("head.b", Tensor2::row_vector(&[0.25, 0.0])).unwrap();
    let post = state.classify(&Tensor2::row_vector(&[2.0, 1.0])).unwrap();
    // logits: (2 + 0.5 + 0.25, -2 + 2) = (2.75, 0)
    let p0 = 2.75f64.exp() / (2.75f64.exp() + 1.0);
    assert!((post.get(0, 0) - p0).abs() < 1e-12);
    assert!((post.get(0, 1) - (1.0 - p0)).abs() < 1e-12);
}

#[test]
fn gpf_plus_single_token_reproduces_gpf() {
    let g = separable();
    let enc = frozen_encoder(&g, 16, 2);
    let ks = five_shot(&g);
    let cfg = PromptConfig {
        epochs: 30,
        tokens: 1,
        ..PromptConfig::default()
    };
    let gpf = prompt_tune(&g, &enc, &ks, PromptKind::Gpf, &cfg, 9).unwrap();
    let plus = prompt_tune(&g, &enc, &ks, PromptKind::GpfPlus, &cfg, 9).unwrap();
    let init = PromptState::init(PromptKind::GpfPlus, cfg.clone(), &enc, 2, 9).unwrap();
    let p0 = PromptState::init(PromptKind::Gpf, cfg, &enc, 2, 9).unwrap();
    assert_eq!(init.params().get("gpfplus.tokens"), p0.params().get("gpf.p"));
    let a = posteriors(&gpf, &g).unwrap().matrix;
    let b = posteriors(&plus, &g).unwrap().matrix;
    assert!(a.max_abs_diff(&b) <= 1e-6, "{}", a.max_abs_diff(&b));
}

#[test]
fn gpf_plus_prompt_release_round_trip() {
    let g = separable();
    let enc = frozen_encoder(&g, 8, 0);
    let state = PromptState::init(PromptKind::GpfPlus, quick_config(4), &enc, 2, 1).unwrap();
    let p = state.prompts(&g).unwrap();
    let direct = state.classify_with_prompts(&g, &p).unwrap();
    assert!(direct.max_abs_diff(&posteriors(&state, &g).unwrap().matrix) < 1e-12);
}
