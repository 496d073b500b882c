use super::*;
use crate::numerics::{central_diff_gradient, max_relative_error, Tape};
use crate::representation::{
    fetch_episode_features, register_sources, Phase, RegistryConfig, SeededProvider, SourceSpec,
};

fn toy_registry() -> SourceRegistry {
    register_sources(RegistryConfig {
        scene: vec![SourceSpec::new("s0", 3), SourceSpec::new("s1", 5)],
        aligned: vec![SourceSpec::new("a0", 4)],
        narrative: vec![SourceSpec::new("n0", 3)],
        instruction: vec![SourceSpec::new("i0", 4), SourceSpec::new("i1", 3)],
    })
    .unwrap()
}

fn toy_config() -> DecoderConfig {
    DecoderConfig {
        d_model: 4,
        d_k: 4,
        d_v: 4,
        n_heads: 1,
        mlp_hidden: vec![5],
        ..DecoderConfig::default()
    }
}

fn toy_features(seed: u64) -> EpisodeFeatures {
    let reg = toy_registry();
    let provider = SeededProvider::new(seed, reg.clone());
    fetch_episode_features(&provider, &reg, "ep", &Phase::Before, &Phase::After).unwrap()
}

/// Brute-force attention oracle: an independent path through plain loops,
/// including its own softmax.
fn attention_oracle(x_a: &Matrix, x_b: &Matrix, w: &AttentionBlockParams, d_k: usize) -> Matrix {
    let project = |x: &Matrix, w: &Matrix| -> Vec<Vec<f64>> {
        (0..x.rows())
            .map(|i| {
                (0..w.cols())
                    .map(|j| (0..x.cols()).map(|k| x.at(i, k) * w.at(k, j)).sum())
                    .collect()
            })
            .collect()
    };
    let q = project(x_a, &w.w_q);
    let k = project(x_b, &w.w_k);
    let v = project(x_b, &w.w_v);
    let scale = 1.0 / (d_k as f64).sqrt();

    let mut out = Matrix::zeros(x_a.rows(), w.w_v.cols());
    for i in 0..q.len() {
        let logits: Vec<f64> = k
            .iter()
            .map(|krow| q[i].iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (kv_idx, weight) in exps.iter().map(|e| e / total).enumerate() {
            for c in 0..out.cols() {
                out.set(i, c, out.at(i, c) + weight * v[kv_idx][c]);
            }
        }
    }
    out
}

fn run_cross_attention(
    x_a: &Matrix,
    x_b: &Matrix,
    w: &AttentionBlockParams,
    cfg: &DecoderConfig,
) -> Matrix {
    let mut tape = Tape::new();
    let a = tape.leaf(x_a.clone());
    let b = tape.leaf(x_b.clone());
    let staged = StagedAttention {
        w_q: tape.leaf(w.w_q.clone()),
        w_k: tape.leaf(w.w_k.clone()),
        w_v: tape.leaf(w.w_v.clone()),
    };
    let out = cross_attention(&mut tape, a, b, &staged, cfg).unwrap();
    tape.value(out).clone()
}

fn random_attention_weights(d_model: usize, d_k: usize, d_v: usize, seed: u64) -> AttentionBlockParams {
    let mut rng = SplitMix64::new(seed);
    let mut mk = |r: usize, c: usize| {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.next_symmetric(1.0)).collect()).unwrap()
    };
    AttentionBlockParams {
        w_q: mk(d_model, d_k),
        w_k: mk(d_model, d_k),
        w_v: mk(d_model, d_v),
    }
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = SplitMix64::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.next_symmetric(1.0)).collect())
        .unwrap()
}

#[test]
fn single_key_collapses_to_its_value() {
    let cfg = toy_config();
    let w = random_attention_weights(4, 4, 4, 1);
    let x_a = random_matrix(3, 4, 2);
    let x_b = random_matrix(1, 4, 3);
    let out = run_cross_attention(&x_a, &x_b, &w, &cfg);

    let expected = crate::numerics::matmul(&x_b, &w.w_v).unwrap();
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            assert!((out.at(r, c) - expected.at(0, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn identity_weights_2x2_matches_oracle() {
    // x_a = x_b = I, all weights I, d_k = 2: logits are I/sqrt(2).
    let cfg = DecoderConfig {
        d_model: 2,
        d_k: 2,
        d_v: 2,
        mlp_hidden: vec![],
        ..DecoderConfig::default()
    };
    let w = AttentionBlockParams {
        w_q: Matrix::identity(2),
        w_k: Matrix::identity(2),
        w_v: Matrix::identity(2),
    };
    let x = Matrix::identity(2);
    let out = run_cross_attention(&x, &x, &w, &cfg);
    let oracle = attention_oracle(&x, &x, &w, 2);
    for r in 0..2 {
        for c in 0..2 {
            assert!((out.at(r, c) - oracle.at(r, c)).abs() < 1e-14);
        }
    }
    // Sanity on the oracle itself: diagonal weight e^(1/sqrt(2)) vs e^0.
    let hot = (1.0f64 / 2.0f64.sqrt()).exp();
    let diag = hot / (hot + 1.0);
    assert!((out.at(0, 0) - diag).abs() < 1e-12);
}

#[test]
fn identical_key_rows_ignore_queries() {
    let cfg = toy_config();
    let w = random_attention_weights(4, 4, 4, 7);
    let shared = random_matrix(1, 4, 8);
    let x_b = crate::numerics::concat_rows(&[&shared, &shared, &shared]).unwrap();
    let x_a = random_matrix(5, 4, 9);
    let out = run_cross_attention(&x_a, &x_b, &w, &cfg);
    let expected = crate::numerics::matmul(&shared, &w.w_v).unwrap();
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            assert!((out.at(r, c) - expected.at(0, c)).abs() < 1e-10);
        }
    }
}

#[test]
fn oracle_agreement_on_random_cases() {
    let cfg = toy_config();
    for seed in 0..25u64 {
        let w = random_attention_weights(4, 4, 4, 100 + seed);
        let x_a = random_matrix(1 + (seed % 4) as usize, 4, 200 + seed);
        let x_b = random_matrix(1 + (seed % 3) as usize, 4, 300 + seed);
        let out = run_cross_attention(&x_a, &x_b, &w, &cfg);
        let oracle = attention_oracle(&x_a, &x_b, &w, 4);
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                assert!(
                    (out.at(r, c) - oracle.at(r, c)).abs() < 1e-10,
                    "seed {seed} at ({r},{c})"
                );
            }
        }
    }
}

#[test]
fn query_permutation_is_equivariant() {
    let cfg = toy_config();
    let w = random_attention_weights(4, 4, 4, 11);
    let x_a = random_matrix(4, 4, 12);
    let x_b = random_matrix(3, 4, 13);
    let out = run_cross_attention(&x_a, &x_b, &w, &cfg);

    // Reverse the query rows.
    let perm: Vec<Vec<f64>> = (0..x_a.rows()).rev().map(|r| x_a.row(r).to_vec()).collect();
    let x_a_perm = Matrix::from_rows(&perm).unwrap();
    let out_perm = run_cross_attention(&x_a_perm, &x_b, &w, &cfg);
    for r in 0..out.rows() {
        let want = out.row(out.rows() - 1 - r);
        for (c, &v) in out_perm.row(r).iter().enumerate() {
            assert_eq!(v.to_bits(), want[c].to_bits());
        }
    }
}

#[test]
fn key_permutation_leaves_output_unchanged() {
    let cfg = toy_config();
    let w = random_attention_weights(4, 4, 4, 21);
    let x_a = random_matrix(3, 4, 22);
    let x_b = random_matrix(4, 4, 23);
    let out = run_cross_attention(&x_a, &x_b, &w, &cfg);

    let perm: Vec<Vec<f64>> = [2usize, 0, 3, 1].iter().map(|&r| x_b.row(r).to_vec()).collect();
    let x_b_perm = Matrix::from_rows(&perm).unwrap();
    let out_perm = run_cross_attention(&x_a, &x_b_perm, &w, &cfg);
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            assert!((out.at(r, c) - out_perm.at(r, c)).abs() < 1e-10);
        }
    }
}

#[test]
fn duplicating_keys_renormalizes() {
    let cfg = toy_config();
    let w = random_attention_weights(4, 4, 4, 31);
    let x_a = random_matrix(2, 4, 32);
    let x_b = random_matrix(3, 4, 33);
    let doubled = crate::numerics::concat_rows(&[&x_b, &x_b]).unwrap();
    let out = run_cross_attention(&x_a, &x_b, &w, &cfg);
    let out_doubled = run_cross_attention(&x_a, &doubled, &w, &cfg);
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            assert!((out.at(r, c) - out_doubled.at(r, c)).abs() < 1e-10);
        }
    }
}

#[test]
fn empty_keys_rejected() {
    let cfg = toy_config();
    let w = random_attention_weights(4, 4, 4, 41);
    let mut tape = Tape::new();
    let a = tape.leaf(random_matrix(2, 4, 42));
    let b = tape.leaf(Matrix::zeros(0, 4));
    let staged = StagedAttention {
        w_q: tape.leaf(w.w_q.clone()),
        w_k: tape.leaf(w.w_k.clone()),
        w_v: tape.leaf(w.w_v.clone()),
    };
    let err = cross_attention(&mut tape, a, b, &staged, &cfg).unwrap_err();
    assert!(matches!(err, Error::EmptyKeys(_)));
}

#[test]
fn diff_with_identical_images_is_self_attention() {
    // CrossAttn(h, h) is definitionally self-attention over h; check the
    // pipeline produces bitwise-equal matrices for both phrasings.
    let reg = toy_registry();
    let cfg = toy_config();
    let params = DecoderParams::init(&reg, &cfg, 5).unwrap();
    let provider = SeededProvider::new(17, reg.clone());
    let mut features =
        fetch_episode_features(&provider, &reg, "ep", &Phase::Before, &Phase::Before).unwrap();
    // Same phase for both sides: before == after.
    features.scene_after = features.scene_before.clone();
    features.aligned_after = features.aligned_before.clone();
    features.narrative_after = features.narrative_before.clone();

    let out = forward(&features, &params, AttentionMode::Cross).unwrap();

    let mut tape = Tape::new();
    let staged = params.stage(&mut tape);
    let proj = |id: &str| staged.projection(id);
    let rep = assemble_lambda(
        &mut tape,
        &proj,
        &features.scene_before,
        &features.aligned_before,
        &features.narrative_before,
    )
    .unwrap();
    let dw = staged.diff_attn();
    let self_attn = cross_attention(&mut tape, rep.tokens, rep.tokens, &dw, &cfg).unwrap();
    let expected = tape.value(self_attn);
    assert_eq!(&out.h_diff, expected);
}

#[test]
fn default_registry_yields_six_diff_rows() {
    let reg = SourceRegistry::standard();
    let cfg = DecoderConfig {
        d_model: 8,
        d_k: 8,
        d_v: 8,
        mlp_hidden: vec![4],
        ..DecoderConfig::default()
    };
    let params = DecoderParams::init(&reg, &cfg, 3).unwrap();
    let provider = SeededProvider::new(29, reg.clone());
    let features =
        fetch_episode_features(&provider, &reg, "ep", &Phase::Before, &Phase::After).unwrap();
    let out = forward(&features, &params, AttentionMode::Cross).unwrap();
    // 3 scene + 1 aligned + 2 narrative tokens.
    assert_eq!(out.h_diff.rows(), 6);
    assert_eq!(out.h_align.rows(), 6);
}

#[test]
fn mismatched_token_structure_rejected() {
    let reg = toy_registry();
    let cfg = toy_config();
    let params = DecoderParams::init(&reg, &cfg, 5).unwrap();
    let provider = SeededProvider::new(17, reg.clone());
    let features =
        fetch_episode_features(&provider, &reg, "ep", &Phase::Before, &Phase::After).unwrap();

    let mut tape = Tape::new();
    let staged = params.stage(&mut tape);
    let proj = |id: &str| staged.projection(id);
    let before = assemble_lambda(
        &mut tape,
        &proj,
        &features.scene_before,
        &features.aligned_before,
        &features.narrative_before,
    )
    .unwrap();
    // After representation missing its aligned group: different structure.
    let after = assemble_lambda(&mut tape, &proj, &features.scene_after, &[], &features.narrative_after)
        .unwrap();
    let dw = staged.diff_attn();
    let err = compute_diff(&mut tape, &after, &before, &dw, &cfg, AttentionMode::Cross).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn align_rejects_empty_language() {
    let cfg = toy_config();
    let mut tape = Tape::new();
    let h_diff = tape.leaf(random_matrix(2, 4, 50));
    let language = LanguageFeature {
        tokens: tape.leaf(Matrix::zeros(0, 4)),
        token_count: 0,
    };
    let w = random_attention_weights(4, 4, 4, 51);
    let staged = StagedAttention {
        w_q: tape.leaf(w.w_q),
        w_k: tape.leaf(w.w_k),
        w_v: tape.leaf(w.w_v),
    };
    let err = compute_align(&mut tape, h_diff, &language, &staged, &cfg, AttentionMode::Cross)
        .unwrap_err();
    assert!(matches!(err, Error::EmptyKeys(_)));
}

#[test]
fn zero_head_gives_even_odds() {
    let reg = toy_registry();
    let cfg = toy_config();
    let mut params = DecoderParams::init(&reg, &cfg, 5).unwrap();
    for (w, b) in &mut params.mlp {
        *w = Matrix::zeros(w.rows(), w.cols());
        *b = Matrix::zeros(b.rows(), b.cols());
    }
    let features = toy_features(60);
    let out = forward(&features, &params, AttentionMode::Cross).unwrap();
    assert_eq!(out.logits, [0.0, 0.0]);
    assert_eq!(out.p_success, 0.5);
}

#[test]
fn softmax_of_ln3_logit_is_three_quarters() {
    // p = e^(ln 3) / (1 + e^(ln 3)) = 0.75 for logits [0, ln 3].
    let logits = Matrix::row_vector(&[0.0, 3.0f64.ln()]);
    let p = softmax_rows(&logits).unwrap();
    assert!((p.at(0, 1) - 0.75).abs() < 1e-12);
}

#[test]
fn p_success_is_softmax_of_logits_in_unit_range() {
    for seed in 0..10 {
        let reg = toy_registry();
        let cfg = toy_config();
        let params = DecoderParams::init(&reg, &cfg, seed).unwrap();
        let out = forward(&toy_features(seed + 100), &params, AttentionMode::Cross).unwrap();
        assert!((0.0..=1.0).contains(&out.p_success));
        let manual =
            softmax_rows(&Matrix::row_vector(&[out.logits[0], out.logits[1]])).unwrap();
        assert_eq!(out.p_success.to_bits(), manual.at(0, 1).to_bits());
    }
}

#[test]
fn self_mode_differs_from_cross_mode() {
    let reg = toy_registry();
    let cfg = toy_config();
    let params = DecoderParams::init(&reg, &cfg, 9).unwrap();
    let features = toy_features(70);
    let cross = forward(&features, &params, AttentionMode::Cross).unwrap();
    let selfa = forward(&features, &params, AttentionMode::SelfAttn).unwrap();
    assert!((cross.p_success - selfa.p_success).abs() > 1e-9);
    // Shapes stay interchangeable across modes.
    assert_eq!(cross.h_diff.shape(), selfa.h_diff.shape());
    assert_eq!(cross.h_align.shape(), selfa.h_align.shape());
}

#[test]
fn forward_is_bitwise_deterministic() {
    let reg = toy_registry();
    let cfg = toy_config();
    let params = DecoderParams::init(&reg, &cfg, 13).unwrap();
    let features = toy_features(80);
    let a = forward(&features, &params, AttentionMode::Cross).unwrap();
    let b = forward(&features, &params, AttentionMode::Cross).unwrap();
    assert_eq!(a.p_success.to_bits(), b.p_success.to_bits());
    assert_eq!(a.h_align, b.h_align);
}

/// Loss as a function of the flat parameter vector, for finite differences.
fn loss_of(params: &DecoderParams, features: &EpisodeFeatures, mode: AttentionMode, flat: &[f64]) -> f64 {
    let mut p = params.clone();
    p.unflatten_into(flat).unwrap();
    let mut tape = Tape::new();
    let staged = p.stage(&mut tape);
    let graph = forward_on(&mut tape, &staged, &p, features, mode).unwrap();
    let loss = tape.softmax_cross_entropy(graph.logits, 1).unwrap();
    tape.value(loss).at(0, 0)
}

fn analytic_flat_grads(
    params: &DecoderParams,
    features: &EpisodeFeatures,
    mode: AttentionMode,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let staged = params.stage(&mut tape);
    let graph = forward_on(&mut tape, &staged, params, features, mode).unwrap();
    let loss = tape.softmax_cross_entropy(graph.logits, 1).unwrap();
    let grads = tape.backward(loss).unwrap();
    flat_gradients(params, &staged, &grads)
}

#[test]
fn full_decoder_gradcheck_cross_mode() {
    let reg = toy_registry();
    let cfg = toy_config();
    let params = DecoderParams::init(&reg, &cfg, 77).unwrap();
    let features = toy_features(78);
    let flat = params.flatten();
    let analytic = analytic_flat_grads(&params, &features, AttentionMode::Cross);
    let f = |xs: &[f64]| loss_of(&params, &features, AttentionMode::Cross, xs);
    let numeric = central_diff_gradient(&f, &flat, 1e-5).unwrap();
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn full_decoder_gradcheck_self_mode_with_flags() {
    let reg = toy_registry();
    let cfg = DecoderConfig {
        residual: true,
        layer_norm: true,
        ..toy_config()
    };
    let params = DecoderParams::init(&reg, &cfg, 79).unwrap();
    let features = toy_features(80);
    let flat = params.flatten();
    let analytic = analytic_flat_grads(&params, &features, AttentionMode::SelfAttn);
    let f = |xs: &[f64]| loss_of(&params, &features, AttentionMode::SelfAttn, xs);
    let numeric = central_diff_gradient(&f, &flat, 1e-5).unwrap();
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn multi_head_gradcheck_and_shapes() {
    let reg = toy_registry();
    let cfg = DecoderConfig {
        n_heads: 2,
        ..toy_config()
    };
    let params = DecoderParams::init(&reg, &cfg, 81).unwrap();
    let features = toy_features(82);
    let out = forward(&features, &params, AttentionMode::Cross).unwrap();
    assert_eq!(out.h_align.cols(), cfg.d_v);

    let flat = params.flatten();
    let analytic = analytic_flat_grads(&params, &features, AttentionMode::Cross);
    let f = |xs: &[f64]| loss_of(&params, &features, AttentionMode::Cross, xs);
    let numeric = central_diff_gradient(&f, &flat, 1e-5).unwrap();
    assert!(max_relative_error(&analytic, &numeric) < 1e-4);
}

#[test]
fn count_params_closed_forms() {
    // No projections, no MLP: two attention blocks only.
    let cfg = toy_config();
    let some = DecoderParams::init(&toy_registry(), &cfg, 1).unwrap();
    let bare = DecoderParams {
        projections: BTreeMap::new(),
        mlp: Vec::new(),
        ..some.clone()
    };
    let d = cfg.d_model;
    assert_eq!(bare.count_params().total, 2 * (d * cfg.d_k * 2 + d * cfg.d_v));

    // Adding one hidden unit to layer i costs in_dim + 1 + out_dim.
    let wider_cfg = DecoderConfig {
        mlp_hidden: vec![6],
        ..toy_config()
    };
    let wider = DecoderParams::init(&toy_registry(), &wider_cfg, 1).unwrap();
    let in_dim = cfg.d_v;
    let out_dim = 2;
    assert_eq!(
        wider.count_params().total - some.count_params().total,
        in_dim + 1 + out_dim
    );
}

#[test]
fn count_params_breakdown_sums_to_total() {
    let params = DecoderParams::init(&toy_registry(), &toy_config(), 4).unwrap();
    let report = params.count_params();
    let sum: usize =
        report.projections.values().sum::<usize>() + report.diff_attn + report.align_attn + report.mlp;
    assert_eq!(report.total, sum);
    assert_eq!(report.total, params.flatten().len());
}

#[test]
fn checkpoint_round_trip_is_stable() {
    let params = DecoderParams::init(&toy_registry(), &toy_config(), 15).unwrap();
    let digest = 0xABCD_EF01_2345_6789;
    let bytes = checkpoint_bytes(&params, digest);
    let loaded = params_from_bytes(&bytes, &params.config, digest).unwrap();
    // Second serialization is byte-identical: f32 narrowing is idempotent.
    assert_eq!(checkpoint_bytes(&loaded, digest), bytes);
}

#[test]
fn checkpoint_rejects_wrong_digest() {
    let params = DecoderParams::init(&toy_registry(), &toy_config(), 15).unwrap();
    let bytes = checkpoint_bytes(&params, 1);
    let err = params_from_bytes(&bytes, &params.config, 2).unwrap_err().to_string();
    assert!(err.contains("digest"), "{err}");
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lrck");
    let params = DecoderParams::init(&toy_registry(), &toy_config(), 23).unwrap();
    save_checkpoint(&path, &params, 7).unwrap();
    let loaded = load_checkpoint(&path, &params.config, 7).unwrap();
    let features = toy_features(90);
    let a = forward(&features, &params, AttentionMode::Cross).unwrap();
    let b = forward(&features, &loaded, AttentionMode::Cross).unwrap();
    // f32 storage narrows values; predictions stay close.
    assert!((a.p_success - b.p_success).abs() < 1e-5);
    // And the loaded params round-trip bitwise.
    let again = load_checkpoint(&path, &params.config, 7).unwrap();
    assert_eq!(loaded, again);
}

#[test]
fn residual_needs_matching_dims() {
    let cfg = DecoderConfig {
        residual: true,
        d_v: 8,
        d_model: 4,
        d_k: 4,
        ..DecoderConfig::default()
    };
    assert!(cfg.validate().is_err());
}
