mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splitrank::nncore::{
    cosine, embed_pool, grad_check, grad_check_with, train, Activation, CrossKind, EmbeddingTable,
    FieldTokens, LossKind, Model, Pooling, TrainConfig,
};
use splitrank::Error;

#[test]
fn forward_arm_matches_loop_oracle() {
    let model = random_model(42, Activation::Tanh, CrossKind::Cosine);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        for query_side in [true, false] {
            let arm = if query_side { &model.spec.query_arm } else { &model.spec.member_arm };
            let toks = random_tokens(&mut rng, arm);
            let got = if query_side { model.query_vector(&toks) } else { model.member_vector(&toks) }.unwrap();
            let want = oracle_arm(&model, query_side, &toks);
            for (g, w) in got.iter().zip(&want) {
                assert!((*g as f64 - w).abs() <= 1e-6, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn score_pair_matches_oracle_for_every_cross() {
    for act in [Activation::Tanh, Activation::Relu] {
        for cross in [CrossKind::Cosine, CrossKind::DenseCross] {
            let model = random_model(9, act, cross);
            let mut rng = ChaCha8Rng::seed_from_u64(100);
            for _ in 0..100 {
                let q = random_tokens(&mut rng, &model.spec.query_arm);
                let m = random_tokens(&mut rng, &model.spec.member_arm);
                let got = model.score_pair(&q, &m).unwrap() as f64;
                let want = oracle_score(&model, &q, &m);
                assert!((got - want).abs() <= 1e-6, "{act:?}/{cross:?}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn score_pair_is_deterministic() {
    let model = random_model(3, Activation::Relu, CrossKind::DenseCross);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = random_tokens(&mut rng, &model.spec.query_arm);
    let m = random_tokens(&mut rng, &model.spec.member_arm);
    let a = model.score_pair(&q, &m).unwrap();
    let b = model.score_pair(&q, &m).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn identical_arm_outputs_score_one() {
    // Same weights in both arms (member arm reshaped to one layer) and the
    // same tokens give identical vectors.
    let mut model = random_model(5, Activation::Tanh, CrossKind::Cosine);
    model.spec.member_arm = model.spec.query_arm.clone();
    model.weights.member = model.weights.query.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_tokens(&mut rng, &model.spec.query_arm);
    let s = model.score_pair(&t, &t).unwrap();
    assert!((s - 1.0).abs() < 1e-6, "{s}");
}

#[test]
fn permuting_fields_and_weights_together_preserves_scores() {
    let model = random_model(11, Activation::Tanh, CrossKind::Cosine);
    let mut permuted = model.clone();
    // Swap fields 0 and 2 of the query arm along with the matching tables and
    // the input columns of the first dense layer.
    let arm = &mut permuted.spec.query_arm;
    arm.fields.swap(0, 2);
    permuted.weights.query.tables.swap(0, 2);
    let (d0, d1, d2) = (6usize, 4usize, 5usize);
    let layer = &mut permuted.weights.query.layers[0];
    let old = model.weights.query.layers[0].clone();
    for i in 0..layer.out_dim {
        let row = &old.weight[i * old.in_dim..(i + 1) * old.in_dim];
        let mut new_row = Vec::with_capacity(old.in_dim);
        new_row.extend_from_slice(&row[d0 + d1..d0 + d1 + d2]);
        new_row.extend_from_slice(&row[d0..d0 + d1]);
        new_row.extend_from_slice(&row[..d0]);
        layer.weight[i * old.in_dim..(i + 1) * old.in_dim].copy_from_slice(&new_row);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut changed_without_weights = false;
    for _ in 0..20 {
        let q = random_tokens(&mut rng, &model.spec.query_arm);
        let m = random_tokens(&mut rng, &model.spec.member_arm);
        let a = model.score_pair(&q, &m).unwrap();
        let b = permuted.score_pair(&q, &m).unwrap();
        assert!((a - b).abs() < 1e-6);

        let mut spec_only = model.clone();
        spec_only.spec.query_arm.fields.swap(0, 2);
        spec_only.weights.query.tables.swap(0, 2);
        if let Ok(c) = spec_only.score_pair(&q, &m) {
            changed_without_weights |= (a - c).abs() > 1e-6;
        }
    }
    assert!(changed_without_weights, "reordering fields alone should change outputs");
}

#[test]
fn grad_check_passes_for_every_activation_and_cross() {
    for act in [Activation::Tanh, Activation::Relu] {
        for cross in [CrossKind::Cosine, CrossKind::DenseCross] {
            let model = random_model(21, act, cross);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for seed in 0..3 {
                let ex = random_example(&mut rng, &model.spec);
                let err = grad_check_with(&model, &ex, 1e-4, LossKind::Pairwise, seed).unwrap();
                assert!(err <= 1e-3, "{act:?}/{cross:?}: rel err {err}");
            }
            let ex = random_example(&mut rng, &model.spec);
            let err = grad_check_with(&model, &ex, 1e-4, LossKind::Pointwise, 1).unwrap();
            assert!(err <= 1e-3, "pointwise {act:?}/{cross:?}: rel err {err}");
        }
    }
}

#[test]
fn grad_check_zero_gradient_model_reports_zero() {
    // All-zero relu weights: every output is 0, cosine is 0 and no gradient
    // flows, so both analytic and numeric gradients vanish.
    let mut model = random_model(1, Activation::Relu, CrossKind::Cosine);
    for l in model.weights.query.layers.iter_mut().chain(model.weights.member.layers.iter_mut()) {
        l.weight.iter_mut().for_each(|v| *v = 0.0);
        l.bias.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ex = random_example(&mut rng, &model.spec);
    assert_eq!(grad_check(&model, &ex, 1e-4).unwrap(), 0.0);
}

#[test]
fn grad_check_rejects_bad_epsilon() {
    let model = random_model(1, Activation::Tanh, CrossKind::Cosine);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ex = random_example(&mut rng, &model.spec);
    assert!(matches!(grad_check(&model, &ex, 0.1), Err(Error::Input(_))));
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let model = random_model(2, Activation::Tanh, CrossKind::Cosine);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data: Vec<_> = (0..10).map(|_| random_example(&mut rng, &model.spec)).collect();
    let cfg = TrainConfig { lr: 0.0, epochs: 3, ..TrainConfig::default() };
    let (w, report) = train(&model, &data, &cfg).unwrap();
    assert_eq!(w, model.weights);
    assert_eq!(report.epoch_loss.len(), 3);
}

#[test]
fn single_example_overfits_past_margin() {
    for cross in [CrossKind::Cosine, CrossKind::DenseCross] {
        let model = random_model(6, Activation::Tanh, cross);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ex = random_example(&mut rng, &model.spec);
        let cfg = TrainConfig { lr: 0.1, epochs: 300, batch_size: 1, margin: 0.5, ..TrainConfig::default() };
        let (w, report) = train(&model, std::slice::from_ref(&ex), &cfg).unwrap();
        let trained = Model { weights: w, ..model.clone() };
        let gap = trained.score_pair(&ex.query, &ex.positive).unwrap()
            - trained.score_pair(&ex.query, &ex.negative).unwrap();
        assert!(gap > cfg.margin, "{cross:?}: gap {gap}");
        assert!(report.epoch_loss.last() < report.epoch_loss.first());
    }
}

#[test]
fn fixed_seed_training_is_bit_reproducible() {
    let model = random_model(2, Activation::Relu, CrossKind::DenseCross);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<_> = (0..40).map(|_| random_example(&mut rng, &model.spec)).collect();
    let cfg = TrainConfig { epochs: 4, batch_size: 8, ..TrainConfig::default() };
    let (a, ra) = train(&model, &data, &cfg).unwrap();
    let (b, rb) = train(&model, &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.epoch_loss, rb.epoch_loss);
}

#[test]
fn training_rejects_empty_data_and_same_uid_pairs() {
    let model = random_model(2, Activation::Tanh, CrossKind::Cosine);
    assert!(train(&model, &[], &TrainConfig::default()).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ex = random_example(&mut rng, &model.spec);
    ex.negative_uid = ex.positive_uid;
    assert!(train(&model, &[ex], &TrainConfig::default()).is_err());
}

#[test]
fn model_bundle_round_trip_is_bit_exact() {
    let model = random_model(13, Activation::Relu, CrossKind::DenseCross);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), "v-test").unwrap();
    let (back, label) = Model::load(dir.path()).unwrap();
    assert_eq!(label, "v-test");
    assert_eq!(back, model);
    let bytes_a = std::fs::read(dir.path().join("weights.bin")).unwrap();
    back.save(dir.path(), "v-test").unwrap();
    assert_eq!(bytes_a, std::fs::read(dir.path().join("weights.bin")).unwrap());
}

#[test]
fn truncated_weights_name_the_tensor() {
    let model = random_model(13, Activation::Tanh, CrossKind::Cosine);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), "x").unwrap();
    let path = dir.path().join("weights.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    match Model::load(dir.path()) {
        Err(Error::Format { message, .. }) => assert!(message.contains("member.dense.1.bias"), "{message}"),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn manifest_shape_mismatch_is_format_error() {
    let model = random_model(13, Activation::Tanh, CrossKind::Cosine);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path(), "x").unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"query_arm\"", "\"queryarm\"", 1)).unwrap();
    assert!(matches!(Model::load(dir.path()), Err(Error::Format { .. })));
}

fn arb_table() -> impl Strategy<Value = EmbeddingTable<f32>> {
    (1usize..6, 1usize..5).prop_flat_map(|(vocab, dim)| {
        prop::collection::vec(-10.0f32..10.0, vocab * dim)
            .prop_map(move |data| EmbeddingTable { vocab, dim, data })
    })
}

proptest! {
    #[test]
    fn sum_pool_is_count_times_mean_pool(
        table in arb_table(),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..8),
    ) {
        let tokens: Vec<u32> = picks.iter().map(|i| i.index(table.vocab) as u32).collect();
        let sum = embed_pool(&tokens, &table, Pooling::Sum).unwrap();
        let mean = embed_pool(&tokens, &table, Pooling::Mean).unwrap();
        for (s, m) in sum.iter().zip(&mean) {
            let scaled = m * tokens.len() as f32;
            prop_assert!((s - scaled).abs() <= 1e-4 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn cosine_stays_in_unit_range(
        a in prop::collection::vec(-1e3f32..1e3, 1..32),
        b in prop::collection::vec(-1e3f32..1e3, 1..32),
    ) {
        let n = a.len().min(b.len());
        let c = cosine(&a[..n], &b[..n]);
        prop_assert!((-1.0..=1.0).contains(&c));
    }
}

#[test]
fn empty_inputs_give_arm_output_on_zero_aggregate() {
    let model = random_model(3, Activation::Tanh, CrossKind::Cosine);
    let empty: FieldTokens = model.spec.member_arm.fields.iter().map(|f| (f.field_id, vec![])).collect();
    let v = model.member_vector(&empty).unwrap();
    let zero = vec![0.0f32; model.spec.member_arm.input_width()];
    assert_eq!(v, model.weights.member.dense_forward(&model.spec.member_arm, &zero));
}
