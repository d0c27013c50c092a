use approx::assert_abs_diff_eq;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn recurrent_arch(
    aggregation: Aggregation,
    hidden: usize,
    dim: usize,
    classes: usize,
) -> Architecture {
    Architecture::new(
        ModelConfig {
            family: Family::Recurrent,
            hidden_dimension: hidden,
            num_classes: classes,
            aggregation,
            use_topic: aggregation != Aggregation::None,
            ..Default::default()
        },
        InputDims {
            sentence: dim,
            topic: dim,
            vocabulary: 0,
        },
    )
    .unwrap()
}

fn attention_arch(
    layers: usize,
    heads: usize,
    d: usize,
    vocab: usize,
    use_topic: bool,
    classes: usize,
) -> Architecture {
    Architecture::new(
        ModelConfig {
            family: Family::Attention,
            num_classes: classes,
            use_topic,
            attention: AttentionSettings {
                layers,
                heads,
                model_dimension: d,
                max_sequence_length: 16,
            },
            ..Default::default()
        },
        InputDims {
            sentence: 0,
            topic: 0,
            vocabulary: vocab,
        },
    )
    .unwrap()
}

/// Gives every parameter an O(1) random value so no path through the network is degenerate.
fn perturbed(model: &Model, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = model.params().clone();
    for (_, a) in params.iter_mut() {
        a.mapv_inplace(|x| x + rng.gen_range(-0.5..0.5));
    }
    Model::new(model.architecture().clone(), params).unwrap()
}

/// Central finite differences of the batch loss, one scalar at a time.
fn numeric_gradient(
    model: &Model,
    batch: &[(ModelInput, usize)],
    weights: &[f64],
    step: f64,
) -> ParamSet {
    let mut grad = model.params().zeros_like();
    let names: Vec<String> = model.params().iter().map(|(k, _)| k.clone()).collect();
    let mut probe = model.clone();
    for name in names {
        let len = model.params().get(&name).unwrap().len();
        for i in 0..len {
            let orig = probe.params().get(&name).unwrap().as_slice().unwrap()[i];
            probe
                .params_mut()
                .get_mut(&name)
                .unwrap()
                .as_slice_mut()
                .unwrap()[i] = orig + step;
            let up = probe.loss(batch, weights).unwrap();
            probe
                .params_mut()
                .get_mut(&name)
                .unwrap()
                .as_slice_mut()
                .unwrap()[i] = orig - step;
            let down = probe.loss(batch, weights).unwrap();
            probe
                .params_mut()
                .get_mut(&name)
                .unwrap()
                .as_slice_mut()
                .unwrap()[i] = orig;
            grad.get_mut(&name).unwrap().as_slice_mut().unwrap()[i] = (up - down) / (2.0 * step);
        }
    }
    grad
}

fn max_relative_error(analytic: &ParamSet, numeric: &ParamSet) -> (String, f64) {
    let mut worst = (String::new(), 0.0);
    for (name, a) in analytic.iter() {
        let n = numeric.get(name).unwrap();
        let diff = (a - n).mapv(|x| x * x).sum().sqrt();
        let scale = a
            .mapv(|x| x * x)
            .sum()
            .sqrt()
            .max(n.mapv(|x| x * x).sum().sqrt());
        let err = if scale > 1e-6 { diff / scale } else { diff };
        if err > worst.1 {
            worst = (name.clone(), err);
        }
    }
    worst
}

fn recurrent_batch(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> Vec<(ModelInput, usize)> {
    (0..3)
        .map(|i| {
            let input = ModelInput::Recurrent(RecurrentInput {
                sentence: random_matrix(2 + i, dim, rng),
                topic: Some(random_matrix(1 + i, dim, rng)),
            });
            (input, i % classes)
        })
        .collect()
}

fn attention_batch(rng: &mut ChaCha8Rng, vocab: usize, classes: usize) -> Vec<(ModelInput, usize)> {
    (0..3)
        .map(|i| {
            let input = ModelInput::Attention(AttentionInput {
                sentence: (0..3 + i).map(|_| rng.gen_range(4..vocab)).collect(),
                topic: (0..1 + i % 2).map(|_| rng.gen_range(4..vocab)).collect(),
            });
            (input, i % classes)
        })
        .collect()
}

#[test]
fn birnn_output_is_twice_hidden() {
    let arch = recurrent_arch(Aggregation::Concat, 5, 3, 3);
    let params = arch.init_params(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = encode_sequence_birnn(
        random_matrix(4, 3, &mut rng).view(),
        &params,
        Encoder::Argument,
    )
    .unwrap();
    assert_eq!(h.len(), 10);
    let single = encode_sequence_birnn(
        random_matrix(1, 3, &mut rng).view(),
        &params,
        Encoder::Topic,
    )
    .unwrap();
    assert_eq!(single.len(), 10);
}

#[test]
fn birnn_input_errors() {
    let arch = recurrent_arch(Aggregation::Concat, 4, 3, 2);
    let params = arch.init_params(1);
    assert!(matches!(
        encode_sequence_birnn(Array2::zeros((2, 4)).view(), &params, Encoder::Argument),
        Err(Error::Dimension {
            expected: 3,
            got: 4
        })
    ));
    assert!(
        encode_sequence_birnn(Array2::zeros((0, 3)).view(), &params, Encoder::Argument).is_err()
    );
}

#[test]
fn zero_weights_give_zero_state() {
    let arch = recurrent_arch(Aggregation::Concat, 4, 3, 2);
    let mut params = arch.init_params(1);
    for (_, a) in params.iter_mut() {
        a.fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = encode_sequence_birnn(
        random_matrix(5, 3, &mut rng).view(),
        &params,
        Encoder::Argument,
    )
    .unwrap();
    assert_eq!(h, Array1::<f64>::zeros(8));
}

#[test]
fn aggregation_identities() {
    let h = array![0.3, -1.2, 2.5];
    assert_eq!(
        aggregate(h.view(), Array1::zeros(3).view(), Aggregation::Add).unwrap(),
        h
    );
    assert_eq!(
        aggregate(h.view(), Array1::ones(3).view(), Aggregation::Hadamard).unwrap(),
        h
    );
    let t = array![9.0, 8.0];
    let c = aggregate(h.view(), t.view(), Aggregation::Concat).unwrap();
    assert_eq!(c.len(), 5);
    assert_eq!(c.slice(ndarray::s![..3]), h);
    assert_eq!(c.slice(ndarray::s![3..]), t);
    assert_eq!(aggregate(h.view(), t.view(), Aggregation::None).unwrap(), h);
    assert!(aggregate(h.view(), t.view(), Aggregation::Add).is_err());
    assert!(aggregate(h.view(), t.view(), Aggregation::Hadamard).is_err());
}

#[test]
fn zero_head_gives_uniform() {
    let arch = recurrent_arch(Aggregation::Add, 4, 3, 3);
    let mut params = arch.init_params(3);
    params.get_mut("head/W_final").unwrap().fill(0.0);
    params.get_mut("head/b_final").unwrap().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = classify_recurrent(
        random_matrix(3, 3, &mut rng).view(),
        Some(random_matrix(2, 3, &mut rng).view()),
        &params,
        &arch,
    )
    .unwrap();
    for p in d.probabilities() {
        assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
    }
}

#[test]
fn bias_shift_leaves_distribution() {
    let arch = recurrent_arch(Aggregation::Hadamard, 4, 3, 3);
    let params = arch.init_params(5);
    let mut shifted = params.clone();
    shifted
        .get_mut("head/b_final")
        .unwrap()
        .mapv_inplace(|b| b + 7.5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (s, t) = (random_matrix(3, 3, &mut rng), random_matrix(2, 3, &mut rng));
    let a = classify_recurrent(s.view(), Some(t.view()), &params, &arch).unwrap();
    let b = classify_recurrent(s.view(), Some(t.view()), &shifted, &arch).unwrap();
    for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
        assert_abs_diff_eq!(*x, *y, epsilon = 1e-9);
    }
}

#[test]
fn topic_blind_recurrent_ignores_topic() {
    let arch = recurrent_arch(Aggregation::None, 4, 3, 3);
    let params = arch.init_params(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = random_matrix(4, 3, &mut rng);
    let a = classify_recurrent(
        s.view(),
        Some(random_matrix(2, 3, &mut rng).view()),
        &params,
        &arch,
    )
    .unwrap();
    let b = classify_recurrent(
        s.view(),
        Some(random_matrix(5, 3, &mut rng).view()),
        &params,
        &arch,
    )
    .unwrap();
    let c = classify_recurrent(s.view(), None, &params, &arch).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn topic_aware_requires_topic() {
    let arch = recurrent_arch(Aggregation::Concat, 4, 3, 2);
    let params = arch.init_params(7);
    assert!(classify_recurrent(Array2::ones((2, 3)).view(), None, &params, &arch).is_err());
}

#[test]
fn config_invariants() {
    let bad = ModelConfig {
        aggregation: Aggregation::None,
        use_topic: true,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        num_classes: 4,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        family: Family::Attention,
        attention: AttentionSettings {
            heads: 3,
            model_dimension: 16,
            ..Default::default()
        },
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn shape_mismatch_names_arrays() {
    let arch = recurrent_arch(Aggregation::Concat, 4, 3, 2);
    let mut params = arch.init_params(1);
    params.insert("head/b_final", ndarray::ArrayD::zeros(ndarray::IxDyn(&[3])));
    match Model::new(arch, params) {
        Err(Error::ShapeMismatch(names)) => assert_eq!(names, ["head/b_final"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn attention_sequence_layout() {
    let seq = build_sequence(&[10, 11], &[20, 21, 22], true, 16).unwrap();
    assert_eq!(
        seq.ids,
        vec![vocab::CLS, 10, 11, vocab::SEP, 20, 21, 22, vocab::SEP]
    );
    assert_eq!(seq.segments, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    let blind = build_sequence(&[10, 11], &[20, 21, 22], false, 16).unwrap();
    assert_eq!(blind.ids, vec![vocab::CLS, 20, 21, 22, vocab::SEP]);
    assert_eq!(blind.segments, vec![0; 5]);
    match build_sequence(&[1; 6], &[1; 10], true, 16) {
        Err(Error::SequenceTooLong {
            topic: 6,
            sentence: 10,
            limit: 16,
        }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn attention_padding_invariance() {
    let arch = attention_arch(2, 2, 8, 30, true, 3);
    let model = perturbed(&Model::init(arch.clone(), 1).unwrap(), 2);
    let seq = build_sequence(&[5, 6], &[7, 8, 9], true, 16).unwrap();
    let base = classify_sequence(&seq, model.params(), &arch).unwrap();
    for len in [9, 12, 16] {
        let mut padded = seq.clone();
        padded.pad_to(len);
        let d = classify_sequence(&padded, model.params(), &arch).unwrap();
        for (a, b) in base.probabilities().iter().zip(d.probabilities()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn attention_distribution_and_blind_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = attention_arch(1, 2, 8, 30, false, 3);
    let model = perturbed(&Model::init(arch.clone(), 1).unwrap(), 9);
    for _ in 0..10 {
        let sentence: Vec<usize> = (0..5).map(|_| rng.gen_range(4..30)).collect();
        let a = classify_attention(&sentence, &[4, 5], model.params(), &arch).unwrap();
        let b = classify_attention(&sentence, &[12, 13, 14], model.params(), &arch).unwrap();
        assert_eq!(a, b);
        assert!((a.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn recurrent_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for aggregation in [
        Aggregation::Add,
        Aggregation::Hadamard,
        Aggregation::Concat,
        Aggregation::None,
    ] {
        let arch = recurrent_arch(aggregation, 3, 2, 3);
        let model = perturbed(&Model::init(arch, 1).unwrap(), 2);
        let batch = recurrent_batch(&mut rng, 2, 3);
        let weights = [0.7, 1.3, 2.0];
        let (_, analytic) = model.loss_and_gradient(&batch, &weights).unwrap();
        let numeric = numeric_gradient(&model, &batch, &weights, 1e-5);
        let (name, err) = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "{aggregation:?}: {name} relative error {err}");
    }
}

#[test]
fn attention_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (layers, use_topic) in [(1, true), (2, true), (1, false)] {
        let arch = attention_arch(layers, 2, 4, 12, use_topic, 2);
        let model = perturbed(&Model::init(arch, 1).unwrap(), 3);
        let batch = attention_batch(&mut rng, 12, 2);
        let weights = [1.5, 0.6];
        let (_, analytic) = model.loss_and_gradient(&batch, &weights).unwrap();
        let numeric = numeric_gradient(&model, &batch, &weights, 1e-5);
        let (name, err) = max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "layers {layers}: {name} relative error {err}");
    }
}

#[test]
fn vanishing_class_weight_vanishes_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let arch = recurrent_arch(Aggregation::Concat, 3, 2, 2);
    let model = perturbed(&Model::init(arch, 1).unwrap(), 4);
    let batch: Vec<(ModelInput, usize)> = recurrent_batch(&mut rng, 2, 2)
        .into_iter()
        .map(|(x, _)| (x, 0))
        .collect();
    let (_, base) = model.loss_and_gradient(&batch, &[1.0, 1.0]).unwrap();
    let (_, tiny) = model.loss_and_gradient(&batch, &[1e-8, 1.0]).unwrap();
    assert!(tiny.l2_norm() <= 1e-6 * base.l2_norm());
}

#[test]
fn gradient_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let arch = attention_arch(1, 2, 4, 12, true, 3);
    let model = Model::init(arch, 5).unwrap();
    let batch = attention_batch(&mut rng, 12, 3);
    let a = model.loss_and_gradient(&batch, &[1.0; 3]).unwrap();
    let b = model.loss_and_gradient(&batch, &[1.0; 3]).unwrap();
    assert_eq!(a, b);
}
