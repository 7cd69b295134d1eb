mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::Rng;

use hwnas::data::Dataset;
use hwnas::ir::{ActivationKind, LayerDesc, NetworkDescription};
use hwnas::rng::rng_from_seed;
use hwnas::train::artifact::{read_model, write_model};
use hwnas::train::params::plan;
use hwnas::train::{
    self, evaluate, fake_quantize, fit, forward, gradient_check, logits, prune_step, Matrix, Mode, ModelParams,
    QuantConfig, TrainConfig, TrainedModel,
};

type Cha = rand_chacha::ChaCha8Rng;

fn cfg(net: &NetworkDescription, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig::for_network(net, epochs, seed)
}

#[test]
fn hand_matrix_multiply() {
    let net = NetworkDescription::new(vec![LayerDesc::dense(2, 1)]);
    let mut p = ModelParams::<f64>::zeros(&net).unwrap();
    p.dense[0].weights = vec![1.0, -1.0];
    p.dense[0].bias = vec![0.5];
    let x = Matrix::from_f64(1, 2, &[3.0, 1.0]);
    let out = forward::<f64, Cha>(&p, &plan(&net), &x, Mode::Eval, None);
    assert_eq!(out.logits.data, vec![2.5]);
}

#[test]
fn zero_network_gives_zero_logits_and_class_zero() {
    let net = common::minimal_net(ActivationKind::Tanh);
    let model = TrainedModel::new(net.clone(), ModelParams::zeros(&net).unwrap());
    let s = common::blobs(20, 6.0, 1);
    let z = logits(&model, &s.train).unwrap();
    assert!(z.data.iter().all(|&v| v == 0.0));
    let zeros = Dataset::new(s.train.features().to_vec(), vec![0; s.train.len()], 16, 5).unwrap();
    assert_eq!(evaluate(&model, &zeros).unwrap(), 1.0);
}

#[test]
fn one_hot_oracle_scores_perfectly() {
    let net = NetworkDescription::new(vec![LayerDesc::dense(4, 4)]);
    let mut p = ModelParams::<f32>::zeros(&net).unwrap();
    for i in 0..4 {
        p.dense[0].weights[i * 4 + i] = 1.0;
    }
    let model = TrainedModel::new(net, p);
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let features: Vec<f64> = labels.iter().flat_map(|&l| (0..4).map(move |j| f64::from(u8::from(j == l)))).collect();
    let ds = Dataset::new(features, labels, 4, 4).unwrap();
    assert_eq!(evaluate(&model, &ds).unwrap(), 1.0);
}

#[test]
fn eval_forward_is_bitwise_repeatable() {
    let s = common::blobs(40, 6.0, 2);
    let net = common::standard_space()
        .decode(&hwnas::space::ArchitectureGenome {
            use_batchnorm: true,
            dropout: 0.1,
            ..common::minimal_genome(ActivationKind::Relu)
        })
        .unwrap();
    let model = train::train(&net, &s.train, &s.val, &cfg(&net, 2, 3)).unwrap();
    let a = logits(&model, &s.val).unwrap();
    let b = logits(&model, &s.val).unwrap();
    assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn zero_epochs_returns_initialized_model() {
    let s = common::blobs(10, 6.0, 4);
    let net = common::minimal_net(ActivationKind::Relu);
    let model = train::train(&net, &s.train, &s.val, &cfg(&net, 0, 9)).unwrap();
    assert!(model.history.is_empty());
    let init = ModelParams::<f32>::init(&net, hwnas::rng::derive_seed(9, "init", 0)).unwrap();
    assert_eq!(model.params, init);
}

#[test]
fn training_is_deterministic() {
    let s = common::blobs(40, 4.0, 5);
    let net = common::standard_space()
        .decode(&hwnas::space::ArchitectureGenome {
            use_batchnorm: true,
            dropout: 0.05,
            ..common::minimal_genome(ActivationKind::Sigmoid)
        })
        .unwrap();
    let a = train::train(&net, &s.train, &s.val, &cfg(&net, 3, 77)).unwrap();
    let b = train::train(&net, &s.train, &s.val, &cfg(&net, 3, 77)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert_eq!(a.history.len(), 3);
}

#[test]
fn strong_l1_shrinks_weights() {
    let s = common::blobs(100, 6.0, 6);
    let net = common::minimal_net(ActivationKind::Relu);
    let mut plain = cfg(&net, 5, 13);
    plain.l1 = 0.0;
    let mut heavy = plain.clone();
    heavy.l1 = 1.0;
    let a = train::train(&net, &s.train, &s.val, &plain).unwrap();
    let b = train::train(&net, &s.train, &s.val, &heavy).unwrap();
    assert!(
        b.params.mean_abs_weight() < a.params.mean_abs_weight(),
        "{} vs {}",
        b.params.mean_abs_weight(),
        a.params.mean_abs_weight()
    );
}

#[test]
fn separable_blobs_are_learned() {
    let s = common::blobs(200, 6.0, 7);
    let net = common::minimal_net(ActivationKind::Relu);
    let model = train::train(&net, &s.train, &s.val, &cfg(&net, 30, 1)).unwrap();
    let acc = evaluate(&model, &s.val).unwrap();
    assert!(acc >= 0.95, "val accuracy {acc}");
    assert_eq!(model.history.last().unwrap().val_accuracy, Some(acc));
}

#[test]
fn random_labels_score_at_chance() {
    let s = common::blobs(2_000, 6.0, 8);
    let net = common::minimal_net(ActivationKind::Relu);
    let model = train::train(&net, &s.train, &s.val, &cfg(&net, 2, 2)).unwrap();
    let all = Dataset::new(
        [s.train.features(), s.val.features(), s.test.features()].concat(),
        [s.train.labels(), s.val.labels(), s.test.labels()].concat(),
        16,
        5,
    )
    .unwrap();
    assert_eq!(all.len(), 10_000);
    let acc = evaluate(&model, &common::relabel(&all, 99)).unwrap();
    // Binomial sd at p = 0.2, n = 10,000 is 0.004; 0.02 is five of them.
    assert!((acc - 0.2).abs() <= 0.02, "accuracy {acc}");
}

#[test]
fn shape_errors_are_reported() {
    let s = common::blobs(10, 6.0, 1);
    let net = NetworkDescription::new(vec![LayerDesc::dense(8, 5)]);
    assert!(matches!(
        train::train(&net, &s.train, &s.val, &cfg(&net, 1, 0)),
        Err(train::TrainError::InputDim { expected: 8, found: 16 })
    ));
}

#[test]
fn quantizer_worked_example() {
    let x = [-1.0f32, -0.5, 0.0, 0.5, 1.0];
    let (q, scale) = fake_quantize(&x, 8);
    assert_eq!(scale, 1.0 / 127.0);
    for (a, b) in q.iter().zip(&x) {
        assert!(f64::from((a - b).abs()) <= f64::from(scale) / 2.0 + f64::from(a.abs()) * f64::from(f32::EPSILON) / 2.0);
    }
    let (z, zs) = fake_quantize(&[0.0f32; 7], 8);
    assert_eq!(z, vec![0.0; 7]);
    assert_eq!(zs, 0.0);
}

#[test]
fn pruning_worked_example_and_zero_fraction() {
    let net = NetworkDescription::new(vec![LayerDesc::dense(5, 1)]);
    let mut p = ModelParams::<f32>::zeros(&net).unwrap();
    p.dense[0].weights = vec![5.0, -4.0, 3.0, -2.0, 1.0];
    let before = p.clone();
    assert_eq!(prune_step(&mut p, 0.0), 0);
    assert_eq!(p, before);
    prune_step(&mut p, 0.4);
    assert_eq!(p.dense[0].weights, vec![5.0, -4.0, 3.0, 0.0, 0.0]);
}

#[test]
fn pruning_ranks_globally_and_spares_biases() {
    let net = NetworkDescription::new(vec![LayerDesc::dense(2, 2), LayerDesc::dense(2, 2)]);
    let mut p = ModelParams::<f32>::zeros(&net).unwrap();
    p.dense[0].weights = vec![0.1, 0.2, 0.3, 0.4];
    p.dense[1].weights = vec![1.0, 2.0, 3.0, 4.0];
    p.dense[0].bias = vec![0.0001, 0.0001];
    prune_step(&mut p, 0.5);
    assert_eq!(p.dense[0].weights, vec![0.0; 4]);
    assert_eq!(p.dense[1].weights, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(p.dense[0].bias, vec![0.0001, 0.0001]);
}

/// Dense(100, 100): exactly 10,000 weights.
fn ten_thousand(seed: u64) -> ModelParams<f32> {
    let net = NetworkDescription::new(vec![LayerDesc::dense(100, 100)]);
    ModelParams::init(&net, seed).unwrap()
}

#[test]
fn sparsity_follows_geometric_schedule() {
    let mut p = ten_thousand(3);
    assert_eq!(p.dense_weight_count(), 10_000);
    for k in 1..=10 {
        prune_step(&mut p, 0.2);
        let expected = 1.0 - 0.8f64.powi(k);
        assert!((p.global_sparsity() - expected).abs() <= 0.001, "k={k}");
    }
}

#[test]
fn masks_survive_training() {
    let s = common::blobs(60, 6.0, 10);
    let net = common::minimal_net(ActivationKind::Tanh);
    let mut model = train::train(&net, &s.train, &s.val, &cfg(&net, 1, 4)).unwrap();
    prune_step(&mut model.params, 0.5);
    let masks: Vec<Vec<bool>> = model.params.dense.iter().map(|d| d.mask.clone()).collect();
    model.params.quant = QuantConfig::bits(8);
    fit(&mut model, &s.train, &s.val, &cfg(&net, 3, 5)).unwrap();
    for (d, m) in model.params.dense.iter().zip(&masks) {
        assert_eq!(&d.mask, m);
        for (w, keep) in d.weights.iter().zip(m) {
            if !keep {
                assert_eq!(w.to_bits(), 0.0f32.to_bits());
            }
        }
    }
}

#[test]
fn gradient_check_linear() {
    let net = NetworkDescription::new(vec![LayerDesc::dense(6, 3)]);
    let err = gradient_check(&net, 1).unwrap();
    assert!(err < 1e-7, "{err}");
}

/// Random net of 1 to 3 dense layers under the gradient-check size limit.
fn small_net<R: Rng>(rng: &mut R, act: ActivationKind, bn: bool) -> NetworkDescription {
    loop {
        let depth = rng.gen_range(1..=3);
        let mut dims = vec![rng.gen_range(2..=8)];
        for _ in 0..depth {
            dims.push(rng.gen_range(2..=10));
        }
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            layers.push(LayerDesc::dense(w[0], w[1]));
            if i + 2 < dims.len() {
                if bn {
                    layers.push(LayerDesc::batch_norm(w[1]));
                }
                layers.push(LayerDesc::activation(act));
            }
        }
        let mut net = NetworkDescription::new(layers);
        net.training_meta.l1 = if rng.gen_bool(0.5) { 1e-3 } else { 0.0 };
        if net.param_count() <= 1_000 {
            return net;
        }
    }
}

#[test]
fn gradient_check_random_nets() {
    let mut rng = rng_from_seed(2718);
    for i in 0..20 {
        let act = [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::Relu][i % 3];
        let net = small_net(&mut rng, act, i % 2 == 0);
        let err = gradient_check(&net, i as u64).unwrap();
        assert!(err < 1e-4, "net {i} ({act}): {err}");
    }
}

#[test]
fn gradient_check_three_layer_tanh_batchnorm() {
    let net = NetworkDescription::new(vec![
        LayerDesc::dense(4, 8),
        LayerDesc::batch_norm(8),
        LayerDesc::activation(ActivationKind::Tanh),
        LayerDesc::dense(8, 6),
        LayerDesc::batch_norm(6),
        LayerDesc::activation(ActivationKind::Tanh),
        LayerDesc::dense(6, 3),
    ]);
    assert!(gradient_check(&net, 5).unwrap() < 1e-4);
    let too_big = NetworkDescription::new(vec![LayerDesc::dense(64, 64)]);
    assert!(matches!(gradient_check(&too_big, 0), Err(train::TrainError::TooLarge { .. })));
}

#[test]
fn artifact_round_trip_preserves_logits() {
    let s = common::blobs(60, 6.0, 11);
    let net = common::standard_space()
        .decode(&hwnas::space::ArchitectureGenome {
            use_batchnorm: true,
            ..common::minimal_genome(ActivationKind::Relu)
        })
        .unwrap();
    let dir = tempfile::tempdir().unwrap();

    let fp = train::train(&net, &s.train, &s.val, &cfg(&net, 2, 1)).unwrap();
    let path = dir.path().join("fp.json");
    write_model(&fp, &path, "fp.bin", serde_json::json!({})).unwrap();
    let (back, manifest) = read_model(&path).unwrap();
    for (a, b) in fp.params.dense.iter().zip(&back.params.dense) {
        assert_eq!(a.weights.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.weights.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    assert!(manifest.tensors.iter().all(|t| t.scale.is_none()));

    let mut q = fp.clone();
    prune_step(&mut q.params, 0.3);
    q.params.quant = QuantConfig::bits(8);
    train::calibrate_activation_ranges(&mut q, &s.train).unwrap();
    fit(&mut q, &s.train, &s.val, &cfg(&net, 2, 2)).unwrap();
    let path = dir.path().join("q.json");
    write_model(&q, &path, "q.bin", serde_json::json!({"seed": 2})).unwrap();
    let (back, manifest) = read_model(&path).unwrap();
    let bits = |m: &Matrix<f32>| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&logits(&q, &s.val).unwrap()), bits(&logits(&back, &s.val).unwrap()));
    assert_eq!(evaluate(&q, &s.val).unwrap(), evaluate(&back, &s.val).unwrap());
    assert_eq!(manifest.provenance["seed"], 2);

    // Exported weights sit on each layer's integer grid.
    for (i, d) in back.params.dense.iter().enumerate() {
        let entry = manifest.tensors.iter().find(|t| t.name == format!("dense.{i}.weight")).unwrap();
        let scale = entry.scale.expect("quantized layers carry a scale");
        for &w in &d.weights {
            let k = f64::from(w) / scale;
            assert!((k - k.round()).abs() < 1e-3, "{w} / {scale}");
            assert!(k.abs() <= 127.0 + 1e-3);
        }
    }
    let net_out = &manifest.network;
    assert!(net_out.dense_layers().all(|(l, _, _)| l.weight_bits == 8 && l.sparsity > 0.0));
}

fn quant_error_ok(q: &[f32], x: &[f32], scale: f32) -> bool {
    q.iter().zip(x).all(|(&o, &v)| {
        let err = (f64::from(o) - f64::from(v)).abs();
        err <= f64::from(scale) / 2.0 + f64::from(o.abs()) * f64::from(f32::EPSILON) / 2.0
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn qat_contract(x in prop::collection::vec(-1e3f32..1e3, 1..400), bits in 2u32..=16) {
        let (q, scale) = fake_quantize(&x, bits);
        prop_assert!(quant_error_ok(&q, &x, scale));
        let distinct: HashSet<u32> = q.iter().map(|v| (v + 0.0).to_bits()).collect();
        prop_assert!(distinct.len() as u64 <= 2 * ((1u64 << (bits - 1)) - 1) + 1);
        let (qq, _) = fake_quantize(&q, bits);
        prop_assert_eq!(
            qq.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn eight_bit_codebook(x in prop::collection::vec(-50f32..50.0, 1..2000)) {
        let (q, _) = fake_quantize(&x, 8);
        // Treat +0 and -0 as the same code.
        let distinct: HashSet<u32> = q.iter().map(|v| (v + 0.0).to_bits()).collect();
        prop_assert!(distinct.len() <= 255);
    }

    #[test]
    fn prune_schedule_on_any_net(seed in any::<u64>(), frac in 0.05f64..0.5, steps in 1usize..8) {
        let mut p = ten_thousand(seed);
        let mut prev: Vec<Vec<bool>> = p.dense.iter().map(|d| d.mask.clone()).collect();
        for k in 1..=steps {
            prune_step(&mut p, frac);
            let expected = 1.0 - (1.0 - frac).powi(k as i32);
            // One weight of rounding per step.
            prop_assert!((p.global_sparsity() - expected).abs() <= k as f64 / 10_000.0 + 1e-12);
            for (d, m) in p.dense.iter().zip(&prev) {
                prop_assert!(d.mask.iter().zip(m).all(|(now, before)| *before || !*now));
            }
            prev = p.dense.iter().map(|d| d.mask.clone()).collect();
        }
    }
}
