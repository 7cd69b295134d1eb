use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use hwnas::estimator::{
    avg_resource_pct, latency_ns, load_linear_surrogate, surrogate_features, DeviceProfile, EstimatorConfig,
    LinearModel, LinearSurrogate, ResourceEstimate, ResourceEstimator, RuleBasedEstimator, Strategy as StorageStrategy, SurrogateError,
    METRICS,
};
use hwnas::ir::{ActivationKind, LayerDesc, NetworkDescription};
use hwnas::rng::rng_from_seed;
use hwnas::space::{SearchSpace, SearchSpaceConfig};

fn rule(reuse_factor: u32) -> RuleBasedEstimator {
    RuleBasedEstimator::new(EstimatorConfig {
        reuse_factor,
        ..Default::default()
    })
}

fn field(e: &ResourceEstimate, i: usize) -> f64 {
    [e.bram, e.dsp, e.ff, e.lut, e.ii_cycles, e.latency_cycles][i]
}

fn chain(dims: &[usize], act: ActivationKind, bits: u32, bn: bool) -> NetworkDescription {
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
    NetworkDescription::new(layers).with_precision(bits, bits)
}

fn standard_nets(n: usize, seed: u64, bits: u32) -> Vec<NetworkDescription> {
    let space = SearchSpace::new(SearchSpaceConfig::standard(16, 5)).unwrap();
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| space.decode(&space.sample(&mut rng)).unwrap().with_precision(bits, bits))
        .collect()
}

#[test]
fn empty_net_estimates_zero() {
    let e = rule(1).estimate(&NetworkDescription::new(vec![]));
    assert_eq!(e, ResourceEstimate::default());
}

#[test]
fn dense_16_64_at_8_bits() {
    let net = chain(&[16, 64], ActivationKind::Relu, 8, false);
    let e = rule(1).estimate(&net);
    assert_eq!(e.dsp, 0.0);
    let multiplier_luts = 16.0 * 64.0 * 8.0 * 8.0;
    assert_eq!(multiplier_luts, 65_536.0);
    let adder_luts = 64.0 * 15.0 * 8.0;
    assert_eq!(e.lut, multiplier_luts + adder_luts);
    assert_eq!(e.ff, 64.0 * 16.0);
    assert_eq!(e.latency_cycles, 4.0 + 1.0 + 1.0);
    assert_eq!(e.ii_cycles, 1.0);
}

#[test]
fn full_precision_uses_dsps() {
    let e = rule(1).estimate(&chain(&[16, 64], ActivationKind::Relu, 32, false));
    assert_eq!(e.dsp, 1024.0);
}

#[test]
fn strategy_controls_weight_storage() {
    let small = chain(&[16, 64], ActivationKind::Relu, 8, false);
    assert_eq!(rule(1).estimate(&small).bram, 0.0);
    let resource = RuleBasedEstimator::new(EstimatorConfig {
        strategy: StorageStrategy::Resource,
        ..Default::default()
    });
    let bits = (16.0 * 64.0 + 64.0) * 8.0;
    assert_eq!(resource.estimate(&small).bram, (bits / 36_864.0f64).ceil());
    let big = chain(&[512, 512], ActivationKind::Relu, 8, false);
    assert!(rule(1).estimate(&big).bram > 0.0);
}

#[test]
fn vu13p_profile_matches_printed_percentages() {
    let d = DeviceProfile::vu13p();
    let base = ResourceEstimate {
        dsp: 262.0,
        lut: 155_080.0,
        ff: 25_714.0,
        bram: 4.0,
        ..Default::default()
    };
    let pct = |c: f64, cap: u64| 100.0 * c / cap as f64;
    for (got, printed) in [
        (pct(base.dsp, d.dsp_capacity), 2.1),
        (pct(base.lut, d.lut_capacity), 9.0),
        (pct(base.ff, d.ff_capacity), 0.7),
        (pct(base.bram, d.bram_capacity), 0.1),
    ] {
        assert!((got - printed).abs() <= 0.05, "{got} vs {printed}");
    }
    let avg = avg_resource_pct(&base, &d);
    assert!((avg - 2.98).abs() <= 0.05, "{avg}");
    let cycles = ResourceEstimate {
        latency_cycles: 21.0,
        ..Default::default()
    };
    assert_eq!(latency_ns(&cycles, &d), 105.0);
    assert_eq!(latency_ns(&ResourceEstimate::default(), &d), 0.0);
}

#[test]
fn avg_resources_at_bounds() {
    let d = DeviceProfile::vu13p();
    assert_eq!(avg_resource_pct(&ResourceEstimate::default(), &d), 0.0);
    let full = ResourceEstimate {
        bram: d.bram_capacity as f64,
        dsp: d.dsp_capacity as f64,
        ff: d.ff_capacity as f64,
        lut: d.lut_capacity as f64,
        ..Default::default()
    };
    assert!((avg_resource_pct(&full, &d) - 100.0).abs() < 1e-12);
}

#[test]
fn linear_surrogate_hooks() {
    let zero = LinearSurrogate {
        reuse_factor: 1,
        models: Default::default(),
    };
    let nets = standard_nets(20, 4, 8);
    for n in &nets {
        assert_eq!(zero.estimate(n), ResourceEstimate::default());
    }
    let mut lut_only = zero.clone();
    lut_only.models[3] = LinearModel {
        intercept: 7.0,
        weights: [0.0; 6],
    };
    for n in &nets {
        assert_eq!(lut_only.estimate(n).lut, 7.0);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, serde_json::to_string(&lut_only.to_json()).unwrap()).unwrap();
    assert_eq!(load_linear_surrogate(&path).unwrap(), lut_only);
    std::fs::write(&path, r#"{"version":1,"metrics":{"lut":{"intercept":1}}}"#).unwrap();
    match load_linear_surrogate(&path) {
        Err(SurrogateError::Schema { field, .. }) => assert_eq!(field, "metrics.bram"),
        other => panic!("expected schema error, got {other:?}"),
    }
    assert!(matches!(
        load_linear_surrogate(&dir.path().join("missing.json")),
        Err(SurrogateError::Io { .. })
    ));
}

/// Ordinary least squares with an intercept column, solved by SVD so
/// constant or collinear feature columns are tolerated.
fn fit(x: &[[f64; 6]], y: &[f64]) -> LinearModel {
    let rows = x.len();
    let a = DMatrix::from_fn(rows, 7, |r, c| if c == 0 { 1.0 } else { x[r][c - 1] });
    let b = DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-9).unwrap();
    let mut weights = [0.0; 6];
    weights.copy_from_slice(&sol.as_slice()[1..]);
    LinearModel {
        intercept: sol[0],
        weights,
    }
}

fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res <= 1e-12 { 1.0 } else { f64::NEG_INFINITY }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Fifty standard-space networks sharing one activation kind. The surrogate
/// feature vector has no activation term, so each kind gets its own fit.
fn standard_nets_with(act: ActivationKind, seed: u64) -> Vec<NetworkDescription> {
    let mut cfg = SearchSpaceConfig::standard(16, 5);
    cfg.activation_choices = vec![act];
    let space = SearchSpace::new(cfg).unwrap();
    let mut rng = rng_from_seed(seed);
    (0..50)
        .map(|_| space.decode(&space.sample(&mut rng)).unwrap().with_precision(8, 8))
        .collect()
}

#[test]
fn least_squares_surrogate_reproduces_rule_based_outputs() {
    let est = rule(1);
    for act in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Sigmoid] {
        let nets = standard_nets_with(act, 2024);
        let x: Vec<[f64; 6]> = nets.iter().map(|n| surrogate_features(n, 1)).collect();
        let truth: Vec<ResourceEstimate> = nets.iter().map(|n| est.estimate(n)).collect();
        let mut models: [LinearModel; 6] = Default::default();
        for (i, slot) in models.iter_mut().enumerate() {
            let y: Vec<f64> = truth.iter().map(|e| field(e, i)).collect();
            *slot = fit(&x, &y);
        }
        // Through the file format, as a user would.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        let fitted = LinearSurrogate {
            reuse_factor: 1,
            models,
        };
        std::fs::write(&path, serde_json::to_string(&fitted.to_json()).unwrap()).unwrap();
        let surrogate = load_linear_surrogate(&path).unwrap();
        let predicted: Vec<ResourceEstimate> = nets.iter().map(|n| surrogate.estimate(n)).collect();
        for (i, name) in METRICS.iter().enumerate() {
            let y: Vec<f64> = truth.iter().map(|e| field(e, i)).collect();
            let p: Vec<f64> = predicted.iter().map(|e| field(e, i)).collect();
            let r2 = r_squared(&y, &p);
            assert!(r2 >= 0.99, "{act}/{name}: R^2 = {r2}");
        }
    }
}

fn dims_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..160, 2..6)
}

fn act_strategy() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![
        Just(ActivationKind::Relu),
        Just(ActivationKind::Tanh),
        Just(ActivationKind::Sigmoid)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn doubling_a_width_never_shrinks_lut_or_latency(
        dims in dims_strategy(), pos in 0usize..6, act in act_strategy(), bits in 2u32..=32, bn in any::<bool>()
    ) {
        let est = rule(1);
        let base = est.estimate(&chain(&dims, act, bits, bn));
        let mut wider = dims.clone();
        let i = pos % wider.len();
        wider[i] *= 2;
        let big = est.estimate(&chain(&wider, act, bits, bn));
        prop_assert!(big.lut >= base.lut);
        prop_assert!(big.latency_cycles >= base.latency_cycles);
        prop_assert!(base.is_valid() && big.is_valid());
    }

    #[test]
    fn reuse_trades_multipliers_for_latency(dims in dims_strategy(), act in act_strategy(), bits in 2u32..=32) {
        let net = chain(&dims, act, bits, false);
        let (r1, r4) = (rule(1), rule(4));
        prop_assert!(r4.multiplier_count(&net) <= r1.multiplier_count(&net));
        prop_assert!(r4.estimate(&net).latency_cycles >= r1.estimate(&net).latency_cycles);
    }

    #[test]
    fn eight_bit_nets_never_use_dsps(seed in any::<u64>()) {
        for net in standard_nets(4, seed, 8) {
            prop_assert_eq!(rule(1).estimate(&net).dsp, 0.0);
        }
    }

    #[test]
    fn avg_resources_is_linear(c in 0.0f64..100.0, bram in 0.0f64..100.0, dsp in 0.0f64..1e4, ff in 0.0f64..1e6, lut in 0.0f64..1e6) {
        let d = DeviceProfile::vu13p();
        let e = ResourceEstimate { bram, dsp, ff, lut, ..Default::default() };
        let scaled = ResourceEstimate { bram: c * bram, dsp: c * dsp, ff: c * ff, lut: c * lut, ..Default::default() };
        let (a, b) = (avg_resource_pct(&e, &d), avg_resource_pct(&scaled, &d));
        prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b.abs()));
    }

    #[test]
    fn estimates_are_deterministic(seed in any::<u64>()) {
        for net in standard_nets(2, seed, 32) {
            let est = rule(1);
            prop_assert_eq!(est.estimate(&net), est.estimate(&net));
        }
    }
}
