use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use hwnas::ir::{ActivationKind, LayerKind};
use hwnas::rng::rng_from_seed;
use hwnas::space::{ArchitectureGenome, SearchSpace, SearchSpaceConfig, GENE_COUNT, MAX_LAYERS};

fn standard() -> SearchSpace {
    SearchSpace::new(SearchSpaceConfig::standard(16, 5)).unwrap()
}

/// Gene `i` of a genome rendered as text, so genes of mixed types compare
/// uniformly.
fn gene(g: &ArchitectureGenome, i: usize) -> String {
    match i {
        0 => g.num_layers.to_string(),
        i if i <= MAX_LAYERS => g.widths[i - 1].to_string(),
        9 => g.activation.to_string(),
        10 => g.use_batchnorm.to_string(),
        11 => g.learning_rate.to_string(),
        12 => g.l1.to_string(),
        13 => g.dropout.to_string(),
        _ => unreachable!(),
    }
}

#[test]
fn samples_land_in_standard_sets() {
    let space = standard();
    let mut rng = rng_from_seed(3);
    for _ in 0..500 {
        let g = space.sample(&mut rng);
        assert!((4..=8).contains(&g.num_layers));
        assert!([64, 120, 128].contains(&g.widths[0]));
        space.validate_genome(&g).unwrap();
    }
}

#[test]
fn singleton_space_has_one_genome() {
    let cfg = SearchSpaceConfig {
        num_layers_choices: vec![3],
        width_choices: vec![vec![7]; MAX_LAYERS],
        activation_choices: vec![ActivationKind::Sigmoid],
        batchnorm_choices: vec![true],
        lr_choices: vec![0.002],
        l1_choices: vec![1e-5],
        dropout_choices: vec![0.1],
        input_dim: 4,
        num_classes: 2,
    };
    let space = SearchSpace::new(cfg).unwrap();
    let mut rng = rng_from_seed(0);
    let first = space.sample(&mut rng);
    for _ in 0..50 {
        assert_eq!(space.sample(&mut rng), first);
        assert_eq!(space.mutate(&first, 1.0, &mut rng), first);
    }
}

#[test]
fn activation_frequencies_pass_chi_square() {
    let space = standard();
    let mut rng = rng_from_seed(11);
    let n = 10_000;
    let mut counts: HashMap<ActivationKind, usize> = HashMap::new();
    for _ in 0..n {
        *counts.entry(space.sample(&mut rng).activation).or_default() += 1;
    }
    let k = 3.0;
    let expected = n as f64 / k;
    let sigma = (n as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
    let mut chi2 = 0.0;
    for a in [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Sigmoid] {
        let c = counts.get(&a).copied().unwrap_or(0) as f64;
        assert!((c - expected).abs() <= 3.0 * sigma, "{a}: {c} vs {expected}");
        chi2 += (c - expected).powi(2) / expected;
    }
    // Upper 0.1% point of chi-square with 2 degrees of freedom.
    assert!(chi2 < 13.816, "chi2 = {chi2}");
}

#[test]
fn full_rate_mutation_changes_genes_at_expected_frequency() {
    let space = standard();
    let mut rng = rng_from_seed(5);
    let base = space.sample(&mut rng);
    let n = 10_000;
    let mut changed = [0usize; GENE_COUNT];
    for _ in 0..n {
        let m = space.mutate(&base, 1.0, &mut rng);
        for (i, c) in changed.iter_mut().enumerate() {
            if gene(&m, i) != gene(&base, i) {
                *c += 1;
            }
        }
    }
    for (i, &c) in changed.iter().enumerate() {
        let p = 1.0 - 1.0 / space.gene_cardinality(i) as f64;
        let freq = c as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 4.0 * sigma + 1e-12, "gene {i}: {freq} vs {p}");
    }
}

#[test]
fn zero_rate_mutation_is_identity() {
    let space = standard();
    let mut rng = rng_from_seed(8);
    for _ in 0..100 {
        let g = space.sample(&mut rng);
        assert_eq!(space.mutate(&g, 0.0, &mut rng), g);
    }
}

#[test]
fn crossover_preserves_gene_multisets() {
    let space = standard();
    for seed in 0..100 {
        let mut rng = rng_from_seed(seed);
        let a = space.sample(&mut rng);
        let b = space.sample(&mut rng);
        let (x, y) = space.crossover(&a, &b, &mut rng);
        for i in 0..GENE_COUNT {
            let mut parents = [gene(&a, i), gene(&b, i)];
            let mut children = [gene(&x, i), gene(&y, i)];
            parents.sort();
            children.sort();
            assert_eq!(parents, children, "seed {seed}, gene {i}");
        }
        space.validate_genome(&x).unwrap();
        space.validate_genome(&y).unwrap();
    }
}

#[test]
fn crossover_of_equal_parents_and_single_difference() {
    let space = standard();
    let mut rng = rng_from_seed(21);
    let g = space.sample(&mut rng);
    assert_eq!(space.crossover(&g, &g, &mut rng), (g.clone(), g.clone()));
    let mut h = g.clone();
    h.use_batchnorm = !g.use_batchnorm;
    for _ in 0..20 {
        let (x, y) = space.crossover(&g, &h, &mut rng);
        for c in [&x, &y] {
            let mut shared = c.clone();
            shared.use_batchnorm = g.use_batchnorm;
            assert_eq!(shared, g);
        }
    }
}

#[test]
fn decode_worked_example() {
    let space = standard();
    let g = ArchitectureGenome {
        num_layers: 4,
        widths: vec![64, 32, 16, 32, 64, 64, 32, 64],
        activation: ActivationKind::Relu,
        use_batchnorm: false,
        learning_rate: 0.001,
        l1: 0.0,
        dropout: 0.0,
    };
    let net = space.decode(&g).unwrap();
    let dims: Vec<(usize, usize)> = net.dense_layers().map(|(_, n, m)| (n, m)).collect();
    assert_eq!(dims, vec![(16, 64), (64, 32), (32, 16), (16, 32), (32, 5)]);
    assert!(net
        .layers
        .iter()
        .all(|l| !matches!(l.kind, LayerKind::BatchNorm { .. } | LayerKind::Dropout { .. })));
    let oracle: u64 = dims.iter().map(|&(n, m)| (n * m + m) as u64).sum();
    assert_eq!(net.param_count(), oracle);
}

#[test]
fn layer_order_with_batchnorm_and_dropout() {
    let space = standard();
    let g = ArchitectureGenome {
        num_layers: 4,
        widths: vec![128, 64, 32, 64, 32, 32, 16, 44],
        activation: ActivationKind::Tanh,
        use_batchnorm: true,
        learning_rate: 0.002,
        l1: 1e-4,
        dropout: 0.05,
    };
    let net = space.decode(&g).unwrap();
    let tags: Vec<&str> = net
        .layers
        .iter()
        .map(|l| match l.kind {
            LayerKind::Dense { .. } => "D",
            LayerKind::BatchNorm { .. } => "B",
            LayerKind::Activation { .. } => "A",
            LayerKind::Dropout { .. } => "P",
        })
        .collect();
    let mut expected = ["D", "B", "A", "P"].repeat(4);
    expected.push("D");
    assert_eq!(tags, expected);
    assert_eq!(net.training_meta.learning_rate, 0.002);
    assert_eq!(net.training_meta.l1, 1e-4);
}

/// Every combination of the decodable genes for a given layer count.
fn enumerate(space: &SearchSpace, layers: usize) -> Vec<ArchitectureGenome> {
    let c = space.config();
    let mut width_combos: Vec<Vec<usize>> = vec![Vec::new()];
    for choices in &c.width_choices[..layers] {
        width_combos = width_combos
            .iter()
            .flat_map(|p| {
                choices.iter().map(move |&w| {
                    let mut q = p.clone();
                    q.push(w);
                    q
                })
            })
            .collect();
    }
    let mut out = Vec::new();
    for w in &width_combos {
        let mut widths = w.clone();
        widths.extend(c.width_choices[layers..].iter().map(|ch| ch[0]));
        for &activation in &c.activation_choices {
            for &use_batchnorm in &c.batchnorm_choices {
                for &learning_rate in &c.lr_choices {
                    for &l1 in &c.l1_choices {
                        for &dropout in &c.dropout_choices {
                            out.push(ArchitectureGenome {
                                num_layers: layers,
                                widths: widths.clone(),
                                activation,
                                use_batchnorm,
                                learning_rate,
                                l1,
                                dropout,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[test]
fn four_layer_space_has_7776_distinct_networks() {
    let space = standard();
    let nets: HashSet<String> = enumerate(&space, 4)
        .iter()
        .map(|g| serde_json::to_string(&space.decode(g).unwrap()).unwrap())
        .collect();
    assert_eq!(nets.len(), 7_776);
    assert_eq!(space.networks_with_layers(4), 7_776);
}

#[test]
fn networks_with_layers_matches_enumeration() {
    let space = standard();
    for layers in 4..=6 {
        assert_eq!(space.networks_with_layers(layers), enumerate(&space, layers).len() as u64);
    }
    assert_eq!(space.networks_with_layers(3), 0);
}

#[test]
fn keys_do_not_collide() {
    let space = standard();
    let mut rng = rng_from_seed(99);
    let mut seen: HashMap<String, ArchitectureGenome> = HashMap::new();
    for _ in 0..10_000 {
        let g = space.sample(&mut rng);
        if let Some(prev) = seen.insert(g.key(), g.clone()) {
            assert_eq!(prev, g, "distinct genomes share key {}", g.key());
        }
    }
    let mut distinct: Vec<ArchitectureGenome> = seen.into_values().collect();
    distinct.dedup();
    let keys: HashSet<String> = distinct.iter().map(|g| g.key()).collect();
    assert_eq!(keys.len(), distinct.len());
}

#[test]
fn inert_width_changes_the_key() {
    let space = standard();
    let mut rng = rng_from_seed(1);
    let mut g = space.sample(&mut rng);
    g.num_layers = 4;
    let mut h = g.clone();
    h.widths[7] = if g.widths[7] == 32 { 44 } else { 32 };
    assert_ne!(g.key(), h.key());
    assert_eq!(space.decode(&g).unwrap(), space.decode(&h).unwrap());
}

#[test]
fn thousand_decodes_validate() {
    let space = standard();
    let mut rng = rng_from_seed(1234);
    for _ in 0..1_000 {
        let g = space.sample(&mut rng);
        let net = space.decode(&g).unwrap();
        net.validate_shapes().unwrap();
        assert_eq!(net.input_dim(), Some(16));
        assert_eq!(net.output_dim(), Some(5));
        assert_eq!(net.dense_layers().count(), g.num_layers + 1);
        assert_eq!(space.decode(&g).unwrap(), net);
    }
}

#[test]
fn out_of_space_genome_is_rejected() {
    let space = standard();
    let mut g = space.sample(&mut rng_from_seed(0));
    g.widths[0] = 65;
    assert!(space.validate_genome(&g).is_err());
    g.num_layers = 6;
    g.widths.truncate(5);
    assert!(space.decode(&g).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variation_closure(seed in any::<u64>(), rate in 0.0f64..=1.0) {
        let space = standard();
        let mut rng = rng_from_seed(seed);
        let a = space.sample(&mut rng);
        let b = space.sample(&mut rng);
        let (x, y) = space.crossover(&a, &b, &mut rng);
        for c in [x, y] {
            let m = space.mutate(&c, rate, &mut rng);
            prop_assert!(space.validate_genome(&m).is_ok());
            prop_assert!(space.decode(&m).is_ok());
        }
    }

    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>()) {
        let space = standard();
        let a = space.sample(&mut rng_from_seed(seed));
        let b = space.sample(&mut rng_from_seed(seed));
        prop_assert_eq!(a.key(), b.key());
        prop_assert_eq!(a, b);
    }
}
