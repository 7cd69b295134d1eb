//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use hwnas::data::{split, synth_blobs, BlobSpec, Dataset, Normalizer, Splits};
use hwnas::ir::{ActivationKind, NetworkDescription};
use hwnas::space::{ArchitectureGenome, SearchSpace, SearchSpaceConfig};

/// Five-class unit-variance blobs in 16 dimensions, split 60/20/20 and
/// z-scored on the training split.
pub fn blobs(n_per_class: usize, separation: f64, seed: u64) -> Splits {
    let ds = synth_blobs(&BlobSpec {
        n_per_class,
        dim: 16,
        classes: 5,
        separation,
        seed,
    })
    .unwrap();
    let s = split(&ds, (0.6, 0.2, 0.2), seed).unwrap();
    let norm = Normalizer::fit(&s.train);
    Splits {
        train: norm.apply(&s.train),
        val: norm.apply(&s.val),
        test: norm.apply(&s.test),
    }
}

pub fn standard_space() -> SearchSpace {
    SearchSpace::new(SearchSpaceConfig::standard(16, 5)).unwrap()
}

/// Four hidden layers at the smallest width of each position.
pub fn minimal_genome(activation: ActivationKind) -> ArchitectureGenome {
    ArchitectureGenome {
        num_layers: 4,
        widths: vec![64, 32, 16, 32, 32, 32, 16, 32],
        activation,
        use_batchnorm: false,
        learning_rate: 0.002,
        l1: 0.0,
        dropout: 0.0,
    }
}

pub fn minimal_net(activation: ActivationKind) -> NetworkDescription {
    standard_space().decode(&minimal_genome(activation)).unwrap()
}

/// Same rows with labels replaced by a seeded uniform draw.
pub fn relabel(ds: &Dataset, seed: u64) -> Dataset {
    use rand::Rng;
    let mut rng = hwnas::rng::rng_from_seed(seed);
    let labels: Vec<usize> = (0..ds.len()).map(|_| rng.gen_range(0..ds.num_classes())).collect();
    Dataset::new(ds.features().to_vec(), labels, ds.num_features(), ds.num_classes()).unwrap()
}
