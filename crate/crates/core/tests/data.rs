use std::collections::HashSet;
use std::io::Write;

use proptest::prelude::*;

use hwnas::data::{centroids, load_csv, read_csv, split, synth_blobs, BlobSpec, DataError, Dataset, Normalizer};

fn csv(text: &str) -> Result<Dataset, DataError> {
    read_csv(text.as_bytes(), "label")
}

/// Rows tagged by their index in feature 0, so row identity survives a split.
fn indexed(n: usize, classes: usize) -> Dataset {
    let features: Vec<f64> = (0..n).flat_map(|i| [i as f64, (i * 7 % 13) as f64]).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    Dataset::new(features, labels, 2, classes).unwrap()
}

fn ids(ds: &Dataset) -> Vec<u64> {
    (0..ds.len()).map(|i| ds.row(i)[0] as u64).collect()
}

#[test]
fn small_file_counts_rows_and_classes() {
    let ds = csv("a,b,label\n1,2,0\n3,4,1\n5,6,1\n").unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.num_classes(), 2);
    assert_eq!(ds.num_features(), 2);
    assert_eq!(ds.feature_names.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
}

#[test]
fn labels_are_remapped_in_sorted_order() {
    let ds = csv("x,label\n0.1,2\n0.2,7\n0.3,7\n0.4,2\n").unwrap();
    assert_eq!(ds.labels(), &[0, 1, 1, 0]);
    assert_eq!(ds.num_classes(), 2);
    // Numeric labels sort numerically, not lexically.
    let ds = csv("x,label\n0,10\n0,9\n").unwrap();
    assert_eq!(ds.labels(), &[1, 0]);
}

#[test]
fn label_column_can_sit_anywhere() {
    let ds = csv("label,f1,f2\n1,0.5,1.5\n0,2.5,3.5\n").unwrap();
    assert_eq!(ds.row(0), &[0.5, 1.5]);
    assert_eq!(ds.labels(), &[1, 0]);
}

#[test]
fn parse_errors_name_the_line() {
    match csv("a,label\n1,0\nfoo,1\n") {
        Err(DataError::Parse { line, message }) => {
            assert_eq!(line, 3);
            assert!(message.contains("foo"));
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(csv("a,label\n1,0\n2\n"), Err(DataError::Parse { line: 3, .. })));
    assert!(matches!(csv("a,b\n1,0\n"), Err(DataError::MissingLabelColumn(_))));
    assert!(matches!(csv("a,label\n"), Err(DataError::Empty)));
    assert!(matches!(csv("a,label\nNaN,0\n"), Err(DataError::NonNumericFeature { line: 2, .. })));
}

#[test]
fn load_from_disk_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "x,y,label\n1,2,a\n3,4,b").unwrap();
    drop(f);
    let ds = load_csv(&path, "label").unwrap();
    assert_eq!(ds.labels(), &[0, 1]);
    assert!(matches!(load_csv(&dir.path().join("nope.csv"), "label"), Err(DataError::Io { .. })));
}

#[test]
fn normalizer_examples() {
    let ds = Dataset::new(vec![1.0, 5.0, 3.0, 5.0], vec![0, 1], 2, 2).unwrap();
    let norm = Normalizer::fit(&ds);
    let out = norm.apply(&ds);
    // Feature 0: mean 2, population std 1. Feature 1 is constant.
    assert_eq!(out.features(), &[-1.0, 0.0, 1.0, 0.0]);
    let back = norm.invert(&out);
    assert_eq!(back.features(), ds.features());
}

#[test]
fn held_out_split_stays_finite() {
    let ds = synth_blobs(&BlobSpec {
        n_per_class: 40,
        dim: 6,
        classes: 3,
        separation: 4.0,
        seed: 2,
    })
    .unwrap();
    let s = split(&ds, (0.6, 0.2, 0.2), 1).unwrap();
    let norm = Normalizer::fit(&s.train);
    for part in [&s.train, &s.val, &s.test] {
        let n = norm.apply(part);
        assert_eq!(n.num_features(), 6);
        assert!(n.features().iter().all(|x| x.is_finite()));
    }
}

#[test]
fn split_sizes_and_trivial_fractions() {
    let ds = indexed(100, 5);
    let s = split(&ds, (0.8, 0.1, 0.1), 0).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
    let all = split(&ds, (1.0, 0.0, 0.0), 0).unwrap();
    assert_eq!(all.train.len(), 100);
    assert!(all.val.is_empty() && all.test.is_empty());
    assert!(matches!(split(&ds, (0.8, 0.3, 0.1), 0), Err(DataError::Fraction(_))));
    assert!(matches!(split(&ds, (-0.1, 0.5, 0.5), 0), Err(DataError::Fraction(_))));
}

#[test]
fn split_is_deterministic() {
    let ds = indexed(257, 4);
    let a = split(&ds, (0.6, 0.2, 0.2), 42).unwrap();
    let b = split(&ds, (0.6, 0.2, 0.2), 42).unwrap();
    let c = split(&ds, (0.6, 0.2, 0.2), 43).unwrap();
    let hash = |s: &hwnas::data::Splits| {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (ids(&s.train), ids(&s.val), ids(&s.test)).hash(&mut h);
        h.finish()
    };
    assert_eq!(hash(&a), hash(&b));
    assert_ne!(hash(&a), hash(&c));
}

#[test]
fn blobs_are_balanced_and_deterministic() {
    let spec = BlobSpec {
        n_per_class: 200,
        dim: 16,
        classes: 5,
        separation: 6.0,
        seed: 7,
    };
    let a = synth_blobs(&spec).unwrap();
    assert_eq!(a.len(), 1_000);
    assert_eq!(a.class_counts(), vec![200; 5]);
    assert_eq!(synth_blobs(&spec).unwrap(), a);
    assert!(synth_blobs(&BlobSpec { dim: 0, ..spec }).is_err());
}

#[test]
fn well_separated_blobs_are_nearest_centroid_separable() {
    let ds = synth_blobs(&BlobSpec {
        n_per_class: 200,
        dim: 16,
        classes: 5,
        separation: 10.0,
        seed: 3,
    })
    .unwrap();
    let s = split(&ds, (0.5, 0.0, 0.5), 0).unwrap();
    let c = centroids(&s.train);
    let correct = (0..s.test.len())
        .filter(|&i| {
            let x = s.test.row(i);
            let d = |k: usize| x.iter().zip(&c[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (0..c.len()).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap() == s.test.labels()[i]
        })
        .count();
    let acc = correct as f64 / s.test.len() as f64;
    assert!(acc >= 0.99, "nearest-centroid accuracy {acc}");
}

#[test]
fn blob_centers_respect_separation() {
    let ds = synth_blobs(&BlobSpec {
        n_per_class: 2_000,
        dim: 8,
        classes: 4,
        separation: 5.0,
        seed: 9,
    })
    .unwrap();
    let c = centroids(&ds);
    for a in 0..4 {
        for b in a + 1..4 {
            let d: f64 = c[a].iter().zip(&c[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            // Sample centroids wobble by about sqrt(dim / n) around the true centers.
            assert!(d >= 5.0 - 0.3, "classes {a},{b} only {d} apart");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_rows(n in 10usize..300, classes in 1usize..6, seed in any::<u64>(), ft in 0.1f64..0.8) {
        let ds = indexed(n, classes);
        let fv = (1.0 - ft) / 2.0;
        let s = split(&ds, (ft, fv, 1.0 - ft - fv), seed).unwrap();
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
        let mut all: Vec<u64> = ids(&s.train);
        all.extend(ids(&s.val));
        all.extend(ids(&s.test));
        let unique: HashSet<u64> = all.iter().copied().collect();
        prop_assert_eq!(unique.len(), n);
        for part in [&s.train, &s.val, &s.test] {
            if part.len() >= classes * 2 {
                prop_assert!(part.class_counts().iter().all(|&c| c > 0));
            }
        }
    }

    #[test]
    fn normalization_standardizes(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..60)) {
        let n = rows.len();
        let ds = Dataset::new(rows.concat(), vec![0; n], 3, 1).unwrap();
        let norm = Normalizer::fit(&ds);
        let out = norm.apply(&ds);
        for j in 0..3 {
            let col: Vec<f64> = (0..n).map(|i| out.row(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(norm.scale[j] > 0.0);
            if norm.scale[j] != 1.0 || var > 1e-12 {
                prop_assert!((var - 1.0).abs() < 1e-9 || var < 1e-12);
            }
        }
        let back = norm.invert(&out);
        for (a, b) in back.features().iter().zip(ds.features()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}
