//! Labeled tabular datasets: CSV ingestion, z-score normalization, seeded
//! stratified splitting and a Gaussian-blob generator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),
    #[error("feature column `{column}` holds a non-finite value at line {line}")]
    NonNumericFeature { column: String, line: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid split fractions: {0}")]
    Fraction(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Row-major feature matrix with integer class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if num_features == 0 || features.len() != labels.len() * num_features {
            return Err(DataError::Invalid(format!(
                "{} feature values do not form {} rows of {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
            feature_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    /// Subset by row indices, in the given order. May be empty.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.num_features);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Dataset {
            features,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_features: self.num_features,
            num_classes: self.num_classes,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Loads a CSV file with a header row. Every column except `label_column` is
/// a numeric feature, in file order. Labels are remapped to `0..C` following
/// their sorted order (numeric when all labels parse as numbers, otherwise
/// lexicographic).
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let label_idx = header
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(label_column.to_string()))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (row_no, record) in rdr.records().enumerate() {
        let line = row_no + 2;
        let record = record.map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.trim().to_string());
                continue;
            }
            let column = &header[i];
            let value: f64 = cell.trim().parse().map_err(|_| DataError::Parse {
                line,
                message: format!("column `{column}`: `{cell}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonNumericFeature {
                    column: column.to_string(),
                    line,
                });
            }
            features.push(value);
        }
    }
    if raw_labels.is_empty() {
        return Err(DataError::Empty);
    }
    if names.is_empty() {
        return Err(DataError::Invalid("no feature columns".into()));
    }

    let (labels, num_classes) = remap_labels(&raw_labels);
    let mut ds = Dataset::new(features, labels, names.len(), num_classes)?;
    ds.feature_names = Some(names);
    Ok(ds)
}

fn remap_labels(raw: &[String]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    let mut distinct: Vec<&String> = raw.iter().collect();
    match &numeric {
        Some(values) => {
            let mut pairs: Vec<(f64, &String)> = values.iter().copied().zip(raw).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            distinct = pairs.into_iter().map(|(_, s)| s).collect();
        }
        None => distinct.sort(),
    }
    distinct.dedup();
    let index: BTreeMap<&String, usize> = distinct.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    (raw.iter().map(|s| index[s]).collect(), distinct.len())
}

/// Per-feature affine map `x -> (x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Mean and population standard deviation of each feature. Degenerate
    /// features get scale 1.
    pub fn fit(train: &Dataset) -> Normalizer {
        let d = train.num_features();
        let n = train.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..train.len() {
            for (m, x) in mean.iter_mut().zip(train.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..train.len() {
            for ((v, x), m) in var.iter_mut().zip(train.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Normalizer { mean, scale }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let d = ds.num_features();
        let features = ds
            .features()
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i % d]) / self.scale[i % d])
            .collect();
        Dataset {
            features,
            ..ds.clone()
        }
    }

    pub fn invert(&self, ds: &Dataset) -> Dataset {
        let d = ds.num_features();
        let features = ds
            .features()
            .iter()
            .enumerate()
            .map(|(i, x)| x * self.scale[i % d] + self.mean[i % d])
            .collect();
        Dataset {
            features,
            ..ds.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded stratified split into contiguous train/val/test partitions.
///
/// Rows of each class are shuffled and spread evenly over a single ordering
/// (the `i`-th of `n_c` rows of class `c` sits at relative position
/// `(i + u) / n_c` with `u` uniform), so every contiguous slice holds classes
/// in proportion. Split sizes are `round(f * N)`, with the test split taking
/// the remainder when the fractions sum to one.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Splits, DataError> {
    let (ft, fv, fs) = fractions;
    let sum = ft + fv + fs;
    if [ft, fv, fs].iter().any(|f| !f.is_finite() || *f < 0.0) || sum <= 0.0 || sum > 1.0 + 1e-9 {
        return Err(DataError::Fraction(format!(
            "({ft}, {fv}, {fs}) must be non-negative with 0 < sum <= 1"
        )));
    }
    let n = ds.len();
    let mut rng = rng_from_seed(derive_seed(seed, "split", 0));

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(n);
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
        let nc = rows.len() as f64;
        for (i, &r) in rows.iter().enumerate() {
            let u: f64 = rng.gen();
            keyed.push(((i as f64 + u) / nc, r));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, r)| r).collect();

    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    let n_test = if (sum - 1.0).abs() <= 1e-9 {
        n - n_train - n_val
    } else {
        ((fs * n as f64).round() as usize).min(n - n_train - n_val)
    };
    Ok(Splits {
        train: ds.select(&order[..n_train]),
        val: ds.select(&order[n_train..n_train + n_val]),
        test: ds.select(&order[n_train + n_val..n_train + n_val + n_test]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_per_class: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    pub seed: u64,
}

/// Unit-variance Gaussian clusters. Class centers are random directions
/// rescaled so the closest pair is exactly `separation` apart. Row `i` belongs
/// to class `i mod C`.
pub fn synth_blobs(spec: &BlobSpec) -> Result<Dataset, DataError> {
    let BlobSpec {
        n_per_class,
        dim,
        classes,
        separation,
        seed,
    } = *spec;
    if n_per_class == 0 || dim == 0 || classes == 0 || !(separation > 0.0) {
        return Err(DataError::Invalid("blob parameters must be positive".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "blobs", 0));
    let mut centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            let d: f64 = centers[a]
                .iter()
                .zip(&centers[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if min_dist.is_finite() && min_dist > 0.0 {
        let k = separation / min_dist;
        centers.iter_mut().flatten().for_each(|x| *x *= k);
    }
    let n = n_per_class * classes;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &mu in &centers[c] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(mu + z);
        }
        labels.push(c);
    }
    Dataset::new(features, labels, dim, classes)
}

/// Class centroids of a dataset (used by tests and diagnostics).
pub fn centroids(ds: &Dataset) -> Vec<Vec<f64>> {
    let d = ds.num_features();
    let mut sums = vec![vec![0.0; d]; ds.num_classes()];
    let counts = ds.class_counts();
    for i in 0..ds.len() {
        for (s, x) in sums[ds.labels()[i]].iter_mut().zip(ds.row(i)) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    sums
}
