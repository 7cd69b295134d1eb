//! Compression of a chosen architecture: full-precision warm-up, then rounds
//! of global magnitude pruning followed by quantization-aware fine-tuning.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::estimator::{ResourceEstimate, ResourceEstimator};
use crate::ir::{NetworkDescription, FULL_PRECISION_BITS};
use crate::rng::derive_seed;
use crate::train::artifact::{self, ArtifactError};
use crate::train::{self, calibrate_activation_ranges, evaluate, fit, prune_step, QuantConfig, TrainConfig, TrainError, TrainedModel};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CHECKPOINTS_CSV: &str = "checkpoints.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSearchConfig {
    pub warmup_epochs: usize,
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub prune_fraction: f64,
    pub qat_bits: u32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 5,
            iterations: 10,
            epochs_per_iteration: 10,
            prune_fraction: 0.2,
            qat_bits: 8,
            batch_size: train::DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl LocalSearchConfig {
    pub fn validate(&self) -> Result<(), LocalError> {
        if !(0.0..1.0).contains(&self.prune_fraction) {
            return Err(LocalError::Config(format!(
                "prune_fraction {} must lie in [0, 1)",
                self.prune_fraction
            )));
        }
        if !(2..=16).contains(&self.qat_bits) {
            return Err(LocalError::Config(format!(
                "qat_bits {} must lie in 2..=16",
                self.qat_bits
            )));
        }
        if self.batch_size == 0 {
            return Err(LocalError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LocalError {
    #[error("invalid local-search config: {0}")]
    Config(String),
    #[error("local search aborted after {completed} checkpoints: {source}")]
    Aborted {
        completed: usize,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint log {path}: {message}")]
    Csv { path: String, message: String },
    #[error("no checkpoints to choose from")]
    EmptyRecords,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LocalError + '_ {
    move |source| LocalError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iteration: usize,
    pub sparsity: f64,
    pub weight_bits: u32,
    pub val_accuracy: f64,
    pub bops: u64,
    pub estimate: ResourceEstimate,
    /// Model manifest, relative to the local-search directory.
    pub weights_path: String,
}

const CSV_HEADER: [&str; 12] = [
    "iteration",
    "sparsity",
    "weight_bits",
    "val_accuracy",
    "bops",
    "bram",
    "dsp",
    "ff",
    "lut",
    "ii_cycles",
    "latency_cycles",
    "weights_path",
];

impl CheckpointRecord {
    fn csv_fields(&self) -> Vec<String> {
        let e = &self.estimate;
        vec![
            self.iteration.to_string(),
            self.sparsity.to_string(),
            self.weight_bits.to_string(),
            self.val_accuracy.to_string(),
            self.bops.to_string(),
            e.bram.to_string(),
            e.dsp.to_string(),
            e.ff.to_string(),
            e.lut.to_string(),
            e.ii_cycles.to_string(),
            e.latency_cycles.to_string(),
            self.weights_path.clone(),
        ]
    }
}

pub fn read_checkpoints(path: &Path) -> Result<Vec<CheckpointRecord>, LocalError> {
    let bad = |message: String| LocalError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| -> Result<f64, LocalError> {
            row[i]
                .parse()
                .map_err(|_| bad(format!("column {} is not a number: `{}`", CSV_HEADER[i], &row[i])))
        };
        let int = |i: usize| -> Result<u64, LocalError> {
            row[i]
                .parse()
                .map_err(|_| bad(format!("column {} is not an integer: `{}`", CSV_HEADER[i], &row[i])))
        };
        out.push(CheckpointRecord {
            iteration: int(0)? as usize,
            sparsity: f(1)?,
            weight_bits: int(2)? as u32,
            val_accuracy: f(3)?,
            bops: int(4)?,
            estimate: ResourceEstimate {
                bram: f(5)?,
                dsp: f(6)?,
                ff: f(7)?,
                lut: f(8)?,
                ii_cycles: f(9)?,
                latency_cycles: f(10)?,
            },
            weights_path: row[11].to_string(),
        });
    }
    Ok(out)
}

struct CheckpointLog {
    path: PathBuf,
    file: fs::File,
}

impl CheckpointLog {
    fn create(path: PathBuf) -> Result<Self, LocalError> {
        let mut file = fs::File::create(&path).map_err(io_err(&path))?;
        writeln!(file, "{}", CSV_HEADER.join(",")).map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    fn append(&mut self, rec: &CheckpointRecord) -> Result<(), LocalError> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(rec.csv_fields()).map_err(|e| LocalError::Csv {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        let bytes = w.into_inner().map_err(|e| LocalError::Csv {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        self.file.write_all(&bytes).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}

/// Everything a caller needs to rebuild the search inputs, stored with each
/// checkpoint.
fn checkpoint_provenance(cfg: &LocalSearchConfig, iteration: usize) -> serde_json::Value {
    serde_json::json!({ "local_search": cfg, "iteration": iteration })
}

/// Runs warm-up plus `cfg.iterations` prune/QAT rounds, writing one model
/// per checkpoint under `dir/checkpoints/` and appending to
/// `dir/checkpoints.csv` as each checkpoint completes.
///
/// Checkpoint 0 is the full-precision warm-up model. Round `k` prunes
/// `prune_fraction` of the surviving weights, switches on `qat_bits`
/// fake quantization (calibrating activation ranges the first time) and
/// fine-tunes for `epochs_per_iteration` at the genome's learning rate.
/// Accuracy is measured on `val`.
pub fn local_search(
    net: &NetworkDescription,
    train_set: &Dataset,
    val: &Dataset,
    cfg: &LocalSearchConfig,
    estimator: &dyn ResourceEstimator,
    dir: &Path,
) -> Result<Vec<CheckpointRecord>, LocalError> {
    cfg.validate()?;
    net.validate_shapes().map_err(TrainError::from)?;
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let mut log = CheckpointLog::create(dir.join(CHECKPOINTS_CSV))?;
    let mut records: Vec<CheckpointRecord> = Vec::new();

    let stage_cfg = |label: &str, k: usize, epochs: usize| {
        let mut c = TrainConfig::for_network(net, epochs, derive_seed(cfg.seed, label, k as u64));
        c.batch_size = cfg.batch_size;
        c
    };
    let abort = |completed: usize| move |source: TrainError| LocalError::Aborted { completed, source };

    let mut model: TrainedModel =
        train::train(net, train_set, val, &stage_cfg("warmup", 0, cfg.warmup_epochs)).map_err(abort(0))?;

    for k in 0..=cfg.iterations {
        if k > 0 {
            let newly = prune_step(&mut model.params, cfg.prune_fraction);
            if !model.params.quant.enabled {
                model.params.quant = QuantConfig::bits(cfg.qat_bits);
                calibrate_activation_ranges(&mut model, train_set).map_err(abort(records.len()))?;
            }
            fit(
                &mut model,
                train_set,
                val,
                &stage_cfg("iteration", k, cfg.epochs_per_iteration),
            )
            .map_err(abort(records.len()))?;
            log::debug!("iteration {k}: pruned {newly} weights");
        }
        let annotated = model.annotated_net();
        let rel = format!("{CHECKPOINT_DIR}/ckpt_{k:03}.json");
        let weights = format!("ckpt_{k:03}.bin");
        artifact::write_model(&model, &dir.join(&rel), &weights, checkpoint_provenance(cfg, k))?;
        let rec = CheckpointRecord {
            iteration: k,
            sparsity: model.params.global_sparsity(),
            weight_bits: if model.params.quant.enabled {
                model.params.quant.weight_bits
            } else {
                FULL_PRECISION_BITS
            },
            val_accuracy: evaluate(&model, val).map_err(abort(records.len()))?,
            bops: annotated.count_bops(),
            estimate: estimator.estimate(&annotated),
            weights_path: rel,
        };
        log::info!(
            "checkpoint {k}: sparsity {:.3}, accuracy {:.4}, bops {}",
            rec.sparsity,
            rec.val_accuracy,
            rec.bops
        );
        log.append(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub record: CheckpointRecord,
    /// Set when no checkpoint met the accuracy floor and the most accurate
    /// one was returned instead.
    pub below_min_accuracy: bool,
}

/// Among checkpoints with `val_accuracy >= min_accuracy`, the one closest to
/// `target_sparsity` (ties: higher accuracy, then earlier iteration). If none
/// qualifies, the most accurate checkpoint, flagged.
pub fn select_checkpoint(
    records: &[CheckpointRecord],
    target_sparsity: f64,
    min_accuracy: f64,
) -> Result<Selection, LocalError> {
    if records.is_empty() {
        return Err(LocalError::EmptyRecords);
    }
    let qualified = records.iter().filter(|r| r.val_accuracy >= min_accuracy);
    let best = qualified.min_by(|a, b| {
        (a.sparsity - target_sparsity)
            .abs()
            .total_cmp(&(b.sparsity - target_sparsity).abs())
            .then(b.val_accuracy.total_cmp(&a.val_accuracy))
            .then(a.iteration.cmp(&b.iteration))
    });
    if let Some(r) = best {
        return Ok(Selection {
            record: r.clone(),
            below_min_accuracy: false,
        });
    }
    let fallback = records
        .iter()
        .min_by(|a, b| {
            b.val_accuracy
                .total_cmp(&a.val_accuracy)
                .then(a.iteration.cmp(&b.iteration))
        })
        .expect("non-empty");
    log::warn!(
        "no checkpoint reaches accuracy {min_accuracy}; using iteration {} ({:.4})",
        fallback.iteration,
        fallback.val_accuracy
    );
    Ok(Selection {
        record: fallback.clone(),
        below_min_accuracy: true,
    })
}

pub const MODEL_JSON: &str = "model.json";
pub const WEIGHTS_BIN: &str = "weights.bin";

/// Loads a checkpoint written by [`local_search`] from `search_dir`.
pub fn load_checkpoint(search_dir: &Path, record: &CheckpointRecord) -> Result<TrainedModel, LocalError> {
    Ok(artifact::read_model(&search_dir.join(&record.weights_path))?.0)
}

/// Writes the checkpoint's model as `out_dir/model.json` +
/// `out_dir/weights.bin`: annotated network, masked (and, under QAT,
/// quantized) weights with per-layer scales, and `provenance`.
pub fn export_model(
    search_dir: &Path,
    record: &CheckpointRecord,
    out_dir: &Path,
    provenance: serde_json::Value,
) -> Result<PathBuf, LocalError> {
    let model = load_checkpoint(search_dir, record)?;
    let path = out_dir.join(MODEL_JSON);
    let mut prov = provenance;
    if let Some(obj) = prov.as_object_mut() {
        obj.insert("checkpoint".into(), serde_json::to_value(record).unwrap_or_default());
    }
    artifact::write_model(&model, &path, WEIGHTS_BIN, prov)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iteration: usize, sparsity: f64, acc: f64) -> CheckpointRecord {
        CheckpointRecord {
            iteration,
            sparsity,
            weight_bits: 8,
            val_accuracy: acc,
            bops: 0,
            estimate: ResourceEstimate::default(),
            weights_path: String::new(),
        }
    }

    fn schedule() -> Vec<CheckpointRecord> {
        (0..=10)
            .map(|k| rec(k, 1.0 - 0.8f64.powi(k as i32), 0.9))
            .collect()
    }

    #[test]
    fn picks_nearest_sparsity() {
        let s = select_checkpoint(&schedule(), 0.5, 0.0).unwrap();
        assert_eq!(s.record.iteration, 3);
        assert!(!s.below_min_accuracy);
    }

    #[test]
    fn single_record() {
        let r = vec![rec(0, 0.0, 0.5)];
        assert_eq!(select_checkpoint(&r, 0.9, 0.0).unwrap().record, r[0]);
    }

    #[test]
    fn fallback_is_flagged() {
        let mut r = schedule();
        r[6].val_accuracy = 0.95;
        let s = select_checkpoint(&r, 0.5, 0.99).unwrap();
        assert!(s.below_min_accuracy);
        assert_eq!(s.record.iteration, 6);
    }

    #[test]
    fn ties_prefer_accuracy() {
        let r = vec![rec(1, 0.4, 0.8), rec(2, 0.6, 0.9)];
        assert_eq!(select_checkpoint(&r, 0.5, 0.0).unwrap().record.iteration, 2);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            select_checkpoint(&[], 0.5, 0.0),
            Err(LocalError::EmptyRecords)
        ));
    }

    #[test]
    fn bad_config() {
        let cfg = LocalSearchConfig {
            prune_fraction: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
