use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::LoadedConfig;
use super::rundir::{read_json, relative, sha256_hex, write_atomic, write_json, CommandLog, RunLock, CONFIG_COPY};
use super::search::{ParetoFile, PARETO_JSON};
use super::trials::{read_trials, TRIALS_CSV};
use super::PipelineError;
use crate::ir::{NetworkDescription, FULL_PRECISION_BITS};
use crate::local::{export_model, local_search, select_checkpoint, CheckpointRecord, CHECKPOINTS_CSV, MODEL_JSON, WEIGHTS_BIN};
use crate::space::ArchitectureGenome;
use crate::train::artifact::read_manifest;

pub const LOCAL_DIR: &str = "local";
pub const SELECTION_JSON: &str = "selection.json";

#[derive(Clone, Debug)]
pub struct LocalArgs {
    pub config: PathBuf,
    pub from: PathBuf,
    pub genome: Option<String>,
    pub model: Option<PathBuf>,
    pub target_sparsity: f64,
    pub min_accuracy: f64,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub source: String,
    pub target_sparsity: f64,
    pub min_accuracy: f64,
    pub below_min_accuracy: bool,
    pub record: CheckpointRecord,
    pub model: String,
}

/// Finds `key` among the Pareto members, then among all trials.
pub fn resolve_genome(run: &Path, key: &str) -> Result<ArchitectureGenome, PipelineError> {
    let pareto: ParetoFile = read_json(&run.join(PARETO_JSON))?;
    if let Some(m) = pareto.members.iter().find(|m| m.genome_key == key) {
        return Ok(m.genome.clone());
    }
    let trials_path = run.join(TRIALS_CSV);
    if trials_path.is_file() {
        if let Some(r) = read_trials(&trials_path)?.rows.into_iter().find(|r| r.key == key) {
            return Ok(r.genome);
        }
    }
    Err(PipelineError::UnknownGenomeKey {
        key: key.into(),
        available: pareto.members.into_iter().map(|m| m.genome_key).collect(),
    })
}

fn strip_annotations(mut net: NetworkDescription) -> NetworkDescription {
    for l in &mut net.layers {
        l.sparsity = 0.0;
        l.weight_bits = FULL_PRECISION_BITS;
        l.act_bits = FULL_PRECISION_BITS;
    }
    net
}

/// Compresses one architecture from a finished search and exports the
/// selected checkpoint. Returns the local-search directory.
pub fn cmd_localsearch(args: &LocalArgs) -> Result<PathBuf, PipelineError> {
    if args.genome.is_some() == args.model.is_some() {
        return Err(PipelineError::Usage("pass exactly one of --genome or --model".into()));
    }
    if !(0.0..=1.0).contains(&args.target_sparsity) {
        return Err(PipelineError::Usage("--target-sparsity must lie in [0, 1]".into()));
    }
    let cfg = LoadedConfig::from_path(&args.config)?;
    if !args.from.is_dir() {
        return Err(PipelineError::MissingArtifact(format!(
            "run directory {} does not exist",
            args.from.display()
        )));
    }
    let _lock = RunLock::acquire(&args.from)?;
    let hash = sha256_hex(cfg.text.as_bytes());
    let mut log = CommandLog::start(
        "localsearch",
        vec![
            format!("genome={}", args.genome.clone().unwrap_or_default()),
            format!("model={}", args.model.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            format!("target_sparsity={}", args.target_sparsity),
            format!("min_accuracy={}", args.min_accuracy),
        ],
        Some(hash.clone()),
    );
    let result = run(&cfg, args, &hash, &mut log);
    log.finish(&args.from, &result, None)?;
    result
}

fn run(cfg: &LoadedConfig, args: &LocalArgs, hash: &str, log: &mut CommandLog) -> Result<PathBuf, PipelineError> {
    let data = cfg.datasets()?;
    let (net, source) = match (&args.genome, &args.model) {
        (Some(key), _) => {
            let genome = resolve_genome(&args.from, key)?;
            let space = cfg.space(&data)?;
            let net = space.decode(&genome).map_err(|e| PipelineError::Config {
                path: args.config.display().to_string(),
                message: format!("genome `{key}` does not decode in this config's space: {e}"),
            })?;
            (net, key.clone())
        }
        (None, Some(path)) => {
            let manifest = read_manifest(path).map_err(|e| PipelineError::MissingArtifact(e.to_string()))?;
            (strip_annotations(manifest.network), path.display().to_string())
        }
        (None, None) => unreachable!("checked by the caller"),
    };
    if net.input_dim() != Some(data.input_dim) || net.output_dim() != Some(data.num_classes) {
        return Err(PipelineError::Data(format!(
            "network maps {:?} -> {:?} but the data has {} features and {} classes",
            net.input_dim(),
            net.output_dim(),
            data.input_dim,
            data.num_classes
        )));
    }
    let out = match &args.out {
        Some(o) => o.clone(),
        None => args
            .from
            .join(LOCAL_DIR)
            .join(&sha256_hex(source.as_bytes())[..8]),
    };
    std::fs::create_dir_all(&out).map_err(PipelineError::io(&out))?;
    write_atomic(&out.join(CONFIG_COPY), cfg.text.as_bytes())?;

    let lcfg = cfg.local_config();
    let estimator = cfg.estimator()?;
    let records = local_search(&net, &data.train, &data.val, &lcfg, estimator.as_ref(), &out)?;
    let sel = select_checkpoint(&records, args.target_sparsity, args.min_accuracy)?;
    let provenance = serde_json::json!({
        "source": source,
        "master_seed": cfg.config.master_seed,
        "local_seed": lcfg.seed,
        "config_hash": hash,
        "local_search": lcfg,
    });
    let model_path = export_model(&out, &sel.record, &out, provenance)?;
    let selection = SelectionFile {
        source,
        target_sparsity: args.target_sparsity,
        min_accuracy: args.min_accuracy,
        below_min_accuracy: sel.below_min_accuracy,
        record: sel.record.clone(),
        model: MODEL_JSON.into(),
    };
    write_json(&out.join(SELECTION_JSON), &selection)?;
    for (name, file) in [
        ("checkpoints", CHECKPOINTS_CSV),
        ("model", MODEL_JSON),
        ("weights", WEIGHTS_BIN),
        ("selection", SELECTION_JSON),
    ] {
        log.artifact(name, relative(&args.from, &out.join(file)));
    }
    log::info!(
        "selected checkpoint {} (sparsity {:.3}, accuracy {:.4}){}; exported {}",
        sel.record.iteration,
        sel.record.sparsity,
        sel.record.val_accuracy,
        if sel.below_min_accuracy { " below the accuracy floor" } else { "" },
        model_path.display()
    );
    Ok(out)
}
