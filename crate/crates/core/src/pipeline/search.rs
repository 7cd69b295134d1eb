use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::LoadedConfig;
use super::rundir::{relative, sha256_hex, write_atomic, write_json, CommandLog, RunLock, CONFIG_COPY};
use super::trials::{TrialWriter, TIMINGS_CSV, TRIALS_CSV};
use super::{network_metrics, PipelineError};
use crate::moo::{evolve, Evaluation, ObjectiveSpec, TrialContext};
use crate::space::ArchitectureGenome;
use crate::train::{evaluate, train, TrainConfig};

pub const PARETO_JSON: &str = "pareto.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoMember {
    pub trial_index: usize,
    pub genome_key: String,
    pub genome: ArchitectureGenome,
    pub objectives: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoFile {
    pub objectives: Vec<ObjectiveSpec>,
    pub generations: usize,
    pub evaluations: usize,
    pub members: Vec<ParetoMember>,
}

/// Runs the global search described by `cfg` and returns the run directory.
pub fn cmd_search(cfg: &LoadedConfig) -> Result<PathBuf, PipelineError> {
    let dir = cfg.output_dir();
    let _lock = RunLock::acquire(&dir)?;
    let hash = sha256_hex(cfg.text.as_bytes());
    write_atomic(&dir.join(CONFIG_COPY), cfg.text.as_bytes())?;
    let mut log = CommandLog::start("search", Vec::new(), Some(hash.clone()));
    let result = run(cfg, &dir, &mut log);
    log.finish(&dir, &result, Some(hash))?;
    result.map(|_| dir)
}

fn run(cfg: &LoadedConfig, dir: &Path, log: &mut CommandLog) -> Result<(), PipelineError> {
    let data = cfg.datasets()?;
    let space = cfg.space(&data)?;
    let estimator = cfg.estimator()?;
    let device = cfg.device().map_err(PipelineError::Internal)?;
    let search = cfg.search_config();
    let bits = cfg.config.estimator.precision_bits;
    let specs = search.objective_set.specs();
    let names: Vec<String> = specs.iter().map(|o| o.name.clone()).collect();

    log.artifact("trials", TRIALS_CSV);
    log.artifact("timings", TIMINGS_CSV);
    let mut writer = TrialWriter::create(dir, &specs)?;
    log::info!(
        "search: {} trials, population {}, {} train / {} val rows",
        search.total_trials,
        search.population_size,
        data.train.len(),
        data.val.len()
    );

    let evaluator = |g: &ArchitectureGenome, ctx: &TrialContext| -> Result<Evaluation, String> {
        let net = space.decode(g).map_err(|e| e.to_string())?;
        let tc = TrainConfig::for_network(&net, search.epochs_per_trial, ctx.seed);
        let model = train(&net, &data.train, &data.val, &tc).map_err(|e| e.to_string())?;
        let accuracy = evaluate(&model, &data.val).map_err(|e| e.to_string())?;
        let mut metrics = network_metrics(&net.with_precision(bits, bits), estimator.as_ref(), &device);
        metrics.insert("accuracy".into(), accuracy);
        let objectives = names.iter().map(|n| metrics[n]).collect();
        log::debug!("trial {}: {} accuracy {accuracy:.4}", ctx.trial_index, g.key());
        Ok(Evaluation { objectives, metrics })
    };
    let mut sink = |t: &crate::moo::TrialRecord| {
        writer
            .append(t)
            .map_err(|e| crate::moo::MooError::Log(e.to_string()))
    };
    let outcome = evolve(&space, &search, &evaluator, &mut sink)?;

    let by_index: BTreeMap<usize, &crate::moo::TrialRecord> =
        outcome.trials.iter().map(|t| (t.trial_index, t)).collect();
    let members = outcome
        .archive
        .iter()
        .map(|ind| ParetoMember {
            trial_index: ind.trial_index,
            genome_key: ind.key.clone(),
            genome: ind.genome.clone(),
            objectives: names.iter().cloned().zip(ind.objectives.values.iter().copied()).collect(),
            metrics: by_index[&ind.trial_index].metrics.clone(),
        })
        .collect();
    let pareto = ParetoFile {
        objectives: outcome.objectives.clone(),
        generations: outcome.generations,
        evaluations: outcome.evaluations,
        members,
    };
    write_json(&dir.join(PARETO_JSON), &pareto)?;
    log.artifact("pareto", relative(dir, &dir.join(PARETO_JSON)));
    log.artifact("config", CONFIG_COPY);
    log::info!(
        "search done: {} evaluations over {} generations, {} Pareto members",
        outcome.evaluations,
        outcome.generations,
        pareto.members.len()
    );
    Ok(())
}
