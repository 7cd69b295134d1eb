//! NSGA-II over architecture genomes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::space::{ArchitectureGenome, SearchSpace, GENE_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    /// Maps a value onto the all-minimize canonical scale.
    pub fn canonical(self, v: f64) -> f64 {
        match self {
            Sense::Minimize => v,
            Sense::Maximize => -v,
        }
    }
}

#[derive(Debug, Error)]
pub enum MooError {
    #[error("objective vectors differ in length ({left} vs {right})")]
    DimensionMismatch { left: usize, right: usize },
    #[error("objective vectors disagree on optimization senses")]
    SenseMismatch,
    #[error("objective `{0}` is not part of this search")]
    ObjectiveMissing(String),
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("evaluator panicked on trial {trial}: {message}")]
    EvaluatorPanic { trial: usize, message: String },
    #[error("evaluator returned {found} objectives, expected {expected}")]
    Arity { expected: usize, found: usize },
    #[error("trial log: {0}")]
    Log(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub values: Vec<f64>,
    pub senses: Vec<Sense>,
}

impl ObjectiveVector {
    pub fn new(values: Vec<f64>, senses: Vec<Sense>) -> Result<Self, MooError> {
        if values.len() != senses.len() {
            return Err(MooError::DimensionMismatch {
                left: values.len(),
                right: senses.len(),
            });
        }
        Ok(Self { values, senses })
    }

    pub fn minimize(values: Vec<f64>) -> Self {
        let senses = vec![Sense::Minimize; values.len()];
        Self { values, senses }
    }

    pub fn canonical(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.senses)
            .map(|(&v, s)| s.canonical(v))
            .collect()
    }
}

/// True iff `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> Result<bool, MooError> {
    if a.values.len() != b.values.len() {
        return Err(MooError::DimensionMismatch {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    if a.senses != b.senses {
        return Err(MooError::SenseMismatch);
    }
    Ok(dominates_min(&a.canonical(), &b.canonical()))
}

/// Dominance on canonical (all-minimize) points of equal length.
pub fn dominates_min(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        strictly |= x < y;
    }
    strictly
}

/// Fast non-dominated sort on canonical points. Fronts list indices in
/// ascending order.
pub fn sort_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates_min(&points[i], &points[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates_min(&points[j], &points[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each point in a front of canonical points.
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0; n];
    let dims = front[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..dims {
        order.sort_by(|&a, &b| front[a][m].total_cmp(&front[b][m]).then(a.cmp(&b)));
        let lo = front[order[0]][m];
        let hi = front[order[n - 1]][m];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 || !range.is_finite() {
            continue;
        }
        for w in 1..n - 1 {
            dist[order[w]] += (front[order[w + 1]][m] - front[order[w - 1]][m]) / range;
        }
    }
    dist
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: ArchitectureGenome,
    pub key: String,
    pub objectives: ObjectiveVector,
    pub rank: usize,
    pub crowding: f64,
    pub trial_index: usize,
}

/// Sorts `pop` into fronts of indices, writing each member's rank and its
/// crowding distance within its front.
pub fn non_dominated_sort(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let points: Vec<Vec<f64>> = pop.iter().map(|p| p.objectives.canonical()).collect();
    let fronts = sort_fronts(&points);
    for (rank, front) in fronts.iter().enumerate() {
        let pts: Vec<Vec<f64>> = front.iter().map(|&i| points[i].clone()).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&pts)) {
            pop[i].rank = rank;
            pop[i].crowding = d;
        }
    }
    fronts
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: String,
    pub sense: Sense,
}

impl ObjectiveSpec {
    pub fn new(name: &str, sense: Sense) -> Self {
        Self {
            name: name.into(),
            sense,
        }
    }
}

/// Named objective bundles; `Custom` takes metric names in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveSet {
    /// accuracy, estimated average resources, estimated clock cycles
    Snacpack,
    /// accuracy, BOPs
    Nac,
    Custom(Vec<String>),
}

pub const MAXIMIZED_METRICS: [&str; 1] = ["accuracy"];

impl ObjectiveSet {
    pub fn names(&self) -> Vec<String> {
        match self {
            ObjectiveSet::Snacpack => vec![
                "accuracy".into(),
                "est_avg_resources".into(),
                "est_clock_cycles".into(),
            ],
            ObjectiveSet::Nac => vec!["accuracy".into(), "bops".into()],
            ObjectiveSet::Custom(names) => names.clone(),
        }
    }

    pub fn specs(&self) -> Vec<ObjectiveSpec> {
        self.names()
            .iter()
            .map(|n| {
                let sense = if MAXIMIZED_METRICS.contains(&n.as_str()) {
                    Sense::Maximize
                } else {
                    Sense::Minimize
                };
                ObjectiveSpec::new(n, sense)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub population_size: usize,
    pub total_trials: usize,
    pub epochs_per_trial: usize,
    pub seed: u64,
    pub objective_set: ObjectiveSet,
    pub crossover_prob: f64,
    /// Per-gene mutation probability; `None` means one over the gene count.
    pub mutation_rate: Option<f64>,
    /// Stop after this many consecutive generations produce no new trial.
    pub max_stale_generations: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population_size: 20,
            total_trials: 500,
            epochs_per_trial: 5,
            seed: 0,
            objective_set: ObjectiveSet::Snacpack,
            crossover_prob: 0.9,
            mutation_rate: None,
            max_stale_generations: 100,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), MooError> {
        let err = |m: &str| Err(MooError::Config(m.into()));
        if self.population_size < 2 || self.population_size % 2 != 0 {
            return err("population_size must be even and at least 2");
        }
        if self.total_trials < self.population_size {
            return err("total_trials must be at least population_size");
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return err("crossover_prob must lie in [0, 1]");
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return err("mutation_rate must lie in [0, 1]");
            }
        }
        let names = self.objective_set.names();
        if names.is_empty() {
            return err("objective_set is empty");
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(MooError::Config(format!("objective `{n}` listed twice")));
            }
        }
        Ok(())
    }

    pub fn per_gene_mutation_rate(&self) -> f64 {
        self.mutation_rate.unwrap_or(1.0 / GENE_COUNT as f64)
    }
}

/// What an evaluator sees about the trial it is running.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialContext {
    pub trial_index: usize,
    pub generation: usize,
    /// Derived from the search seed and trial index only.
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    /// One value per objective, in objective-set order.
    pub objectives: Vec<f64>,
    /// Extra metrics recorded in the trial log.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub generation: usize,
    pub seed: u64,
    pub genome: ArchitectureGenome,
    pub key: String,
    pub objectives: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub objectives: Vec<ObjectiveSpec>,
    pub trials: Vec<TrialRecord>,
    /// Non-dominated set over every evaluated genome, by trial index.
    pub archive: Vec<Individual>,
    pub generations: usize,
    /// Evaluator invocations; cache hits are free.
    pub evaluations: usize,
    pub stopped_stale: bool,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".into()
    }
}

struct Search<'a, E> {
    space: &'a SearchSpace,
    cfg: &'a SearchConfig,
    specs: Vec<ObjectiveSpec>,
    senses: Vec<Sense>,
    evaluator: &'a E,
    everyone: Vec<Individual>,
    cache: HashMap<String, usize>,
    trials: Vec<TrialRecord>,
}

impl<E> Search<'_, E>
where
    E: Fn(&ArchitectureGenome, &TrialContext) -> Result<Evaluation, String> + Sync,
{
    /// Worst-case objectives for a failed trial: zero (or ten times the
    /// lowest seen) for maximized objectives, ten times the largest seen
    /// (or 1e9) for minimized ones.
    fn worst_case(&self) -> Vec<f64> {
        let ok: Vec<&TrialRecord> = self.trials.iter().filter(|t| t.error.is_none()).collect();
        self.senses
            .iter()
            .enumerate()
            .map(|(m, sense)| match sense {
                Sense::Maximize => ok
                    .iter()
                    .map(|t| t.objectives[m])
                    .fold(0.0f64, |a, v| a.min(10.0 * v)),
                Sense::Minimize => {
                    let hi = ok.iter().map(|t| t.objectives[m]).fold(f64::NEG_INFINITY, f64::max);
                    if hi > 0.0 {
                        10.0 * hi
                    } else {
                        1e9
                    }
                }
            })
            .collect()
    }

    /// Evaluates a batch of new genomes concurrently and appends them in
    /// trial order. Returns their indices into `everyone`.
    fn evaluate(
        &mut self,
        batch: Vec<ArchitectureGenome>,
        generation: usize,
        sink: &mut dyn FnMut(&TrialRecord) -> Result<(), MooError>,
    ) -> Result<Vec<usize>, MooError> {
        let base = self.trials.len();
        let seed = self.cfg.seed;
        let evaluator = self.evaluator;
        let results: Vec<(Result<Result<Evaluation, String>, String>, f64)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, g)| {
                let ctx = TrialContext {
                    trial_index: base + i,
                    generation,
                    seed: derive_seed(seed, "trial", (base + i) as u64),
                };
                let start = Instant::now();
                let r = catch_unwind(AssertUnwindSafe(|| evaluator(g, &ctx))).map_err(panic_message);
                (r, start.elapsed().as_secs_f64())
            })
            .collect();

        let mut added = Vec::with_capacity(batch.len());
        for (i, (genome, (result, wall))) in batch.into_iter().zip(results).enumerate() {
            let trial_index = base + i;
            let (objectives, metrics, error) = match result {
                Err(message) => {
                    return Err(MooError::EvaluatorPanic {
                        trial: trial_index,
                        message,
                    })
                }
                Ok(Ok(e)) if e.objectives.len() != self.specs.len() => {
                    return Err(MooError::Arity {
                        expected: self.specs.len(),
                        found: e.objectives.len(),
                    })
                }
                Ok(Ok(e)) if e.objectives.iter().all(|v| v.is_finite()) => {
                    (e.objectives, e.metrics, None)
                }
                Ok(Ok(e)) => (self.worst_case(), e.metrics, Some("non-finite objective".into())),
                Ok(Err(msg)) => (self.worst_case(), BTreeMap::new(), Some(msg)),
            };
            if let Some(msg) = &error {
                log::warn!("trial {trial_index} failed: {msg}");
            }
            let key = genome.key();
            let record = TrialRecord {
                trial_index,
                generation,
                seed: derive_seed(seed, "trial", trial_index as u64),
                genome: genome.clone(),
                key: key.clone(),
                objectives: objectives.clone(),
                metrics,
                error,
                wall_time_s: wall,
            };
            sink(&record)?;
            self.trials.push(record);
            self.cache.insert(key.clone(), self.everyone.len());
            added.push(self.everyone.len());
            self.everyone.push(Individual {
                genome,
                key,
                objectives: ObjectiveVector {
                    values: objectives,
                    senses: self.senses.clone(),
                },
                rank: 0,
                crowding: 0.0,
                trial_index,
            });
        }
        Ok(added)
    }

    /// Ranks the members of `ids` among themselves.
    fn rank(&mut self, ids: &[usize]) -> Vec<Vec<usize>> {
        let mut sub: Vec<Individual> = ids.iter().map(|&i| self.everyone[i].clone()).collect();
        let fronts = non_dominated_sort(&mut sub);
        for (local, &i) in ids.iter().enumerate() {
            self.everyone[i].rank = sub[local].rank;
            self.everyone[i].crowding = sub[local].crowding;
        }
        fronts
            .into_iter()
            .map(|f| f.into_iter().map(|l| ids[l]).collect())
            .collect()
    }

    fn better(&self, a: usize, b: usize) -> Ordering {
        let (x, y) = (&self.everyone[a], &self.everyone[b]);
        x.rank
            .cmp(&y.rank)
            .then_with(|| y.crowding.total_cmp(&x.crowding))
    }

    fn tournament(&self, pop: &[usize], rng: &mut Rng) -> usize {
        let a = pop[rng.gen_range(0..pop.len())];
        let b = pop[rng.gen_range(0..pop.len())];
        match self.better(a, b) {
            Ordering::Less => a,
            Ordering::Greater => b,
            Ordering::Equal => {
                if rng.gen_bool(0.5) {
                    a
                } else {
                    b
                }
            }
        }
    }

    fn select(&mut self, candidates: &[usize], size: usize) -> Vec<usize> {
        let fronts = self.rank(candidates);
        let mut next = Vec::with_capacity(size);
        for mut front in fronts {
            if next.len() + front.len() <= size {
                next.extend(front);
                continue;
            }
            front.sort_by(|&a, &b| {
                self.everyone[b]
                    .crowding
                    .total_cmp(&self.everyone[a].crowding)
                    .then(self.everyone[a].trial_index.cmp(&self.everyone[b].trial_index))
            });
            next.extend(front.into_iter().take(size - next.len()));
            break;
        }
        next
    }
}

/// Runs NSGA-II until `total_trials` genomes have been evaluated.
///
/// Generation 0 samples up to `population_size` distinct genomes. Each later
/// generation fills an offspring pool of the same size by binary tournament
/// on (rank, crowding), crossover with `crossover_prob`, and per-gene
/// mutation; offspring whose key was seen before reuse the cached result
/// without costing a trial. Survivors are the best `population_size` of
/// parents plus offspring by front, then crowding.
///
/// `sink` receives every trial record in trial order as soon as its
/// generation finishes, so a partial log survives an aborted run.
/// Evaluations within a generation run in parallel; each gets a seed that
/// depends only on `cfg.seed` and its trial index, so the log is independent
/// of scheduling.
pub fn evolve<E>(
    space: &SearchSpace,
    cfg: &SearchConfig,
    evaluator: &E,
    sink: &mut dyn FnMut(&TrialRecord) -> Result<(), MooError>,
) -> Result<SearchOutcome, MooError>
where
    E: Fn(&ArchitectureGenome, &TrialContext) -> Result<Evaluation, String> + Sync,
{
    cfg.validate()?;
    let specs = cfg.objective_set.specs();
    let mut s = Search {
        space,
        cfg,
        senses: specs.iter().map(|o| o.sense).collect(),
        specs,
        evaluator,
        everyone: Vec::new(),
        cache: HashMap::new(),
        trials: Vec::new(),
    };
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "nsga2", 0));
    let pop_size = cfg.population_size;
    let rate = cfg.per_gene_mutation_rate();

    let mut first: Vec<ArchitectureGenome> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for _ in 0..pop_size.saturating_mul(1000) {
        if first.len() == pop_size {
            break;
        }
        let g = s.space.sample(&mut rng);
        if seen.insert(g.key(), ()).is_none() {
            first.push(g);
        }
    }
    let mut population = s.evaluate(first, 0, sink)?;
    let mut generation = 0;
    let mut stale = 0;
    let mut stopped_stale = false;

    while s.trials.len() < cfg.total_trials {
        generation += 1;
        s.rank(&population);
        let mut offspring: Vec<usize> = Vec::new();
        let mut batch: Vec<ArchitectureGenome> = Vec::new();
        let mut pending: HashMap<String, usize> = HashMap::new();
        let mut produced = 0;
        while produced < pop_size {
            let p1 = s.tournament(&population, &mut rng);
            let p2 = s.tournament(&population, &mut rng);
            let (a, b) = (&s.everyone[p1].genome, &s.everyone[p2].genome);
            let (c1, c2) = if rng.gen_bool(cfg.crossover_prob) {
                s.space.crossover(a, b, &mut rng)
            } else {
                (a.clone(), b.clone())
            };
            for child in [c1, c2] {
                produced += 1;
                let child = s.space.mutate(&child, rate, &mut rng);
                let key = child.key();
                if let Some(&i) = s.cache.get(&key) {
                    offspring.push(i);
                } else if !pending.contains_key(&key)
                    && s.trials.len() + batch.len() < cfg.total_trials
                {
                    pending.insert(key, batch.len());
                    batch.push(child);
                }
            }
        }
        if batch.is_empty() {
            stale += 1;
            if stale >= cfg.max_stale_generations {
                log::warn!("no new genomes for {stale} generations; stopping early");
                stopped_stale = true;
                break;
            }
        } else {
            stale = 0;
            offspring.extend(s.evaluate(batch, generation, sink)?);
        }
        let mut candidates = population.clone();
        for i in offspring {
            if !candidates.contains(&i) {
                candidates.push(i);
            }
        }
        population = s.select(&candidates, pop_size);
        log::info!(
            "generation {generation}: {} trials, population {}",
            s.trials.len(),
            population.len()
        );
    }

    let all: Vec<usize> = (0..s.everyone.len()).collect();
    let fronts = s.rank(&all);
    let mut archive: Vec<Individual> = fronts
        .first()
        .map(|f| f.iter().map(|&i| s.everyone[i].clone()).collect())
        .unwrap_or_default();
    archive.sort_by_key(|i| i.trial_index);
    Ok(SearchOutcome {
        objectives: s.specs,
        evaluations: s.trials.len(),
        trials: s.trials,
        archive,
        generations: generation,
        stopped_stale,
    })
}

/// Archive members whose `accuracy` objective is strictly above
/// `min_accuracy`, in archive order.
pub fn pareto_filter(
    archive: &[Individual],
    objectives: &[ObjectiveSpec],
    min_accuracy: f64,
) -> Result<Vec<Individual>, MooError> {
    let idx = objectives
        .iter()
        .position(|o| o.name == "accuracy")
        .ok_or_else(|| MooError::ObjectiveMissing("accuracy".into()))?;
    Ok(archive
        .iter()
        .filter(|i| i.objectives.values[idx] > min_accuracy)
        .cloned()
        .collect())
}
