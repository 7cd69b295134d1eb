//! `trials.csv`: one row per evaluated genome, in trial order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::{PipelineError, METRICS};
use crate::moo::{ObjectiveSpec, TrialRecord};
use crate::space::ArchitectureGenome;

pub const TRIALS_CSV: &str = "trials.csv";
pub const TIMINGS_CSV: &str = "timings.csv";

const GENOME_COLUMNS: [&str; 7] = [
    "num_layers",
    "widths",
    "activation",
    "use_batchnorm",
    "learning_rate",
    "l1",
    "dropout",
];

/// Objective columns first, then every other known metric.
pub fn metric_columns(objectives: &[ObjectiveSpec]) -> Vec<String> {
    let mut cols: Vec<String> = objectives.iter().map(|o| o.name.clone()).collect();
    for m in &METRICS {
        if !cols.iter().any(|c| c == m.name) {
            cols.push(m.name.to_string());
        }
    }
    cols
}

pub struct TrialWriter {
    path: PathBuf,
    timings_path: PathBuf,
    trials: csv::Writer<fs::File>,
    timings: fs::File,
    objectives: Vec<String>,
    columns: Vec<String>,
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Internal(format!("writing {}: {e}", path.display()))
}

impl TrialWriter {
    pub fn create(dir: &Path, objectives: &[ObjectiveSpec]) -> Result<Self, PipelineError> {
        let path = dir.join(TRIALS_CSV);
        let timings_path = dir.join(TIMINGS_CSV);
        let columns = metric_columns(objectives);
        let mut trials = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        let mut header: Vec<String> = vec!["trial_index".into(), "generation".into(), "genome_key".into()];
        header.extend(GENOME_COLUMNS.iter().map(|s| s.to_string()));
        header.extend(columns.iter().cloned());
        header.push("status".into());
        trials.write_record(&header).map_err(csv_err(&path))?;
        trials.flush().map_err(PipelineError::io(&path))?;
        let mut timings = fs::File::create(&timings_path).map_err(PipelineError::io(&timings_path))?;
        writeln!(timings, "trial_index,wall_time_s").map_err(PipelineError::io(&timings_path))?;
        Ok(Self {
            path,
            timings_path,
            trials,
            timings,
            objectives: objectives.iter().map(|o| o.name.clone()).collect(),
            columns,
        })
    }

    pub fn append(&mut self, t: &TrialRecord) -> Result<(), PipelineError> {
        let g = &t.genome;
        let mut row: Vec<String> = vec![
            t.trial_index.to_string(),
            t.generation.to_string(),
            t.key.clone(),
            g.num_layers.to_string(),
            g.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-"),
            g.activation.to_string(),
            g.use_batchnorm.to_string(),
            g.learning_rate.to_string(),
            g.l1.to_string(),
            g.dropout.to_string(),
        ];
        for c in &self.columns {
            let v = match self.objectives.iter().position(|o| o == c) {
                Some(i) => Some(t.objectives[i]),
                None if t.error.is_none() => t.metrics.get(c).copied(),
                None => None,
            };
            row.push(v.map(|v| v.to_string()).unwrap_or_default());
        }
        row.push(match &t.error {
            None => "ok".into(),
            Some(e) => format!("failed: {e}"),
        });
        self.trials.write_record(&row).map_err(csv_err(&self.path))?;
        self.trials.flush().map_err(PipelineError::io(&self.path))?;
        writeln!(self.timings, "{},{}", t.trial_index, t.wall_time_s)
            .map_err(PipelineError::io(&self.timings_path))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub trial_index: usize,
    pub generation: usize,
    pub key: String,
    pub genome: ArchitectureGenome,
    pub metrics: BTreeMap<String, f64>,
    pub status: String,
}

pub struct TrialTable {
    pub metric_columns: Vec<String>,
    pub rows: Vec<TrialRow>,
}

pub fn read_trials(path: &Path) -> Result<TrialTable, PipelineError> {
    let bad = |m: String| PipelineError::MissingArtifact(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let fixed = 3 + GENOME_COLUMNS.len();
    if header.len() < fixed + 1 || header[3..fixed] != GENOME_COLUMNS || header.last().map(String::as_str) != Some("status") {
        return Err(bad("unexpected header".into()));
    }
    let metric_columns: Vec<String> = header[fixed..header.len() - 1].to_vec();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, PipelineError> {
            field(i)
                .parse()
                .map_err(|_| bad(format!("column `{}` holds `{}`", header[i], field(i))))
        };
        let int = |i: usize| -> Result<usize, PipelineError> {
            field(i)
                .parse()
                .map_err(|_| bad(format!("column `{}` holds `{}`", header[i], field(i))))
        };
        let widths = field(4)
            .split('-')
            .map(|w| w.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad widths `{}`", field(4))))?;
        let genome = ArchitectureGenome {
            num_layers: int(3)?,
            widths,
            activation: field(5).parse().map_err(|_| bad(format!("bad activation `{}`", field(5))))?,
            use_batchnorm: field(6) == "true",
            learning_rate: num(7)?,
            l1: num(8)?,
            dropout: num(9)?,
        };
        let mut metrics = BTreeMap::new();
        for (j, name) in metric_columns.iter().enumerate() {
            let s = field(fixed + j);
            if !s.is_empty() {
                metrics.insert(name.clone(), num(fixed + j)?);
            }
        }
        rows.push(TrialRow {
            trial_index: int(0)?,
            generation: int(1)?,
            key: field(2).to_string(),
            genome,
            metrics,
            status: field(header.len() - 1).to_string(),
        });
    }
    Ok(TrialTable { metric_columns, rows })
}
