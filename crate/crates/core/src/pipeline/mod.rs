//! Command orchestration on top of the library modules: configuration, run
//! directories, trial logs, reports and plots.

pub mod config;
pub mod local_cmd;
pub mod plot;
pub mod report;
pub mod rundir;
pub mod search;
pub mod trials;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::estimator::{avg_resource_pct, latency_ns, DeviceProfile, ResourceEstimator};
use crate::ir::NetworkDescription;
use crate::local::LocalError;
use crate::moo::{MooError, Sense};

pub use config::{LoadedConfig, RunConfig};
pub use local_cmd::{cmd_localsearch, LocalArgs};
pub use plot::cmd_plot;
pub use report::cmd_report;
pub use search::cmd_search;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("unknown genome key `{key}`; available: {}", available.join(", "))]
    UnknownGenomeKey { key: String, available: Vec<String> },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("unknown metric `{name}`; available: {}", available.join(", "))]
    UnknownMetric { name: String, available: Vec<String> },
    #[error("run directory {0} is locked by another command (remove the .lock file if it is stale)")]
    Locked(String),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("search failed: {0}")]
    Search(#[from] MooError),
    #[error("local search failed: {0}")]
    Local(#[from] LocalError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. }
            | PipelineError::Data(_)
            | PipelineError::UnknownGenomeKey { .. }
            | PipelineError::MissingArtifact(_)
            | PipelineError::UnknownMetric { .. }
            | PipelineError::Locked(_)
            | PipelineError::Usage(_)
            | PipelineError::Search(MooError::Config(_))
            | PipelineError::Local(LocalError::Config(_)) => EXIT_USER,
            _ => EXIT_INTERNAL,
        }
    }

    pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
        move |source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub struct MetricInfo {
    pub name: &'static str,
    pub sense: Sense,
}

const fn min(name: &'static str) -> MetricInfo {
    MetricInfo {
        name,
        sense: Sense::Minimize,
    }
}

/// Every metric a trial records, in trial-log column order.
pub const METRICS: [MetricInfo; 11] = [
    MetricInfo {
        name: "accuracy",
        sense: Sense::Maximize,
    },
    min("bops"),
    min("params"),
    min("est_avg_resources"),
    min("est_clock_cycles"),
    min("est_latency_ns"),
    min("est_ii_cycles"),
    min("est_lut"),
    min("est_ff"),
    min("est_dsp"),
    min("est_bram"),
];

pub fn metric_sense(name: &str) -> Option<Sense> {
    METRICS.iter().find(|m| m.name == name).map(|m| m.sense)
}

/// Hardware metrics of an (annotated) network: everything in [`METRICS`]
/// except accuracy.
pub fn network_metrics(
    net: &NetworkDescription,
    estimator: &dyn ResourceEstimator,
    device: &DeviceProfile,
) -> BTreeMap<String, f64> {
    let e = estimator.estimate(net);
    let mut m = BTreeMap::new();
    m.insert("bops".into(), net.count_bops() as f64);
    m.insert("params".into(), net.param_count() as f64);
    m.insert("est_avg_resources".into(), avg_resource_pct(&e, device));
    m.insert("est_clock_cycles".into(), e.latency_cycles);
    m.insert("est_latency_ns".into(), latency_ns(&e, device));
    m.insert("est_ii_cycles".into(), e.ii_cycles);
    m.insert("est_lut".into(), e.lut);
    m.insert("est_ff".into(), e.ff);
    m.insert("est_dsp".into(), e.dsp);
    m.insert("est_bram".into(), e.bram);
    m
}

/// Pareto flags in a 2D projection: a point is flagged when no other point
/// is at least as good on both axes and strictly better on one.
pub fn pareto_flags_2d(points: &[(f64, f64)], senses: (Sense, Sense)) -> Vec<bool> {
    let canon: Vec<[f64; 2]> = points
        .iter()
        .map(|&(x, y)| [senses.0.canonical(x), senses.1.canonical(y)])
        .collect();
    canon
        .iter()
        .map(|p| !canon.iter().any(|q| crate::moo::dominates_min(q, p)))
        .collect()
}
