//! Versioned JSON run configuration.
//!
//! ```json
//! {
//!   "version": 1,
//!   "output_dir": "runs/blobs",
//!   "master_seed": 7,
//!   "data": {"source": {"kind": "blobs", "n_per_class": 200, "dim": 16, "classes": 5, "separation": 6.0},
//!            "split": [0.6, 0.2, 0.2], "normalize": true},
//!   "space": {"num_layers_choices": [4, 5]},
//!   "search": {"population_size": 8, "total_trials": 40, "epochs_per_trial": 2, "objective_set": "snacpack"},
//!   "local": {"iterations": 10},
//!   "estimator": {"reuse_factor": 1, "device": "vu13p", "precision_bits": 8}
//! }
//! ```
//!
//! Every section is optional except `data`. Relative paths resolve against
//! the directory holding the config file. Stage seeds derive from
//! `master_seed`; seeds inside sections are ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::{self, BlobSpec, Dataset, Normalizer};
use crate::estimator::{
    load_linear_surrogate, DeviceProfile, EstimatorConfig, ResourceEstimator, RuleBasedEstimator,
};
use crate::ir::ActivationKind;
use crate::local::LocalSearchConfig;
use crate::moo::{ObjectiveSet, SearchConfig};
use crate::rng::derive_seed;
use crate::space::{SearchSpace, SearchSpaceConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub space: SpaceSection,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub local: LocalSearchConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
    },
    Blobs {
        n_per_class: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
}

fn default_label() -> String {
    "label".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Optional cross-check against the feature count found in the data.
    #[serde(default)]
    pub input_dim: Option<usize>,
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

fn default_true() -> bool {
    true
}

/// Overrides of the default search space; input and output sizes always
/// come from the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub num_layers_choices: Option<Vec<usize>>,
    pub width_choices: Option<Vec<Vec<usize>>>,
    pub activation_choices: Option<Vec<ActivationKind>>,
    pub batchnorm_choices: Option<Vec<bool>>,
    pub lr_choices: Option<Vec<f64>>,
    pub l1_choices: Option<Vec<f64>>,
    pub dropout_choices: Option<Vec<f64>>,
}

impl SpaceSection {
    pub fn resolve(&self, input_dim: usize, num_classes: usize) -> SearchSpaceConfig {
        let mut c = SearchSpaceConfig::standard(input_dim, num_classes);
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone(); })*};
        }
        take!(
            num_layers_choices,
            width_choices,
            activation_choices,
            batchnorm_choices,
            lr_choices,
            l1_choices,
            dropout_choices
        );
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceSpec {
    Named(String),
    Inline(DeviceProfile),
}

impl Default for DeviceSpec {
    fn default() -> Self {
        DeviceSpec::Named("vu13p".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorSection {
    #[serde(flatten)]
    pub config: EstimatorConfig,
    pub device: DeviceSpec,
    /// Linear-surrogate coefficient file replacing the rule-based estimator.
    pub surrogate: Option<PathBuf>,
    /// Precision assumed for BOPs and resource estimates during the global
    /// search, where networks train at full precision.
    pub precision_bits: u32,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            config: EstimatorConfig::default(),
            device: DeviceSpec::default(),
            surrogate: None,
            precision_bits: 8,
        }
    }
}

/// A config file plus the exact bytes it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

fn cfg_err(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        path: path.display().to_string(),
        message: message.into(),
    }
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_text(text, base, path)
    }

    pub fn from_text(text: String, base_dir: PathBuf, origin: &Path) -> Result<Self, PipelineError> {
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| cfg_err(origin, e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(cfg_err(
                origin,
                format!("unsupported config version {} (expected {CONFIG_VERSION})", config.version),
            ));
        }
        let loaded = Self {
            config,
            text,
            base_dir,
        };
        loaded.validate(origin)?;
        Ok(loaded)
    }

    fn validate(&self, origin: &Path) -> Result<(), PipelineError> {
        let c = &self.config;
        let mut search = c.search.clone();
        search.seed = 0;
        search.validate().map_err(|e| cfg_err(origin, format!("search: {e}")))?;
        for name in c.search.objective_set.names() {
            if !super::METRICS.iter().any(|m| m.name == name) {
                return Err(cfg_err(origin, format!("search: unknown objective metric `{name}`")));
            }
        }
        c.local.validate().map_err(|e| cfg_err(origin, format!("local: {e}")))?;
        if c.estimator.config.reuse_factor == 0 {
            return Err(cfg_err(origin, "estimator: reuse_factor must be at least 1"));
        }
        if !(2..=32).contains(&c.estimator.precision_bits) {
            return Err(cfg_err(origin, "estimator: precision_bits must lie in 2..=32"));
        }
        self.device().map_err(|m| cfg_err(origin, format!("estimator: {m}")))?;
        if let Some(p) = &c.estimator.surrogate {
            let p = self.resolve(p);
            if !p.is_file() {
                return Err(cfg_err(origin, format!("estimator: surrogate file {} not found", p.display())));
            }
        }
        if let DataSource::Csv { path, .. } = &c.data.source {
            let p = self.resolve(path);
            if !p.is_file() {
                return Err(cfg_err(origin, format!("data: {} not found", p.display())));
            }
        }
        let s = c.data.split;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || s[0] <= 0.0 || s[1] <= 0.0 || s.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(cfg_err(origin, "data: split needs positive train and validation fractions summing to at most 1"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn device(&self) -> Result<DeviceProfile, String> {
        let d = match &self.config.estimator.device {
            DeviceSpec::Named(n) => DeviceProfile::by_name(n).ok_or_else(|| format!("unknown device `{n}`"))?,
            DeviceSpec::Inline(d) => d.clone(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn estimator(&self) -> Result<Box<dyn ResourceEstimator>, PipelineError> {
        match &self.config.estimator.surrogate {
            Some(p) => {
                let p = self.resolve(p);
                let s = load_linear_surrogate(&p).map_err(|e| cfg_err(&p, e.to_string()))?;
                Ok(Box::new(s))
            }
            None => Ok(Box::new(RuleBasedEstimator::new(self.config.estimator.config.clone()))),
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        let mut s = self.config.search.clone();
        s.seed = derive_seed(self.config.master_seed, "search", 0);
        s
    }

    pub fn local_config(&self) -> LocalSearchConfig {
        let mut l = self.config.local.clone();
        l.seed = derive_seed(self.config.master_seed, "local", 0);
        l
    }

    pub fn objective_set(&self) -> &ObjectiveSet {
        &self.config.search.objective_set
    }

    /// Loads, splits and (optionally) standardizes the data. The normalizer
    /// is fit on the training split only.
    pub fn datasets(&self) -> Result<PreparedData, PipelineError> {
        let c = &self.config;
        let raw = match &c.data.source {
            DataSource::Csv { path, label_column } => {
                data::load_csv(&self.resolve(path), label_column).map_err(|e| PipelineError::Data(e.to_string()))?
            }
            DataSource::Blobs {
                n_per_class,
                dim,
                classes,
                separation,
            } => data::synth_blobs(&BlobSpec {
                n_per_class: *n_per_class,
                dim: *dim,
                classes: *classes,
                separation: *separation,
                seed: derive_seed(c.master_seed, "data", 0),
            })
            .map_err(|e| PipelineError::Data(e.to_string()))?,
        };
        if let Some(d) = c.data.input_dim {
            if d != raw.num_features() {
                return Err(PipelineError::Data(format!(
                    "config input_dim {d} does not match the {} features in the data",
                    raw.num_features()
                )));
            }
        }
        let [a, b, t] = c.data.split;
        let s = data::split(&raw, (a, b, t), derive_seed(c.master_seed, "split", 0))
            .map_err(|e| PipelineError::Data(e.to_string()))?;
        if s.train.is_empty() || s.val.is_empty() {
            return Err(PipelineError::Data("train or validation split is empty".into()));
        }
        let (train, val, test) = if c.data.normalize {
            let norm = Normalizer::fit(&s.train);
            (norm.apply(&s.train), norm.apply(&s.val), norm.apply(&s.test))
        } else {
            (s.train, s.val, s.test)
        };
        Ok(PreparedData {
            input_dim: raw.num_features(),
            num_classes: raw.num_classes(),
            train,
            val,
            test,
        })
    }

    pub fn space(&self, data: &PreparedData) -> Result<SearchSpace, PipelineError> {
        let cfg = self.config.space.resolve(data.input_dim, data.num_classes);
        SearchSpace::new(cfg).map_err(|e| PipelineError::Config {
            path: "space".into(),
            message: e.to_string(),
        })
    }
}

pub struct PreparedData {
    pub input_dim: usize,
    pub num_classes: usize,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}
