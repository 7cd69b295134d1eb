//! Categorical MLP search space, fixed-length genome encoding, variation
//! operators and decoding into a [`NetworkDescription`].

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{ActivationKind, LayerDesc, NetworkDescription, TrainingMeta};

/// Number of hidden-width positions carried by every genome.
pub const MAX_LAYERS: usize = 8;

/// num_layers + one width per position + activation, batchnorm, lr, l1, dropout.
pub const GENE_COUNT: usize = 1 + MAX_LAYERS + 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpaceError {
    #[error("choice list `{0}` is empty")]
    EmptyChoices(String),
    #[error("expected {MAX_LAYERS} width choice lists, found {0}")]
    WidthPositions(usize),
    #[error("invalid value in `{field}`: {message}")]
    InvalidChoice { field: String, message: String },
    #[error("gene `{gene}` value {value} is not in the search space")]
    GeneOutOfSpace { gene: String, value: String },
    #[error("decode failure: {0}")]
    Decode(String),
}

/// Raw search-space description as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceConfig {
    pub num_layers_choices: Vec<usize>,
    pub width_choices: Vec<Vec<usize>>,
    pub activation_choices: Vec<ActivationKind>,
    pub batchnorm_choices: Vec<bool>,
    pub lr_choices: Vec<f64>,
    pub l1_choices: Vec<f64>,
    pub dropout_choices: Vec<f64>,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl SearchSpaceConfig {
    /// The jet-tagging MLP space: 4 to 8 hidden layers with per-position
    /// width sets, a global activation, batch-norm switch, learning rate, L1
    /// strength and dropout rate.
    pub fn standard(input_dim: usize, num_classes: usize) -> Self {
        Self {
            num_layers_choices: vec![4, 5, 6, 7, 8],
            width_choices: vec![
                vec![64, 120, 128],
                vec![32, 60, 64],
                vec![16, 32],
                vec![32, 64],
                vec![32, 64],
                vec![32, 64],
                vec![16, 32],
                vec![32, 44, 64],
            ],
            activation_choices: vec![
                ActivationKind::Relu,
                ActivationKind::Tanh,
                ActivationKind::Sigmoid,
            ],
            batchnorm_choices: vec![true, false],
            lr_choices: vec![0.0010, 0.0015, 0.0020],
            l1_choices: vec![0.0, 1e-6, 1e-5, 1e-4],
            dropout_choices: vec![0.0, 0.05, 0.1],
            input_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        fn nonempty<T>(name: &str, v: &[T]) -> Result<(), SpaceError> {
            if v.is_empty() {
                Err(SpaceError::EmptyChoices(name.to_string()))
            } else {
                Ok(())
            }
        }
        let invalid = |field: &str, message: String| SpaceError::InvalidChoice {
            field: field.to_string(),
            message,
        };
        nonempty("num_layers_choices", &self.num_layers_choices)?;
        nonempty("activation_choices", &self.activation_choices)?;
        nonempty("batchnorm_choices", &self.batchnorm_choices)?;
        nonempty("lr_choices", &self.lr_choices)?;
        nonempty("l1_choices", &self.l1_choices)?;
        nonempty("dropout_choices", &self.dropout_choices)?;
        if self.width_choices.len() != MAX_LAYERS {
            return Err(SpaceError::WidthPositions(self.width_choices.len()));
        }
        for (i, widths) in self.width_choices.iter().enumerate() {
            nonempty(&format!("width_choices[{i}]"), widths)?;
            if widths.contains(&0) {
                return Err(invalid("width_choices", format!("position {i} has width 0")));
            }
        }
        if let Some(&n) = self
            .num_layers_choices
            .iter()
            .find(|&&n| n == 0 || n > MAX_LAYERS)
        {
            return Err(invalid(
                "num_layers_choices",
                format!("{n} outside 1..={MAX_LAYERS}"),
            ));
        }
        if let Some(lr) = self.lr_choices.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(invalid("lr_choices", format!("{lr} is not positive")));
        }
        if let Some(l1) = self.l1_choices.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
            return Err(invalid("l1_choices", format!("{l1} is negative")));
        }
        if let Some(p) = self.dropout_choices.iter().find(|&&x| !(0.0..1.0).contains(&x)) {
            return Err(invalid("dropout_choices", format!("{p} outside [0, 1)")));
        }
        if self.input_dim == 0 {
            return Err(invalid("input_dim", "must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(invalid("num_classes", "must be positive".into()));
        }
        Ok(())
    }
}

/// A validated search space. All genome operations hang off this type.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    cfg: SearchSpaceConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureGenome {
    pub num_layers: usize,
    pub widths: Vec<usize>,
    pub activation: ActivationKind,
    pub use_batchnorm: bool,
    pub learning_rate: f64,
    pub l1: f64,
    pub dropout: f64,
}

impl ArchitectureGenome {
    /// Canonical text key. Covers every gene, including widths past
    /// `num_layers`, and formats reals with their shortest round-trip
    /// representation so distinct genomes never share a key.
    pub fn key(&self) -> String {
        let mut key = format!("L{}_w", self.num_layers);
        for (i, w) in self.widths.iter().enumerate() {
            if i > 0 {
                key.push('-');
            }
            let _ = write!(key, "{w}");
        }
        let _ = write!(
            key,
            "_{}_bn{}_lr{}_l1{}_do{}",
            self.activation,
            u8::from(self.use_batchnorm),
            self.learning_rate,
            self.l1,
            self.dropout
        );
        key
    }
}

fn pick<T: Copy, R: Rng + ?Sized>(choices: &[T], rng: &mut R) -> T {
    *choices.choose(rng).expect("choice lists are non-empty")
}

impl SearchSpace {
    pub fn new(cfg: SearchSpaceConfig) -> Result<Self, SpaceError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SearchSpaceConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    /// Number of alternatives for gene `index` (ordering as in [`GENE_COUNT`]).
    pub fn gene_cardinality(&self, index: usize) -> usize {
        let c = &self.cfg;
        match index {
            0 => c.num_layers_choices.len(),
            i if i <= MAX_LAYERS => c.width_choices[i - 1].len(),
            9 => c.activation_choices.len(),
            10 => c.batchnorm_choices.len(),
            11 => c.lr_choices.len(),
            12 => c.l1_choices.len(),
            13 => c.dropout_choices.len(),
            _ => panic!("gene index {index} out of range"),
        }
    }

    fn resample_gene<R: Rng + ?Sized>(&self, g: &mut ArchitectureGenome, index: usize, rng: &mut R) {
        let c = &self.cfg;
        match index {
            0 => g.num_layers = pick(&c.num_layers_choices, rng),
            i if i <= MAX_LAYERS => g.widths[i - 1] = pick(&c.width_choices[i - 1], rng),
            9 => g.activation = pick(&c.activation_choices, rng),
            10 => g.use_batchnorm = pick(&c.batchnorm_choices, rng),
            11 => g.learning_rate = pick(&c.lr_choices, rng),
            12 => g.l1 = pick(&c.l1_choices, rng),
            13 => g.dropout = pick(&c.dropout_choices, rng),
            _ => panic!("gene index {index} out of range"),
        }
    }

    /// Draws every gene uniformly from its choice set.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ArchitectureGenome {
        let c = &self.cfg;
        ArchitectureGenome {
            num_layers: pick(&c.num_layers_choices, rng),
            widths: c.width_choices.iter().map(|w| pick(w, rng)).collect(),
            activation: pick(&c.activation_choices, rng),
            use_batchnorm: pick(&c.batchnorm_choices, rng),
            learning_rate: pick(&c.lr_choices, rng),
            l1: pick(&c.l1_choices, rng),
            dropout: pick(&c.dropout_choices, rng),
        }
    }

    /// Resamples each gene independently with probability `per_gene_rate`.
    /// A resampled gene may land on its old value.
    pub fn mutate<R: Rng + ?Sized>(
        &self,
        genome: &ArchitectureGenome,
        per_gene_rate: f64,
        rng: &mut R,
    ) -> ArchitectureGenome {
        let rate = per_gene_rate.clamp(0.0, 1.0);
        let mut child = genome.clone();
        for index in 0..GENE_COUNT {
            if rng.gen_bool(rate) {
                self.resample_gene(&mut child, index, rng);
            }
        }
        child
    }

    /// Uniform crossover: every gene is swapped between the children with
    /// probability one half.
    pub fn crossover<R: Rng + ?Sized>(
        &self,
        a: &ArchitectureGenome,
        b: &ArchitectureGenome,
        rng: &mut R,
    ) -> (ArchitectureGenome, ArchitectureGenome) {
        let (mut x, mut y) = (a.clone(), b.clone());
        for index in 0..GENE_COUNT {
            if rng.gen_bool(0.5) {
                match index {
                    0 => std::mem::swap(&mut x.num_layers, &mut y.num_layers),
                    i if i <= MAX_LAYERS => std::mem::swap(&mut x.widths[i - 1], &mut y.widths[i - 1]),
                    9 => std::mem::swap(&mut x.activation, &mut y.activation),
                    10 => std::mem::swap(&mut x.use_batchnorm, &mut y.use_batchnorm),
                    11 => std::mem::swap(&mut x.learning_rate, &mut y.learning_rate),
                    12 => std::mem::swap(&mut x.l1, &mut y.l1),
                    _ => std::mem::swap(&mut x.dropout, &mut y.dropout),
                }
            }
        }
        (x, y)
    }

    /// Checks that every gene is a member of its choice set.
    pub fn validate_genome(&self, g: &ArchitectureGenome) -> Result<(), SpaceError> {
        let c = &self.cfg;
        let out = |gene: &str, value: String| SpaceError::GeneOutOfSpace {
            gene: gene.to_string(),
            value,
        };
        if !c.num_layers_choices.contains(&g.num_layers) {
            return Err(out("num_layers", g.num_layers.to_string()));
        }
        if g.widths.len() != MAX_LAYERS {
            return Err(out("widths", format!("{:?}", g.widths)));
        }
        for (i, (w, choices)) in g.widths.iter().zip(&c.width_choices).enumerate() {
            if !choices.contains(w) {
                return Err(out(&format!("widths[{i}]"), w.to_string()));
            }
        }
        if !c.activation_choices.contains(&g.activation) {
            return Err(out("activation", g.activation.to_string()));
        }
        if !c.batchnorm_choices.contains(&g.use_batchnorm) {
            return Err(out("use_batchnorm", g.use_batchnorm.to_string()));
        }
        if !c.lr_choices.contains(&g.learning_rate) {
            return Err(out("learning_rate", g.learning_rate.to_string()));
        }
        if !c.l1_choices.contains(&g.l1) {
            return Err(out("l1", g.l1.to_string()));
        }
        if !c.dropout_choices.contains(&g.dropout) {
            return Err(out("dropout", g.dropout.to_string()));
        }
        Ok(())
    }

    /// Builds `input -> [Dense -> BatchNorm? -> Activation -> Dropout?] x L ->
    /// Dense(num_classes)`. The output layer emits raw logits.
    pub fn decode(&self, g: &ArchitectureGenome) -> Result<NetworkDescription, SpaceError> {
        if g.num_layers == 0 {
            return Err(SpaceError::Decode("genome has zero hidden layers".into()));
        }
        if g.widths.len() < g.num_layers {
            return Err(SpaceError::Decode(format!(
                "genome uses {} hidden layers but carries {} widths",
                g.num_layers,
                g.widths.len()
            )));
        }
        if let Some(i) = g.widths[..g.num_layers].iter().position(|&w| w == 0) {
            return Err(SpaceError::Decode(format!("width at position {i} is zero")));
        }
        let mut layers = Vec::with_capacity(4 * g.num_layers + 1);
        let mut prev = self.cfg.input_dim;
        for &width in &g.widths[..g.num_layers] {
            layers.push(LayerDesc::dense(prev, width));
            if g.use_batchnorm {
                layers.push(LayerDesc::batch_norm(width));
            }
            layers.push(LayerDesc::activation(g.activation));
            if g.dropout > 0.0 {
                layers.push(LayerDesc::dropout(g.dropout));
            }
            prev = width;
        }
        layers.push(LayerDesc::dense(prev, self.cfg.num_classes));
        Ok(NetworkDescription {
            layers,
            training_meta: TrainingMeta {
                learning_rate: g.learning_rate,
                l1: g.l1,
            },
        })
    }

    /// Number of decodably distinct genomes with `num_layers` hidden layers
    /// (inert width positions are not counted).
    pub fn networks_with_layers(&self, num_layers: usize) -> u64 {
        let c = &self.cfg;
        if !c.num_layers_choices.contains(&num_layers) {
            return 0;
        }
        let widths: u64 = c.width_choices[..num_layers]
            .iter()
            .map(|w| w.len() as u64)
            .product();
        widths
            * c.activation_choices.len() as u64
            * c.batchnorm_choices.len() as u64
            * c.lr_choices.len() as u64
            * c.l1_choices.len() as u64
            * c.dropout_choices.len() as u64
    }
}
