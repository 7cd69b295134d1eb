//! Network intermediate representation: an ordered list of layers with
//! precision and sparsity annotations, shape validation, parameter counting
//! and the bit-operations (BOPs) complexity metric.
//!
//! The JSON layout of a [`NetworkDescription`] is
//!
//! ```json
//! {
//!   "layers": [
//!     {"kind": "dense", "in_dim": 16, "out_dim": 64, "weight_bits": 32, "act_bits": 32, "sparsity": 0.0},
//!     {"kind": "batch_norm", "dim": 64, "weight_bits": 32, "act_bits": 32, "sparsity": 0.0},
//!     {"kind": "activation", "activation": "relu", "weight_bits": 32, "act_bits": 32, "sparsity": 0.0},
//!     {"kind": "dropout", "rate": 0.05, "weight_bits": 32, "act_bits": 32, "sparsity": 0.0}
//!   ],
//!   "training_meta": {"learning_rate": 0.001, "l1": 0.0}
//! }
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FULL_PRECISION_BITS: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "tanh" => Ok(ActivationKind::Tanh),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { in_dim: usize, out_dim: usize },
    BatchNorm { dim: usize },
    Activation { activation: ActivationKind },
    Dropout { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default = "full_precision")]
    pub weight_bits: u32,
    #[serde(default = "full_precision")]
    pub act_bits: u32,
    /// Fraction of zeroed weights. Only meaningful for dense layers.
    #[serde(default)]
    pub sparsity: f64,
}

fn full_precision() -> u32 {
    FULL_PRECISION_BITS
}

impl LayerDesc {
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            weight_bits: FULL_PRECISION_BITS,
            act_bits: FULL_PRECISION_BITS,
            sparsity: 0.0,
        }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Self::new(LayerKind::Dense { in_dim, out_dim })
    }

    pub fn batch_norm(dim: usize) -> Self {
        Self::new(LayerKind::BatchNorm { dim })
    }

    pub fn activation(activation: ActivationKind) -> Self {
        Self::new(LayerKind::Activation { activation })
    }

    pub fn dropout(rate: f64) -> Self {
        Self::new(LayerKind::Dropout { rate })
    }

    pub fn with_bits(mut self, weight_bits: u32, act_bits: u32) -> Self {
        self.weight_bits = weight_bits;
        self.act_bits = act_bits;
        self
    }

    pub fn with_sparsity(mut self, sparsity: f64) -> Self {
        self.sparsity = sparsity;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub learning_rate: f64,
    pub l1: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l1: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescription {
    pub layers: Vec<LayerDesc>,
    #[serde(default)]
    pub training_meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("layer {index}: expected input dimension {expected}, found {found}")]
    Mismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {index}: dimensions must be positive")]
    ZeroDim { index: usize },
    #[error("layer {index}: bit width {bits} outside 1..=32")]
    Bits { index: usize, bits: u32 },
    #[error("layer {index}: sparsity {value} outside [0, 1)")]
    Sparsity { index: usize, value: f64 },
    #[error("layer {index}: dropout rate {value} outside [0, 1)")]
    DropoutRate { index: usize, value: f64 },
}

impl NetworkDescription {
    pub fn new(layers: Vec<LayerDesc>) -> Self {
        Self {
            layers,
            training_meta: TrainingMeta::default(),
        }
    }

    /// Checks the dimension chain. Shape-preserving layers placed before the
    /// first dense layer fix the input dimension themselves (batch norm) or
    /// accept anything (activation, dropout).
    pub fn validate_shapes(&self) -> Result<(), ShapeError> {
        let mut current: Option<usize> = None;
        for (index, layer) in self.layers.iter().enumerate() {
            for bits in [layer.weight_bits, layer.act_bits] {
                if !(1..=32).contains(&bits) {
                    return Err(ShapeError::Bits { index, bits });
                }
            }
            if !(0.0..1.0).contains(&layer.sparsity) {
                return Err(ShapeError::Sparsity {
                    index,
                    value: layer.sparsity,
                });
            }
            match layer.kind {
                LayerKind::Dense { in_dim, out_dim } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(ShapeError::ZeroDim { index });
                    }
                    check_chain(index, current, in_dim)?;
                    current = Some(out_dim);
                }
                LayerKind::BatchNorm { dim } => {
                    if dim == 0 {
                        return Err(ShapeError::ZeroDim { index });
                    }
                    check_chain(index, current, dim)?;
                    current = Some(dim);
                }
                LayerKind::Activation { .. } => {}
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(ShapeError::DropoutRate { index, value: rate });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = (&LayerDesc, usize, usize)> {
        self.layers.iter().filter_map(|l| match l.kind {
            LayerKind::Dense { in_dim, out_dim } => Some((l, in_dim, out_dim)),
            _ => None,
        })
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l.kind {
            LayerKind::Dense { in_dim, .. } => Some(in_dim),
            LayerKind::BatchNorm { dim } => Some(dim),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l.kind {
            LayerKind::Dense { out_dim, .. } => Some(out_dim),
            LayerKind::BatchNorm { dim } => Some(dim),
            _ => None,
        })
    }

    /// Dense weights and biases plus batch-norm scale and shift. Running
    /// statistics are buffers, not parameters.
    pub fn param_count(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Dense { in_dim, out_dim } => (in_dim * out_dim + out_dim) as u64,
                LayerKind::BatchNorm { dim } => 2 * dim as u64,
                _ => 0,
            })
            .sum()
    }

    /// Bit operations of one inference.
    ///
    /// A dense layer with fan-in `n`, fan-out `m`, weight bits `bw`, activation
    /// bits `ba` and sparsity `s` costs `round((1-s)·m·n·bw·ba)` for the
    /// multiplies plus `m·n·(bw + ba + ceil(log2 n))` for the accumulations.
    /// Batch norm is counted in its folded inference form, one multiply-add per
    /// feature: `d·(bw·ba + bw + ba)`. Activations and dropout are free.
    pub fn count_bops(&self) -> u64 {
        self.layers.iter().map(layer_bops).sum()
    }

    /// Sets every layer to the given precision.
    pub fn with_precision(mut self, weight_bits: u32, act_bits: u32) -> Self {
        for layer in &mut self.layers {
            layer.weight_bits = weight_bits;
            layer.act_bits = act_bits;
        }
        self
    }
}

fn check_chain(index: usize, current: Option<usize>, found: usize) -> Result<(), ShapeError> {
    match current {
        Some(expected) if expected != found => Err(ShapeError::Mismatch {
            index,
            expected,
            found,
        }),
        _ => Ok(()),
    }
}

/// `ceil(log2(n))` with `n <= 1` mapped to 0.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn layer_bops(layer: &LayerDesc) -> u64 {
    let bw = u64::from(layer.weight_bits);
    let ba = u64::from(layer.act_bits);
    match layer.kind {
        LayerKind::Dense { in_dim, out_dim } => {
            let macs = (in_dim * out_dim) as u64;
            let mult = ((1.0 - layer.sparsity) * (macs * bw * ba) as f64).round() as u64;
            let acc = macs * (bw + ba + u64::from(ceil_log2(in_dim)));
            mult + acc
        }
        LayerKind::BatchNorm { dim } => dim as u64 * (bw * ba + bw + ba),
        LayerKind::Activation { .. } | LayerKind::Dropout { .. } => 0,
    }
}
