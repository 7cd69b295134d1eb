use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::ir::{ActivationKind, LayerKind, NetworkDescription, ShapeError};
use crate::rng::rng_from_seed;

/// Dense layer with an `in_dim x out_dim` row-major weight matrix, so that
/// `y[j] = sum_i x[i] * w[i * out_dim + j] + b[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    /// `false` marks a pruned weight. Pruned weights are held at exactly zero.
    pub mask: Vec<bool>,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            mask: vec![true; in_dim * out_dim],
        }
    }

    pub fn apply_mask(&mut self) {
        for (w, &keep) in self.weights.iter_mut().zip(&self.mask) {
            if !keep {
                *w = T::zero();
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> BatchNormParams<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub enabled: bool,
    pub weight_bits: u32,
    pub act_bits: u32,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            weight_bits: 8,
            act_bits: 8,
        }
    }
}

impl QuantConfig {
    pub fn bits(bits: u32) -> Self {
        Self {
            enabled: true,
            weight_bits: bits,
            act_bits: bits,
        }
    }
}

/// One executable step of a network. Indices point into the matching
/// parameter vector of [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Dense(usize),
    BatchNorm(usize),
    Activation(ActivationKind, usize),
    Dropout(f64),
}

pub fn plan(net: &NetworkDescription) -> Vec<Op> {
    let (mut d, mut b, mut a) = (0, 0, 0);
    net.layers
        .iter()
        .map(|l| match l.kind {
            LayerKind::Dense { .. } => {
                d += 1;
                Op::Dense(d - 1)
            }
            LayerKind::BatchNorm { .. } => {
                b += 1;
                Op::BatchNorm(b - 1)
            }
            LayerKind::Activation { activation } => {
                a += 1;
                Op::Activation(activation, a - 1)
            }
            LayerKind::Dropout { rate } => Op::Dropout(rate),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub dense: Vec<DenseParams<T>>,
    pub batch_norm: Vec<BatchNormParams<T>>,
    /// Running absolute maximum of each activation layer's output, used for
    /// the activation quantizer scale in eval mode.
    pub act_absmax: Vec<T>,
    pub quant: QuantConfig,
}

impl<T: Real> ModelParams<T> {
    /// Zero weights, identity batch norm.
    pub fn zeros(net: &NetworkDescription) -> Result<Self, ShapeError> {
        net.validate_shapes()?;
        let mut params = ModelParams {
            dense: Vec::new(),
            batch_norm: Vec::new(),
            act_absmax: Vec::new(),
            quant: QuantConfig::default(),
        };
        for layer in &net.layers {
            match layer.kind {
                LayerKind::Dense { in_dim, out_dim } => {
                    params.dense.push(DenseParams::zeros(in_dim, out_dim))
                }
                LayerKind::BatchNorm { dim } => params.batch_norm.push(BatchNormParams::identity(dim)),
                LayerKind::Activation { .. } => params.act_absmax.push(T::zero()),
                LayerKind::Dropout { .. } => {}
            }
        }
        Ok(params)
    }

    /// Uniform fan-in initialization `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// for dense weights, zero biases, identity batch norm.
    pub fn init(net: &NetworkDescription, seed: u64) -> Result<Self, ShapeError> {
        let mut params = Self::zeros(net)?;
        let mut rng = rng_from_seed(seed);
        for layer in &mut params.dense {
            let bound = (6.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(params)
    }

    pub fn dense_weight_count(&self) -> usize {
        self.dense.iter().map(|d| d.weights.len()).sum()
    }

    pub fn apply_masks(&mut self) {
        self.dense.iter_mut().for_each(DenseParams::apply_mask);
    }

    /// Fraction of pruned dense weights over all dense layers.
    pub fn global_sparsity(&self) -> f64 {
        let total = self.dense_weight_count();
        if total == 0 {
            return 0.0;
        }
        let pruned: usize = self
            .dense
            .iter()
            .map(|d| d.mask.iter().filter(|&&m| !m).count())
            .sum();
        pruned as f64 / total as f64
    }

    pub fn layer_sparsity(&self) -> Vec<f64> {
        self.dense
            .iter()
            .map(|d| d.mask.iter().filter(|&&m| !m).count() as f64 / d.mask.len() as f64)
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.dense
            .iter()
            .flat_map(|d| d.weights.iter().zip(&d.mask))
            .filter(|(_, &m)| m)
            .map(|(w, _)| w.abs().to_f64().unwrap_or(f64::NAN))
            .sum()
    }

    pub fn mean_abs_weight(&self) -> f64 {
        let n = self.dense_weight_count();
        if n == 0 {
            return 0.0;
        }
        self.dense
            .iter()
            .flat_map(|d| d.weights.iter())
            .map(|w| w.abs().to_f64().unwrap_or(f64::NAN))
            .sum::<f64>()
            / n as f64
    }

    /// Checks that the parameter shapes match a network description.
    pub fn matches(&self, net: &NetworkDescription) -> bool {
        let Ok(shape) = Self::zeros(net) else {
            return false;
        };
        shape.dense.len() == self.dense.len()
            && shape
                .dense
                .iter()
                .zip(&self.dense)
                .all(|(a, b)| a.in_dim == b.in_dim && a.out_dim == b.out_dim)
            && shape.batch_norm.len() == self.batch_norm.len()
            && shape
                .batch_norm
                .iter()
                .zip(&self.batch_norm)
                .all(|(a, b)| a.dim() == b.dim())
            && shape.act_absmax.len() == self.act_absmax.len()
    }
}
