//! Deterministic small-MLP training: forward/backward passes, Adam/SGD,
//! L1 regularization, quantization-aware training and magnitude pruning.
//!
//! Training runs in `f32`. The engine is generic over [`Real`] so that the
//! gradient check can run the very same backward pass in `f64`.

pub mod artifact;
pub mod engine;
pub mod gradcheck;
pub mod params;
pub mod prune;
pub mod quant;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::ir::{LayerKind, NetworkDescription, ShapeError, FULL_PRECISION_BITS};
use crate::rng::{derive_seed, rng_from_seed};

pub use engine::{forward, Matrix, Mode};
pub use gradcheck::gradient_check;
pub use params::{ModelParams, QuantConfig};
pub use prune::prune_step;
pub use quant::fake_quantize;

pub trait Real: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("input has {found} features, network expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("dataset has {found} classes, network emits {expected} logits")]
    ClassCount { expected: usize, found: usize },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("gradient check needs a network with at most {limit} parameters, got {found}")]
    TooLarge { limit: u64, found: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l1: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl TrainConfig {
    /// Budget of `epochs` with the learning rate and L1 strength carried by
    /// the network's training metadata.
    pub fn for_network(net: &NetworkDescription, epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: net.training_meta.learning_rate,
            l1: net.training_meta.l1,
            optimizer: Optimizer::Adam,
            seed,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.l1 >= 0.0) {
            return Err(TrainError::Config(format!("l1 {} must be non-negative", self.l1)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    /// `None` when the validation split is empty.
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub net: NetworkDescription,
    pub params: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn new(net: NetworkDescription, params: ModelParams<f32>) -> Self {
        Self {
            net,
            params,
            history: Vec::new(),
        }
    }

    /// The network description annotated with the model's current per-layer
    /// sparsity and, under QAT, its bit widths.
    pub fn annotated_net(&self) -> NetworkDescription {
        annotate(&self.net, &self.params)
    }
}

pub fn annotate<T: Real>(net: &NetworkDescription, params: &ModelParams<T>) -> NetworkDescription {
    let mut out = net.clone();
    let sparsity = params.layer_sparsity();
    let mut dense = sparsity.into_iter();
    let (wb, ab) = if params.quant.enabled {
        (params.quant.weight_bits, params.quant.act_bits)
    } else {
        (FULL_PRECISION_BITS, FULL_PRECISION_BITS)
    };
    for layer in &mut out.layers {
        layer.weight_bits = wb;
        layer.act_bits = ab;
        if let LayerKind::Dense { .. } = layer.kind {
            layer.sparsity = dense.next().unwrap_or(0.0);
        }
    }
    out
}

fn check_dims(net: &NetworkDescription, ds: &Dataset) -> Result<(), TrainError> {
    let expected = net.input_dim().unwrap_or(ds.num_features());
    if expected != ds.num_features() {
        return Err(TrainError::InputDim {
            expected,
            found: ds.num_features(),
        });
    }
    if let Some(out) = net.output_dim() {
        if ds.num_classes() > out {
            return Err(TrainError::ClassCount {
                expected: out,
                found: ds.num_classes(),
            });
        }
    }
    Ok(())
}

fn to_matrix<T: Real>(ds: &Dataset) -> Matrix<T> {
    Matrix::from_f64(ds.len(), ds.num_features(), ds.features())
}

/// Fresh initialization followed by `cfg.epochs` of training.
pub fn train(
    net: &NetworkDescription,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    net.validate_shapes()?;
    let params = ModelParams::init(net, derive_seed(cfg.seed, "init", 0))?;
    let mut model = TrainedModel::new(net.clone(), params);
    fit(&mut model, train_set, val_set, cfg)?;
    Ok(model)
}

/// Continues training an existing model, appending to its history. Each call
/// starts a fresh optimizer state.
pub fn fit(
    model: &mut TrainedModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    cfg.validate()?;
    check_dims(&model.net, train_set)?;
    if !val_set.is_empty() {
        check_dims(&model.net, val_set)?;
    }
    let plan = params::plan(&model.net);
    let x_all: Matrix<f32> = to_matrix(train_set);
    let labels = train_set.labels();
    let mut adam = engine::Adam::new(&model.params, engine::AdamHyper::default());
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "shuffle", model.history.len() as u64));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let start = model.history.len();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_all.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let pass = forward(&model.params, &plan, &xb, Mode::Train, Some(&mut rng));
            let (ce, dlogits) = engine::softmax_cross_entropy(&pass.logits, &yb);
            let loss = f64::from(ce) + f64::from(engine::l1_penalty(&model.params, cfg.l1));
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch: start + epoch,
                    loss,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            let mut grads = engine::backward(&model.params, &plan, &pass, dlogits);
            engine::add_l1_grad(&model.params, &mut grads, cfg.l1);
            engine::update_running_stats(&mut model.params, &pass, chunk.len());
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut model.params, &grads, cfg.learning_rate),
                Optimizer::Sgd => engine::sgd_step(&mut model.params, &grads, cfg.learning_rate),
            }
        }
        let train_loss = loss_sum / train_set.len().max(1) as f64;
        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(model, val_set)?)
        };
        log::trace!("epoch {} loss {train_loss:.5} val {val_accuracy:?}", start + epoch);
        model.history.push(EpochRecord {
            train_loss,
            val_accuracy,
        });
    }
    Ok(())
}

const EVAL_CHUNK: usize = 512;

/// Eval-mode logits, row-major `len x classes`.
pub fn logits(model: &TrainedModel, ds: &Dataset) -> Result<Matrix<f32>, TrainError> {
    check_dims(&model.net, ds)?;
    let plan = params::plan(&model.net);
    let x: Matrix<f32> = to_matrix(ds);
    let classes = model.net.output_dim().unwrap_or(ds.num_features());
    let mut out = Matrix::zeros(0, classes);
    let rows: Vec<usize> = (0..ds.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let pass = forward::<f32, rand_chacha::ChaCha8Rng>(
            &model.params,
            &plan,
            &x.select_rows(chunk),
            Mode::Eval,
            None,
        );
        out.data.extend_from_slice(&pass.logits.data);
        out.rows += pass.logits.rows;
        out.cols = pass.logits.cols;
    }
    Ok(out)
}

/// Fraction of rows whose argmax logit (ties to the lowest class) equals the
/// label.
pub fn evaluate(model: &TrainedModel, ds: &Dataset) -> Result<f64, TrainError> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let z = logits(model, ds)?;
    let correct = (0..z.rows)
        .filter(|&r| engine::argmax(z.row(r)) == ds.labels()[r])
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Seeds the activation-range trackers from one eval-mode pass over `ds`
/// without quantization. Used when QAT is switched on for a trained model.
pub fn calibrate_activation_ranges(model: &mut TrainedModel, ds: &Dataset) -> Result<(), TrainError> {
    check_dims(&model.net, ds)?;
    let plan = params::plan(&model.net);
    let mut probe = model.params.clone();
    probe.quant.enabled = false;
    let pass = forward::<f32, rand_chacha::ChaCha8Rng>(&probe, &plan, &to_matrix(ds), Mode::Eval, None);
    let ranges: Vec<f32> = pass
        .tape
        .iter()
        .filter_map(|e| match e {
            engine::Entry::Activation { output, .. } => Some(quant::absmax(&output.data)),
            _ => None,
        })
        .collect();
    model.params.act_absmax = ranges;
    Ok(())
}
