//! Finite-difference verification of the backward pass.

use rand::Rng;
use rand_distr::StandardNormal;

use super::engine::{self, Matrix, Mode};
use super::params::{plan, ModelParams, Op};
use super::TrainError;
use crate::ir::NetworkDescription;
use crate::rng::{derive_seed, rng_from_seed, Rng as ChaRng};

pub const MAX_PARAMS: u64 = 1_000;
pub const STEP: f64 = 1e-5;
/// Samples with any ReLU pre-activation closer than this to the kink are
/// dropped from the batch.
pub const KINK_MARGIN: f64 = 1e-3;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-3;
const BATCH: usize = 16;

fn loss(params: &ModelParams<f64>, plan: &[Op], x: &Matrix<f64>, y: &[usize], l1: f64) -> f64 {
    let pass = engine::forward::<f64, ChaRng>(params, plan, x, Mode::Eval, None);
    engine::softmax_cross_entropy(&pass.logits, y).0 + engine::l1_penalty(params, l1)
}

fn scalar_slots(params: &mut ModelParams<f64>) -> Vec<&mut f64> {
    let mut out = Vec::new();
    for d in params.dense.iter_mut() {
        out.extend(d.weights.iter_mut());
        out.extend(d.bias.iter_mut());
    }
    for b in params.batch_norm.iter_mut() {
        out.extend(b.gamma.iter_mut());
        out.extend(b.beta.iter_mut());
    }
    out
}

/// Compares analytic gradients of `mean cross-entropy + l1 * |W|_1` against
/// central differences with step [`STEP`], in `f64`, on a random batch with
/// batch norm running on frozen (randomized) statistics and dropout off.
///
/// The error per scalar is `|a - n| / max(|a|, |n|, REL_FLOOR)`; the maximum
/// over all weights, biases and batch-norm affine parameters is returned.
pub fn gradient_check(net: &NetworkDescription, seed: u64) -> Result<f64, TrainError> {
    net.validate_shapes()?;
    let count = net.param_count();
    if count > MAX_PARAMS {
        return Err(TrainError::TooLarge {
            limit: MAX_PARAMS,
            found: count,
        });
    }
    let mut rng = rng_from_seed(derive_seed(seed, "gradcheck", 0));
    let mut params = ModelParams::<f64>::init(net, derive_seed(seed, "gradcheck-init", 0))?;
    for d in &mut params.dense {
        for b in &mut d.bias {
            *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for bn in &mut params.batch_norm {
        for j in 0..bn.dim() {
            bn.gamma[j] = rng.gen_range(0.5..1.5);
            bn.beta[j] = 0.1 * rng.sample::<f64, _>(StandardNormal);
            bn.running_mean[j] = 0.5 * rng.sample::<f64, _>(StandardNormal);
            bn.running_var[j] = rng.gen_range(0.5..2.0);
        }
    }
    let plan = plan(net);
    let n_in = net.input_dim().unwrap_or(1);
    let classes = net.output_dim().unwrap_or(1);
    let l1 = net.training_meta.l1;

    // Draw samples until the batch is full of kink-free rows.
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..BATCH * 64 {
        if labels.len() == BATCH {
            break;
        }
        let x: Vec<f64> = (0..n_in).map(|_| rng.sample(StandardNormal)).collect();
        let probe = engine::forward::<f64, ChaRng>(
            &params,
            &plan,
            &Matrix::from_f64(1, n_in, &x),
            Mode::Eval,
            None,
        );
        if probe
            .relu_inputs()
            .all(|m| m.data.iter().all(|z| z.abs() > KINK_MARGIN))
        {
            rows.extend_from_slice(&x);
            labels.push(rng.gen_range(0..classes));
        }
    }
    let x = Matrix::from_f64(labels.len(), n_in, &rows);

    let pass = engine::forward::<f64, ChaRng>(&params, &plan, &x, Mode::Eval, None);
    let (_, dlogits) = engine::softmax_cross_entropy(&pass.logits, &labels);
    let mut grads = engine::backward(&params, &plan, &pass, dlogits);
    engine::add_l1_grad(&params, &mut grads, l1);
    let mut analytic: Vec<f64> = Vec::new();
    for (w, b) in &grads.dense {
        analytic.extend(w);
        analytic.extend(b);
    }
    for (g, b) in &grads.batch_norm {
        analytic.extend(g);
        analytic.extend(b);
    }

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *scalar_slots(&mut params)[i];
        *scalar_slots(&mut params)[i] = original + STEP;
        let up = loss(&params, &plan, &x, &labels, l1);
        *scalar_slots(&mut params)[i] = original - STEP;
        let down = loss(&params, &plan, &x, &labels, l1);
        *scalar_slots(&mut params)[i] = original;
        let numeric = (up - down) / (2.0 * STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
