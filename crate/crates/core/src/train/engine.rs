//! Forward and backward passes over a layer plan.

use rand::Rng;

use super::params::{ModelParams, Op};
use super::quant::{absmax, quantize_with_scale, scale_for};
use super::Real;
use crate::ir::ActivationKind;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// EMA momentum of the activation-range tracker.
pub const ACT_RANGE_MOMENTUM: f64 = 0.1;

/// Row-major `rows x cols` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            rows,
            cols,
            data: data.iter().map(|&x| T::of(x)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batch norm, dropout active, range trackers updated.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

pub(crate) enum Entry<T> {
    Dense {
        input: Matrix<T>,
        used_weights: Vec<T>,
    },
    BatchNorm {
        xhat: Matrix<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Activation {
        kind: ActivationKind,
        input: Matrix<T>,
        output: Matrix<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
}

pub struct ForwardPass<T> {
    pub logits: Matrix<T>,
    pub(crate) tape: Vec<Entry<T>>,
    /// Batch mean and biased variance per batch-norm layer (train mode only).
    pub(crate) bn_batch: Vec<Option<(Vec<T>, Vec<T>)>>,
    /// Batch activation absmax per activation layer (train mode with QAT).
    pub(crate) act_batch: Vec<Option<T>>,
}

impl<T: Real> ForwardPass<T> {
    /// Pre-activation inputs of every ReLU layer, for kink detection.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.tape.iter().filter_map(|e| match e {
            Entry::Activation {
                kind: ActivationKind::Relu,
                input,
                ..
            } => Some(input),
            _ => None,
        })
    }
}

pub struct Gradients<T> {
    pub dense: Vec<(Vec<T>, Vec<T>)>,
    pub batch_norm: Vec<(Vec<T>, Vec<T>)>,
}

fn activate<T: Real>(kind: ActivationKind, z: T) -> T {
    match kind {
        ActivationKind::Relu => z.max(T::zero()),
        ActivationKind::Tanh => z.tanh(),
        ActivationKind::Sigmoid => T::one() / (T::one() + (-z).exp()),
    }
}

fn activation_grad<T: Real>(kind: ActivationKind, z: T, y: T) -> T {
    match kind {
        ActivationKind::Relu => {
            if z > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        ActivationKind::Tanh => T::one() - y * y,
        ActivationKind::Sigmoid => y * (T::one() - y),
    }
}

/// `x (B x n) * w (n x m) + b`.
fn dense_forward<T: Real>(x: &Matrix<T>, w: &[T], b: &[T], out_dim: usize) -> Matrix<T> {
    let mut y = Matrix::zeros(x.rows, out_dim);
    for r in 0..x.rows {
        let yr = &mut y.data[r * out_dim..(r + 1) * out_dim];
        yr.copy_from_slice(b);
        for (i, &xi) in x.row(r).iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let wi = &w[i * out_dim..(i + 1) * out_dim];
            for (yj, &wij) in yr.iter_mut().zip(wi) {
                *yj = *yj + xi * wij;
            }
        }
    }
    y
}

/// Runs the network. `rng` is required in train mode when the plan holds
/// dropout with a positive rate.
pub fn forward<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    plan: &[Op],
    input: &Matrix<T>,
    mode: Mode,
    mut rng: Option<&mut R>,
) -> ForwardPass<T> {
    let quant = params.quant;
    let mut x = input.clone();
    let mut tape = Vec::with_capacity(plan.len());
    let mut bn_batch = vec![None; params.batch_norm.len()];
    let mut act_batch = vec![None; params.act_absmax.len()];
    let batch = x.rows;

    for &op in plan {
        match op {
            Op::Dense(k) => {
                let layer = &params.dense[k];
                let used = if quant.enabled {
                    let scale = scale_for(absmax(&layer.weights), quant.weight_bits);
                    quantize_with_scale(&layer.weights, scale, quant.weight_bits)
                } else {
                    layer.weights.clone()
                };
                let y = dense_forward(&x, &used, &layer.bias, layer.out_dim);
                tape.push(Entry::Dense {
                    input: std::mem::replace(&mut x, y),
                    used_weights: used,
                });
            }
            Op::BatchNorm(k) => {
                let bn = &params.batch_norm[k];
                let d = bn.dim();
                let eps = T::of(BN_EPS);
                let (mean, var, batch_stats) = if mode == Mode::Train && batch > 0 {
                    let n = T::of(batch as f64);
                    let mut mean = vec![T::zero(); d];
                    for r in 0..batch {
                        for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                            *m = *m + v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m = *m / n);
                    let mut var = vec![T::zero(); d];
                    for r in 0..batch {
                        for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                            *s = *s + (v - m) * (v - m);
                        }
                    }
                    var.iter_mut().for_each(|s| *s = *s / n);
                    bn_batch[k] = Some((mean.clone(), var.clone()));
                    (mean, var, true)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone(), false)
                };
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let mut xhat = Matrix::zeros(batch, d);
                let mut y = Matrix::zeros(batch, d);
                for r in 0..batch {
                    for j in 0..d {
                        let h = (x.data[r * d + j] - mean[j]) * inv_std[j];
                        xhat.data[r * d + j] = h;
                        y.data[r * d + j] = bn.gamma[j] * h + bn.beta[j];
                    }
                }
                x = y;
                tape.push(Entry::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                });
            }
            Op::Activation(kind, k) => {
                let mut out = Matrix {
                    rows: x.rows,
                    cols: x.cols,
                    data: x.data.iter().map(|&z| activate(kind, z)).collect(),
                };
                let raw = out.clone();
                if quant.enabled {
                    let range = match mode {
                        Mode::Train => {
                            let m = absmax(&out.data);
                            act_batch[k] = Some(m);
                            m
                        }
                        Mode::Eval => params.act_absmax[k],
                    };
                    let scale = scale_for(range, quant.act_bits);
                    out.data = quantize_with_scale(&out.data, scale, quant.act_bits);
                }
                tape.push(Entry::Activation {
                    kind,
                    input: std::mem::replace(&mut x, out),
                    output: raw,
                });
            }
            Op::Dropout(rate) => {
                if mode == Mode::Train && rate > 0.0 {
                    let rng = rng
                        .as_deref_mut()
                        .expect("train-mode dropout needs a random source");
                    let keep = T::of(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.data.len())
                        .map(|_| {
                            if rng.gen::<f64>() < rate {
                                T::zero()
                            } else {
                                keep
                            }
                        })
                        .collect();
                    x.data.iter_mut().zip(&mask).for_each(|(v, &m)| *v = *v * m);
                    tape.push(Entry::Dropout { mask: Some(mask) });
                } else {
                    tape.push(Entry::Dropout { mask: None });
                }
            }
        }
    }
    ForwardPass {
        logits: x,
        tape,
        bn_batch,
        act_batch,
    }
}

/// Folds the batch statistics of a train-mode pass into the running buffers.
pub fn update_running_stats<T: Real>(params: &mut ModelParams<T>, pass: &ForwardPass<T>, batch: usize) {
    let mom = T::of(BN_MOMENTUM);
    let keep = T::one() - mom;
    let unbias = if batch > 1 {
        T::of(batch as f64 / (batch as f64 - 1.0))
    } else {
        T::one()
    };
    for (bn, stats) in params.batch_norm.iter_mut().zip(&pass.bn_batch) {
        if let Some((mean, var)) = stats {
            for j in 0..bn.dim() {
                bn.running_mean[j] = keep * bn.running_mean[j] + mom * mean[j];
                bn.running_var[j] = keep * bn.running_var[j] + mom * var[j] * unbias;
            }
        }
    }
    let amom = T::of(ACT_RANGE_MOMENTUM);
    for (run, seen) in params.act_absmax.iter_mut().zip(&pass.act_batch) {
        if let Some(m) = *seen {
            *run = if *run == T::zero() {
                m
            } else {
                (T::one() - amom) * *run + amom * m
            };
        }
    }
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> (T, Matrix<T>) {
    let (b, c) = (logits.rows, logits.cols);
    let mut grad = Matrix::zeros(b, c);
    let mut loss = T::zero();
    if b == 0 {
        return (loss, grad);
    }
    let inv_b = T::one() / T::of(b as f64);
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum: T = row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, v| a + v);
        let lse = max + sum.ln();
        loss = loss + (lse - row[labels[r]]);
        for j in 0..c {
            let p = (row[j] - lse).exp();
            let target = if j == labels[r] { T::one() } else { T::zero() };
            grad.data[r * c + j] = (p - target) * inv_b;
        }
    }
    (loss * inv_b, grad)
}

/// Backpropagates `dlogits` through a recorded pass. Quantizers are treated
/// as the identity (straight-through). Gradients of pruned weights are zero.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    plan: &[Op],
    pass: &ForwardPass<T>,
    dlogits: Matrix<T>,
) -> Gradients<T> {
    let mut grads = Gradients {
        dense: params
            .dense
            .iter()
            .map(|d| (vec![T::zero(); d.weights.len()], vec![T::zero(); d.bias.len()]))
            .collect(),
        batch_norm: params
            .batch_norm
            .iter()
            .map(|b| (vec![T::zero(); b.dim()], vec![T::zero(); b.dim()]))
            .collect(),
    };
    let mut dy = dlogits;
    for (op, entry) in plan.iter().zip(&pass.tape).rev() {
        match (*op, entry) {
            (Op::Dense(k), Entry::Dense { input, used_weights }) => {
                let layer = &params.dense[k];
                let (n, m) = (layer.in_dim, layer.out_dim);
                let (dw, db) = &mut grads.dense[k];
                let mut dx = Matrix::zeros(input.rows, n);
                for r in 0..input.rows {
                    let g = dy.row(r);
                    for (dbj, &gj) in db.iter_mut().zip(g) {
                        *dbj = *dbj + gj;
                    }
                    let xr = input.row(r);
                    let dxr = &mut dx.data[r * n..(r + 1) * n];
                    for i in 0..n {
                        let wi = &used_weights[i * m..(i + 1) * m];
                        let dwi = &mut dw[i * m..(i + 1) * m];
                        let xi = xr[i];
                        let mut acc = T::zero();
                        for j in 0..m {
                            acc = acc + g[j] * wi[j];
                            dwi[j] = dwi[j] + xi * g[j];
                        }
                        dxr[i] = acc;
                    }
                }
                for (g, &keep) in dw.iter_mut().zip(&layer.mask) {
                    if !keep {
                        *g = T::zero();
                    }
                }
                dy = dx;
            }
            (
                Op::BatchNorm(k),
                Entry::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let bn = &params.batch_norm[k];
                let (b, d) = (xhat.rows, xhat.cols);
                let (dgamma, dbeta) = &mut grads.batch_norm[k];
                for r in 0..b {
                    for j in 0..d {
                        let g = dy.data[r * d + j];
                        dgamma[j] = dgamma[j] + g * xhat.data[r * d + j];
                        dbeta[j] = dbeta[j] + g;
                    }
                }
                let mut dx = Matrix::zeros(b, d);
                if *batch_stats {
                    let nb = T::of(b as f64);
                    for j in 0..d {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for r in 0..b {
                            let dh = dy.data[r * d + j] * bn.gamma[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * xhat.data[r * d + j];
                        }
                        for r in 0..b {
                            let dh = dy.data[r * d + j] * bn.gamma[j];
                            dx.data[r * d + j] = inv_std[j] / nb
                                * (nb * dh - sum_dh - xhat.data[r * d + j] * sum_dh_h);
                        }
                    }
                } else {
                    for r in 0..b {
                        for j in 0..d {
                            dx.data[r * d + j] = dy.data[r * d + j] * bn.gamma[j] * inv_std[j];
                        }
                    }
                }
                dy = dx;
            }
            (Op::Activation(..), Entry::Activation { kind, input, output }) => {
                for ((g, &z), &y) in dy.data.iter_mut().zip(&input.data).zip(&output.data) {
                    *g = *g * activation_grad(*kind, z, y);
                }
            }
            (Op::Dropout(_), Entry::Dropout { mask }) => {
                if let Some(mask) = mask {
                    dy.data.iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
                }
            }
            _ => unreachable!("tape does not match plan"),
        }
    }
    grads
}

/// Adds the L1 subgradient `l1 * sign(w)` of unmasked weights.
pub fn add_l1_grad<T: Real>(params: &ModelParams<T>, grads: &mut Gradients<T>, l1: f64) {
    if l1 == 0.0 {
        return;
    }
    let l1 = T::of(l1);
    for (layer, (dw, _)) in params.dense.iter().zip(&mut grads.dense) {
        for ((g, &w), &keep) in dw.iter_mut().zip(&layer.weights).zip(&layer.mask) {
            if keep && w != T::zero() {
                *g = *g + l1 * w.signum();
            }
        }
    }
}

pub fn l1_penalty<T: Real>(params: &ModelParams<T>, l1: f64) -> T {
    if l1 == 0.0 {
        return T::zero();
    }
    let mut s = T::zero();
    for layer in &params.dense {
        for (&w, &keep) in layer.weights.iter().zip(&layer.mask) {
            if keep {
                s = s + w.abs();
            }
        }
    }
    T::of(l1) * s
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every trainable tensor, in the order
/// dense weights, dense biases, batch-norm gammas, batch-norm betas.
pub struct Adam<T> {
    hyper: AdamHyper,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

fn tensors_mut<T>(params: &mut ModelParams<T>) -> Vec<&mut Vec<T>> {
    let mut out: Vec<&mut Vec<T>> = Vec::new();
    let (dense, bn) = (&mut params.dense, &mut params.batch_norm);
    for d in dense.iter_mut() {
        out.push(&mut d.weights);
        out.push(&mut d.bias);
    }
    for b in bn.iter_mut() {
        out.push(&mut b.gamma);
        out.push(&mut b.beta);
    }
    out
}

fn grads_in_order<T>(grads: &Gradients<T>) -> Vec<&Vec<T>> {
    let mut out = Vec::new();
    for (w, b) in &grads.dense {
        out.push(w);
        out.push(b);
    }
    for (g, b) in &grads.batch_norm {
        out.push(g);
        out.push(b);
    }
    out
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ModelParams<T>, hyper: AdamHyper) -> Self {
        let mut shapes = Vec::new();
        for d in &params.dense {
            shapes.push(d.weights.len());
            shapes.push(d.bias.len());
        }
        for b in &params.batch_norm {
            shapes.push(b.dim());
            shapes.push(b.dim());
        }
        Self {
            hyper,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.hyper.beta1, self.hyper.beta2);
        let c1 = T::of(1.0 - b1.powi(self.step));
        let c2 = T::of(1.0 - b2.powi(self.step));
        let (b1, b2, eps, lr) = (T::of(b1), T::of(b2), T::of(self.hyper.eps), T::of(lr));
        let grads = grads_in_order(grads);
        for (((p, g), m), v) in tensors_mut(params)
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        params.apply_masks();
    }
}

pub fn sgd_step<T: Real>(params: &mut ModelParams<T>, grads: &Gradients<T>, lr: f64) {
    let lr = T::of(lr);
    for (p, g) in tensors_mut(params).into_iter().zip(grads_in_order(grads)) {
        for (pi, &gi) in p.iter_mut().zip(g) {
            *pi = *pi - lr * gi;
        }
    }
    params.apply_masks();
}
