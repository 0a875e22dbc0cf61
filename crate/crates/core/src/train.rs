//! Metanet training: exact reverse-mode gradients, Adam and SGD, and a
//! deterministic epoch loop.
//!
//! Anything implementing [`Trainable`] can be trained: the metanet itself,
//! the DeepSets and flat-MLP baselines, and the weight-editing wrapper.
//! Gradients always live in the model's flat weight layout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::arch::ArchError;
use crate::exec::{Executor, Sequential};
use crate::gnn::{GnnError, GnnModel, GraphInput, Mat, MetanetOutput, ModelCache};
use crate::math::{exp, ln_1p, sqrt};
use crate::rng::stream;
use crate::tasks::{eval_kendall_tau, eval_r2};

mod backward;
mod baselines;
mod edit;


pub use baselines::{pad_to, DeepSetsBaseline, FlatMlpBaseline};
pub use edit::{EditItem, EditModel, GammaMode, GAMMA_INIT};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("non-finite loss or gradient{}", match .epoch { Some(e) => alloc::format!(" in epoch {e}"), None => String::new() })]
    NonFiniteLoss { epoch: Option<usize> },
    #[error("target has {got} values, model produces {expected}")]
    TargetShape { expected: usize, got: usize },
    #[error("binary cross-entropy target {0} is outside [0, 1]")]
    TargetOutOfRange(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    #[default]
    Mse,
    /// Logits in, probabilities as targets.
    BceWithSigmoid,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let z = exp(x);
        z / (1.0 + z)
    }
}

impl LossKind {
    /// Mean loss over the entries and its gradient with respect to `y`.
    pub fn value_and_grad(self, y: &[f64], t: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
        if y.len() != t.len() {
            return Err(TrainError::TargetShape { expected: y.len(), got: t.len() });
        }
        let n = y.len().max(1) as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(y.len());
        for (&p, &q) in y.iter().zip(t) {
            match self {
                LossKind::Mse => {
                    loss += (p - q) * (p - q);
                    grad.push(2.0 * (p - q) / n);
                }
                LossKind::BceWithSigmoid => {
                    if !(0.0..=1.0).contains(&q) {
                        return Err(TrainError::TargetOutOfRange(q));
                    }
                    loss += p.max(0.0) - p * q + ln_1p(exp(-p.abs()));
                    grad.push((sigmoid(p) - q) / n);
                }
            }
        }
        Ok((loss / n, grad))
    }

    /// Maps a raw output to target space.
    pub fn link(self, y: f64) -> f64 {
        match self {
            LossKind::Mse => y,
            LossKind::BceWithSigmoid => sigmoid(y),
        }
    }
}

/// Flat weight gradient, laid out like the model's `to_flat`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub flat: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self { flat: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|x| x.is_finite())
    }

    /// The gradient viewed in the shape of `like`.
    pub fn as_model(&self, like: &GnnModel) -> GnnModel {
        let mut m = like.clone();
        m.set_flat(&self.flat);
        m
    }
}

/// A differentiable model with a flat weight vector.
pub trait Trainable: Clone + Sync {
    type Input: Sync;

    fn to_flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]);
    fn num_params(&self) -> usize {
        self.to_flat().len()
    }
    /// Raw outputs for one input.
    fn predict(&self, x: &Self::Input) -> Result<Vec<f64>, TrainError>;
    /// Loss on one item and its gradient with respect to the flat weights.
    fn item_loss_grad(&self, x: &Self::Input, target: &[f64], loss: LossKind) -> Result<(f64, Vec<f64>), TrainError>;
}

fn output_grad_shape(out: &MetanetOutput, dy: Vec<f64>) -> Mat {
    match out {
        MetanetOutput::PerEdge(m) => Mat::from_vec(m.rows(), m.cols(), dy),
        _ => Mat::from_vec(1, dy.len(), dy),
    }
}

impl GnnModel {
    /// Gradient of `sum(grad_out * output)` for an output gradient in the
    /// readout's shape.
    pub(crate) fn backward_cached(&self, g: &GraphInput, cache: &ModelCache, grad_out: &Mat) -> Vec<f64> {
        let mut grad = vec![0.0; GnnModel::num_params(self)];
        backward::model_backward(self, g, cache, grad_out, &mut grad);
        grad
    }
}

impl Trainable for GnnModel {
    type Input = GraphInput;

    fn to_flat(&self) -> Vec<f64> {
        GnnModel::to_flat(self)
    }

    fn set_flat(&mut self, flat: &[f64]) {
        GnnModel::set_flat(self, flat);
    }

    fn num_params(&self) -> usize {
        GnnModel::num_params(self)
    }

    fn predict(&self, x: &GraphInput) -> Result<Vec<f64>, TrainError> {
        Ok(crate::gnn::forward_metanet(self, x)?.values().to_vec())
    }

    fn item_loss_grad(&self, x: &GraphInput, target: &[f64], loss: LossKind) -> Result<(f64, Vec<f64>), TrainError> {
        let (out, cache) = self.forward_cached(x)?;
        let (l, dy) = loss.value_and_grad(out.values(), target)?;
        Ok((l, self.backward_cached(x, &cache, &output_grad_shape(&out, dy))))
    }
}

/// Per-item losses and the summed gradient over `indices`, reduced in
/// index order.
fn accumulate<M: Trainable, E: Executor>(model: &M, data: &[(M::Input, Vec<f64>)], indices: &[usize], loss: LossKind, exec: &E) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let parts = exec.map(indices.len(), |k| {
        let (x, t) = &data[indices[k]];
        model.item_loss_grad(x, t, loss)
    });
    let mut losses = Vec::with_capacity(indices.len());
    let mut grad = vec![0.0; model.num_params()];
    for p in parts {
        let (l, g) = p?;
        losses.push(l);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((losses, grad))
}

/// Mean loss over `batch` and its exact gradient.
pub fn loss_and_grad<M: Trainable>(model: &M, batch: &[(M::Input, Vec<f64>)], loss: LossKind) -> Result<(f64, Gradients), TrainError> {
    loss_and_grad_with(model, batch, loss, &Sequential)
}

pub fn loss_and_grad_with<M: Trainable, E: Executor>(model: &M, batch: &[(M::Input, Vec<f64>)], loss: LossKind, exec: &E) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let indices: Vec<usize> = (0..batch.len()).collect();
    let (losses, mut grad) = accumulate(model, batch, &indices, loss, exec)?;
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    let mean = losses.iter().sum::<f64>() / n;
    let grads = Gradients { flat: grad };
    if !mean.is_finite() || !grads.is_finite() {
        return Err(TrainError::NonFiniteLoss { epoch: None });
    }
    Ok((mean, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    Adam { lr: f64 },
    Sgd { lr: f64 },
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    /// In-place update of `params`.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::WeightCount {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { lr } => {
                let t = self.step as f64;
                let c1 = 1.0 - libm::pow(ADAM_BETA1, t);
                let c2 = 1.0 - libm::pow(ADAM_BETA2, t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= lr * mhat / (sqrt(vhat) + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Pure form of [`OptimizerState::apply`].
pub fn optimizer_step<M: Trainable>(model: &M, grads: &Gradients, state: &OptimizerState) -> Result<(M, OptimizerState), TrainError> {
    let mut flat = model.to_flat();
    let mut next = state.clone();
    next.apply(&mut flat, &grads.flat)?;
    let mut out = model.clone();
    out.set_flat(&flat);
    Ok((out, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerName {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub optimizer: OptimizerName,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            loss: LossKind::Mse,
            optimizer: OptimizerName::Adam,
        }
    }
}

impl TrainConfig {
    pub fn optimizer_kind(&self) -> OptimizerKind {
        match self.optimizer {
            OptimizerName::Adam => OptimizerKind::Adam { lr: self.lr },
            OptimizerName::Sgd => OptimizerKind::Sgd { lr: self.lr },
        }
    }
}

/// Loss and ranking metrics of a model on a set of items. `r2` and `tau`
/// pool every output entry; they are NaN when undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalMetrics {
    pub loss: f64,
    pub r2: f64,
    pub tau: f64,
    pub count: usize,
}

pub fn evaluate<M: Trainable, E: Executor>(model: &M, items: &[(M::Input, Vec<f64>)], loss: LossKind, exec: &E) -> Result<EvalMetrics, TrainError> {
    if items.is_empty() {
        return Ok(EvalMetrics {
            loss: f64::NAN,
            r2: f64::NAN,
            tau: f64::NAN,
            count: 0,
        });
    }
    let preds = exec.map(items.len(), |k| model.predict(&items[k].0));
    let (mut total, mut pred_flat, mut target_flat) = (0.0, Vec::new(), Vec::new());
    for (p, (_, t)) in preds.into_iter().zip(items) {
        let p = p?;
        total += loss.value_and_grad(&p, t)?.0;
        pred_flat.extend(p.iter().map(|&y| loss.link(y)));
        target_flat.extend_from_slice(t);
    }
    Ok(EvalMetrics {
        loss: total / items.len() as f64,
        r2: eval_r2(&pred_flat, &target_flat).unwrap_or(f64::NAN),
        tau: eval_kendall_tau(&pred_flat, &target_flat).unwrap_or(f64::NAN),
        count: items.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-item loss seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_r2: f64,
    pub val_tau: f64,
}

/// Trains with shuffled mini-batches. The shuffle, and so the whole
/// trajectory, is a function of `cfg.seed`.
pub fn train<M: Trainable, E: Executor>(
    model: M,
    train_set: &[(M::Input, Vec<f64>)],
    val_set: &[(M::Input, Vec<f64>)],
    cfg: &TrainConfig,
    exec: &E,
) -> Result<(M, Vec<EpochMetrics>), TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = model;
    let mut flat = model.to_flat();
    let mut opt = OptimizerState::new(cfg.optimizer_kind(), flat.len());
    let mut rng = stream(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut item_loss = vec![0.0; train_set.len()];
        for chunk in order.chunks(batch) {
            let (losses, mut grad) = accumulate(&model, train_set, chunk, cfg.loss, exec)?;
            let n = chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            if losses.iter().any(|l| !l.is_finite()) || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch: Some(epoch) });
            }
            for (&i, l) in chunk.iter().zip(losses) {
                item_loss[i] = l;
            }
            opt.apply(&mut flat, &grad)?;
            model.set_flat(&flat);
        }
        let val = evaluate(&model, val_set, cfg.loss, exec)?;
        trace.push(EpochMetrics {
            epoch,
            train_loss: item_loss.iter().sum::<f64>() / train_set.len() as f64,
            val_loss: val.loss,
            val_r2: val.r2,
            val_tau: val.tau,
        });
    }
    Ok((model, trace))
}

/// CSV with header `epoch,train_loss,val_loss,val_r2,val_tau`.
pub fn trace_csv(trace: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_r2,val_tau\n");
    for m in trace {
        let _ = writeln!(s, "{},{},{},{},{}", m.epoch, m.train_loss, m.val_loss, m.val_r2, m.val_tau);
    }
    s
}
