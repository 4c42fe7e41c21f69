//! SGD with classical momentum, step learning-rate decay and early stopping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEARNING_RATE: f64 = 2.5e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    /// One velocity per parameter tensor, created on the first step.
    #[serde(skip)]
    pub velocity: Vec<Tensor>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM)
    }
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }
}

/// `v <- momentum * v - lr * g; p <- p + v`
pub fn sgd_step(params: Vec<&mut Tensor>, grads: &[&Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "sgd_step: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if !p.same_shape(g) {
            return Err(Error::Shape(format!("sgd_step: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    } else if state.velocity.len() != params.len() || state.velocity.iter().zip(&params).any(|(v, p)| !v.same_shape(p)) {
        return Err(Error::Shape("sgd_step: velocity does not mirror parameters".into()));
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for ((p, g), v) in params.into_iter().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            lr_decay_factor: 0.1,
            lr_decay_every: 150,
            early_stop_patience: 5,
            max_epochs: 500,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidArgument("early-stop patience must be at least 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::InvalidArgument("lr decay factor must be in (0, 1]".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::InvalidArgument("lr decay period must be at least 1 epoch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick {
    /// Learning rate to use from this epoch on, if it changes.
    pub new_lr: Option<f64>,
    pub stop: bool,
    /// Index into the validation history of the best (lowest) loss so far.
    pub best_epoch: Option<usize>,
}

/// Evaluated at the start of (0-based) `epoch`, with the validation losses
/// of all completed epochs.
///
/// The learning rate is multiplied by the decay factor at epochs
/// `every, 2*every, ...`. Training stops once the last `patience` epochs
/// all failed to beat the best loss; the caller restores the weights from
/// `best_epoch`.
pub fn schedule_tick(schedule: &TrainingSchedule, current_lr: f64, epoch: usize, val_losses: &[f64]) -> Tick {
    let new_lr = (epoch > 0 && epoch % schedule.lr_decay_every == 0).then(|| current_lr * schedule.lr_decay_factor);

    let mut best_epoch = None;
    let mut best = f64::INFINITY;
    for (i, &l) in val_losses.iter().enumerate() {
        if l < best {
            best = l;
            best_epoch = Some(i);
        }
    }
    let stop = match best_epoch {
        Some(b) => val_losses.len() - 1 - b >= schedule.early_stop_patience,
        None => val_losses.len() >= schedule.early_stop_patience,
    };
    Tick { new_lr, stop, best_epoch }
}
