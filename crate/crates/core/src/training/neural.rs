//! Mini-batch SGD loop shared by both network families.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{NeuralConfig, TrainingSummary};
use crate::dataset::PreparedDataset;
use crate::error::Result;
use crate::neural::loss::{huber, l2_penalty};
use crate::neural::optim::{schedule_tick, OptimizerState};
use crate::neural::{apply_sgd, loss_and_gradient, Network};
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralSummary {
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub val_losses: Vec<f64>,
}

impl From<NeuralSummary> for TrainingSummary {
    fn from(s: NeuralSummary) -> Self {
        TrainingSummary {
            iterations: s.epochs,
            best_iteration: s.best_epoch,
            validation_trace: s.val_losses,
        }
    }
}

/// Mean Huber loss plus the L2 penalty over a whole split.
fn objective<N: Network>(net: &N, windows: &[&Tensor], targets: &[f64], cfg: &NeuralConfig) -> Result<f64> {
    let mut total = 0.0;
    for (w, t) in windows.chunks(64).zip(targets.chunks(64)) {
        for (p, y) in net.predict_batch(w)?.iter().zip(t) {
            total += huber(p - y, cfg.loss.huber_delta);
        }
    }
    Ok(total / windows.len() as f64 + l2_penalty(net.l2_kernel(), cfg.loss.l2_lambda))
}

/// Train `net` in place. Each epoch visits the training split in a freshly
/// shuffled order; the weights of the epoch with the lowest validation
/// objective are restored at the end.
pub fn train_network<N: Network>(net: &mut N, ds: &PreparedDataset, cfg: &NeuralConfig, rng: &mut impl Rng) -> Result<NeuralSummary> {
    let train_w: Vec<&Tensor> = ds.train().iter().map(|s| &s.inputs).collect();
    let train_y: Vec<f64> = ds.train().iter().map(|s| s.target).collect();
    let val_w: Vec<&Tensor> = ds.val().iter().map(|s| &s.inputs).collect();
    let val_y: Vec<f64> = ds.val().iter().map(|s| s.target).collect();

    let mut opt = OptimizerState::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..train_w.len()).collect();
    let mut val_losses = Vec::new();
    let mut best: Option<(usize, N)> = None;
    let mut best_loss = f64::INFINITY;
    let mut batch_w = Vec::with_capacity(cfg.batch_size);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.schedule.max_epochs {
        let tick = schedule_tick(&cfg.schedule, opt.learning_rate, epoch, &val_losses);
        if tick.stop {
            break;
        }
        if let Some(lr) = tick.new_lr {
            log::debug!("epoch {epoch}: learning rate {lr:e}");
            opt.learning_rate = lr;
        }
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_w.clear();
            batch_y.clear();
            batch_w.extend(chunk.iter().map(|&i| train_w[i]));
            batch_y.extend(chunk.iter().map(|&i| train_y[i]));
            let (_, grad) = loss_and_gradient(net, &batch_w, &batch_y, &cfg.loss)?;
            apply_sgd(net, &grad, &mut opt)?;
        }
        let val = objective(net, &val_w, &val_y, cfg)?;
        log::debug!("epoch {epoch}: validation objective {val:.6}");
        val_losses.push(val);
        if val < best_loss {
            best_loss = val;
            best = Some((epoch, net.clone()));
        }
    }

    let best_epoch = best.as_ref().map(|(e, _)| *e);
    if let Some((_, weights)) = best {
        *net = weights;
    }
    Ok(NeuralSummary {
        epochs: val_losses.len(),
        best_epoch,
        val_losses,
    })
}
