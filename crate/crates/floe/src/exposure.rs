//! Training objectives and the flow training loop.
//!
//! Two regimes share one code path: plain maximum-likelihood training on
//! normal samples only, and outlier-exposed training where a margin ranking
//! loss over (normal, anomaly) pairs pushes known anomalies toward lower
//! likelihood. The combined objective is
//!
//! `mean NLL(normals) + lambda * mean max(0, gamma + NLL(normal) - NLL(anomaly))`
//!
//! with `lambda = 0` (or no anomalies at all) recovering plain training
//! exactly.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{nll_from_output, FlowModel, FlowTrace};
use crate::nn::{AdamState, PlateauScheduler};
use crate::rng::seeded_rng;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the outlier-exposure term.
    pub lambda: f64,
    /// Margin by which anomaly NLL should exceed normal NLL.
    pub gamma: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Anomalies drawn (with replacement) per normal mini-batch.
    pub anomaly_batch_size: usize,
    pub seed: u64,
    /// Plateau epochs tolerated before the learning rate drops.
    pub patience: usize,
    /// Learning-rate reduction divisor.
    pub lr_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 100.0,
            learning_rate: 0.001,
            max_epochs: 500,
            batch_size: 256,
            anomaly_batch_size: 256,
            seed: 0,
            patience: 10,
            lr_factor: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::usage("lambda must be >= 0"));
        }
        if self.gamma < 0.0 {
            return Err(Error::usage("gamma must be >= 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::usage("learning rate must be > 0"));
        }
        if self.batch_size == 0 || self.anomaly_batch_size == 0 {
            return Err(Error::usage("batch sizes must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::usage("max_epochs must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::usage("patience must be >= 1"));
        }
        if !(self.lr_factor > 1.0) {
            return Err(Error::usage("lr_factor must be > 1"));
        }
        Ok(())
    }
}

/// Margin ranking loss: `max(0, gamma + nll_normal - nll_anomaly)`.
/// Zero exactly when the anomaly is at least `gamma` nats less likely.
pub fn margin_loss(nll_normal: f64, nll_anomaly: f64, gamma: f64) -> f64 {
    (gamma + nll_normal - nll_anomaly).max(0.0)
}

/// Losses of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// `nll + lambda * margin`.
    pub total: f64,
    /// Mean NLL over the normal batch.
    pub nll: f64,
    /// Mean margin loss over the pairing (zero when no anomalies).
    pub margin: f64,
}

/// Pairs the j-th anomaly with normal `j % normals`, cycling the normal
/// batch when the anomaly batch is longer.
fn pair_normal(j: usize, normals: usize) -> usize {
    j % normals
}

/// Evaluates the combined objective on explicit batches. The anomaly batch
/// is paired element-wise against the (cycled) normal batch.
pub fn combined_batch_loss(
    model: &FlowModel,
    normal_batch: &[Vec<f64>],
    anomaly_batch: &[Vec<f64>],
    lambda: f64,
    gamma: f64,
) -> Result<BatchLoss> {
    if normal_batch.is_empty() {
        return Err(Error::usage("normal batch must be non-empty"));
    }
    let normal_nll: Vec<f64> = normal_batch
        .iter()
        .map(|x| model.nll(x))
        .collect::<Result<_>>()?;
    let anomaly_nll: Vec<f64> = anomaly_batch
        .iter()
        .map(|x| model.nll(x))
        .collect::<Result<_>>()?;
    let nll = normal_nll.iter().sum::<f64>() / normal_nll.len() as f64;
    let margin = if anomaly_nll.is_empty() {
        0.0
    } else {
        anomaly_nll
            .iter()
            .enumerate()
            .map(|(j, &a)| margin_loss(normal_nll[pair_normal(j, normal_nll.len())], a, gamma))
            .sum::<f64>()
            / anomaly_nll.len() as f64
    };
    let total = nll + lambda * margin;
    if !total.is_finite() {
        return Err(Error::non_finite("combined batch loss"));
    }
    Ok(BatchLoss { total, nll, margin })
}

/// Like [`combined_batch_loss`] but also accumulates the exact gradient of
/// the batch objective into `grads` (flat, model parameter order).
///
/// At the hinge kink (margin term exactly zero) the inactive branch is
/// used, i.e. the pair contributes no gradient.
pub fn combined_batch_grad(
    model: &FlowModel,
    normal_batch: &[Vec<f64>],
    anomaly_batch: &[Vec<f64>],
    lambda: f64,
    gamma: f64,
    grads: &mut [f64],
) -> Result<BatchLoss> {
    assert_eq!(grads.len(), model.param_count(), "combined grad length");
    if normal_batch.is_empty() {
        return Err(Error::usage("normal batch must be non-empty"));
    }
    let b = normal_batch.len();
    let p = anomaly_batch.len();

    let mut normal_traces: Vec<FlowTrace> = vec![FlowTrace::default(); b];
    let mut normal_nll = vec![0.0; b];
    for (i, x) in normal_batch.iter().enumerate() {
        model.forward_traced(x, &mut normal_traces[i])?;
        normal_nll[i] = nll_from_output(
            model.dimension(),
            normal_traces[i].z(),
            normal_traces[i].log_det(),
        );
    }
    let mut anomaly_traces: Vec<FlowTrace> = vec![FlowTrace::default(); p];
    let mut anomaly_nll = vec![0.0; p];
    for (j, x) in anomaly_batch.iter().enumerate() {
        model.forward_traced(x, &mut anomaly_traces[j])?;
        anomaly_nll[j] = nll_from_output(
            model.dimension(),
            anomaly_traces[j].z(),
            anomaly_traces[j].log_det(),
        );
    }

    // Per-sample NLL coefficients in the batch objective.
    let mut normal_weight = vec![1.0 / b as f64; b];
    let mut anomaly_weight = vec![0.0; p];
    let mut margin_sum = 0.0;
    if p > 0 && lambda != 0.0 {
        let pair_weight = lambda / p as f64;
        for j in 0..p {
            let i = pair_normal(j, b);
            let m = margin_loss(normal_nll[i], anomaly_nll[j], gamma);
            margin_sum += m;
            if m > 0.0 {
                normal_weight[i] += pair_weight;
                anomaly_weight[j] -= pair_weight;
            }
        }
    } else if p > 0 {
        for j in 0..p {
            margin_sum += margin_loss(normal_nll[pair_normal(j, b)], anomaly_nll[j], gamma);
        }
    }

    for (i, trace) in normal_traces.iter().enumerate() {
        model.nll_backward(trace, normal_weight[i], grads);
    }
    for (j, trace) in anomaly_traces.iter().enumerate() {
        if anomaly_weight[j] != 0.0 {
            model.nll_backward(trace, anomaly_weight[j], grads);
        }
    }

    let nll = normal_nll.iter().sum::<f64>() / b as f64;
    let margin = if p > 0 { margin_sum / p as f64 } else { 0.0 };
    let total = nll + lambda * margin;
    if !total.is_finite() {
        return Err(Error::non_finite("combined batch loss"));
    }
    Ok(BatchLoss { total, nll, margin })
}

/// One epoch's record in a training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean combined loss over the epoch's batches.
    pub total_loss: f64,
    /// Mean NLL part (or primary loss for non-flow trainers).
    pub nll_part: f64,
    /// Mean margin part (zero when no exposure happens).
    pub oe_part: f64,
    /// Validation loss over normal samples only.
    pub val_nll: f64,
    /// Learning rate the epoch was trained with.
    pub lr: f64,
}

/// Per-epoch training record plus the selected checkpoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Earliest epoch index achieving the minimum validation loss.
    pub best_epoch: usize,
}

impl TrainHistory {
    /// Table export: `epoch,total_loss,nll_part,oe_part,val_nll,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,total_loss,nll_part,oe_part,val_nll,lr\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.total_loss, r.nll_part, r.oe_part, r.val_nll, r.lr
            ));
        }
        out
    }
}

/// Earliest epoch with the minimum validation loss.
pub fn select_checkpoint(history: &TrainHistory) -> Result<usize> {
    if history.epochs.is_empty() {
        return Err(Error::usage("cannot select a checkpoint from an empty history"));
    }
    let mut best = 0;
    for (i, r) in history.epochs.iter().enumerate() {
        if r.val_nll < history.epochs[best].val_nll {
            best = i;
        }
    }
    Ok(best)
}

/// Trains a flow with mini-batch Adam on the combined objective.
///
/// Each epoch shuffles the normal set and walks it in batches; when
/// exposure is active (`lambda > 0` and anomalies exist) every batch draws
/// `anomaly_batch_size` anomalies with replacement. Validation NLL over
/// `normal_validation` only drives the plateau schedule and checkpoint
/// choice; the returned model carries the best epoch's parameters.
/// Bit-identical for identical inputs and seed.
pub fn train_flow(
    mut model: FlowModel,
    normal_train: &[Vec<f64>],
    anomaly_train: &[Vec<f64>],
    normal_validation: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(FlowModel, TrainHistory)> {
    config.validate()?;
    if normal_train.is_empty() {
        return Err(Error::usage("training requires at least one normal sample"));
    }
    for (name, set) in [
        ("normal_train", normal_train),
        ("anomaly_train", anomaly_train),
        ("normal_validation", normal_validation),
    ] {
        if let Some(bad) = set.iter().find(|x| x.len() != model.dimension()) {
            return Err(Error::shape(
                format!("{name} sample"),
                model.dimension(),
                bad.len(),
            ));
        }
    }

    let expose = config.lambda > 0.0 && !anomaly_train.is_empty();
    let mut rng = seeded_rng(config.seed);
    let mut params = model.params();
    let mut adam = AdamState::new(params.len());
    let mut scheduler =
        PlateauScheduler::new(config.learning_rate, config.lr_factor, config.patience)?;
    let mut grads = vec![0.0; params.len()];

    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;

    let mut order: Vec<usize> = (0..normal_train.len()).collect();
    let mut normal_batch: Vec<Vec<f64>> = Vec::new();
    let mut anomaly_batch: Vec<Vec<f64>> = Vec::new();

    for epoch in 0..config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut rng);

        let mut nll_sum = 0.0;
        let mut margin_sum = 0.0;
        let mut pair_count = 0usize;

        for chunk in order.chunks(config.batch_size) {
            normal_batch.clear();
            normal_batch.extend(chunk.iter().map(|&i| normal_train[i].clone()));
            anomaly_batch.clear();
            if expose {
                for _ in 0..config.anomaly_batch_size {
                    let j = rng.random_range(0..anomaly_train.len());
                    anomaly_batch.push(anomaly_train[j].clone());
                }
            }

            grads.fill(0.0);
            let loss = combined_batch_grad(
                &model,
                &normal_batch,
                &anomaly_batch,
                config.lambda,
                config.gamma,
                &mut grads,
            )
            .map_err(|e| diverged(epoch, e))?;
            nll_sum += loss.nll * normal_batch.len() as f64;
            margin_sum += loss.margin * anomaly_batch.len() as f64;
            pair_count += anomaly_batch.len();

            adam.step(&mut params, &grads, lr).map_err(|e| diverged(epoch, e))?;
            model.set_params(&params);
        }

        let nll_part = nll_sum / normal_train.len() as f64;
        let oe_part = if pair_count > 0 {
            margin_sum / pair_count as f64
        } else {
            0.0
        };
        let val_nll = mean_nll(&model, normal_validation).map_err(|e| diverged(epoch, e))?;

        history.epochs.push(EpochRecord {
            epoch,
            total_loss: nll_part + config.lambda * oe_part,
            nll_part,
            oe_part,
            val_nll,
            lr,
        });

        if val_nll < best_val {
            best_val = val_nll;
            best_params.copy_from_slice(&params);
            best_epoch = epoch;
        }
        scheduler.observe(val_nll);
    }

    history.best_epoch = best_epoch;
    model.set_params(&best_params);
    Ok((model, history))
}

fn diverged(epoch: usize, source: Error) -> Error {
    match source {
        Error::NonFinite { context } => Error::Diverged {
            epoch,
            reason: format!("non-finite value in {context}"),
        },
        other => other,
    }
}

/// Mean NLL over a sample set; 0 for an empty set.
pub fn mean_nll(model: &FlowModel, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for x in samples {
        sum += model.nll(x)?;
    }
    let mean = sum / samples.len() as f64;
    if !mean.is_finite() {
        return Err(Error::non_finite("validation NLL"));
    }
    Ok(mean)
}
