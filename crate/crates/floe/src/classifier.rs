//! Binary-classifier baseline: a small dense network over embeddings,
//! trained with binary cross-entropy on normal (label 0) and anomalous
//! (label 1) samples; the sigmoid output is the anomaly score.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::exposure::{EpochRecord, TrainConfig, TrainHistory};
use crate::nn::{Activation, AdamState, Mlp, MlpTrace, PlateauScheduler};
use crate::rng::seeded_rng;

/// Predictions are clamped into [BCE_CLAMP, 1 - BCE_CLAMP] before the logs.
pub const BCE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy of a single prediction.
pub fn bce_loss(prediction: f64, label: f64) -> f64 {
    let p = prediction.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// d(bce)/d(prediction) at the clamped point.
fn bce_grad(prediction: f64, label: f64) -> f64 {
    let p = prediction.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    (p - label) / (p * (1.0 - p))
}

/// Dense classifier: input -> 256 -> 64 -> 1, rectified hidden layers and a
/// sigmoid output in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    net: Mlp,
}

impl Classifier {
    pub fn new(input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let net = Mlp::new(
            &[input_dim, 256, 64, 1],
            &[Activation::ReLU, Activation::ReLU, Activation::Sigmoid],
            rng,
        )?;
        Ok(Self { net })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.out_dim() != 1 {
            return Err(Error::shape("classifier output", 1, net.out_dim()));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    /// Anomaly score in (0, 1); higher means more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(x)?[0])
    }
}

/// How validation loss is computed for checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValidationMode {
    /// BCE over normal validation samples only (labels all zero), matching
    /// the shared protocol of the other detectors.
    #[default]
    NormalOnly,
    /// BCE over normal and anomalous validation samples.
    Mixed,
}

/// Trains the classifier with mini-batch Adam on BCE.
///
/// Batches are balanced: each shuffled normal chunk is joined by
/// `anomaly_batch_size` anomalies drawn with replacement (anomalies are
/// typically far fewer). `anomaly_validation` participates in validation
/// only under [`ValidationMode::Mixed`].
pub fn train_classifier(
    normal_train: &[Vec<f64>],
    anomaly_train: &[Vec<f64>],
    normal_validation: &[Vec<f64>],
    anomaly_validation: &[Vec<f64>],
    mode: ValidationMode,
    config: &TrainConfig,
) -> Result<(Classifier, TrainHistory)> {
    config.validate()?;
    if normal_train.is_empty() {
        return Err(Error::usage("training requires at least one normal sample"));
    }
    if anomaly_train.is_empty() {
        return Err(Error::usage(
            "classifier training requires a non-empty anomaly set",
        ));
    }
    let dim = normal_train[0].len();
    for (name, set) in [
        ("normal_train", normal_train),
        ("anomaly_train", anomaly_train),
        ("normal_validation", normal_validation),
        ("anomaly_validation", anomaly_validation),
    ] {
        if let Some(bad) = set.iter().find(|x| x.len() != dim) {
            return Err(Error::shape(format!("{name} sample"), dim, bad.len()));
        }
    }

    let mut rng = seeded_rng(config.seed);
    let mut model = Classifier::new(dim, &mut rng)?;
    let mut params = model.net.params();
    let mut adam = AdamState::new(params.len());
    let mut scheduler =
        PlateauScheduler::new(config.learning_rate, config.lr_factor, config.patience)?;
    let mut grads = vec![0.0; params.len()];

    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut order: Vec<usize> = (0..normal_train.len()).collect();
    let mut trace = MlpTrace::default();

    for epoch in 0..config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let batch_total = chunk.len() + config.anomaly_batch_size;
            let weight = 1.0 / batch_total as f64;
            grads.fill(0.0);
            let mut batch_loss = 0.0;

            let step = |model: &Classifier,
                            x: &[f64],
                            label: f64,
                            trace: &mut MlpTrace,
                            grads: &mut [f64]|
             -> f64 {
                model.net.forward_traced(x, trace);
                let p = trace.output()[0];
                let d_out = [bce_grad(p, label) * weight];
                model.net.backward(trace, &d_out, grads);
                bce_loss(p, label)
            };

            for &i in chunk {
                batch_loss += step(&model, &normal_train[i], 0.0, &mut trace, &mut grads);
            }
            for _ in 0..config.anomaly_batch_size {
                let j = rng.random_range(0..anomaly_train.len());
                batch_loss += step(&model, &anomaly_train[j], 1.0, &mut trace, &mut grads);
            }

            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite classification loss".into(),
                });
            }
            loss_sum += batch_loss;
            seen += batch_total;

            adam.step(&mut params, &grads, lr).map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
            })?;
            model.net.set_params(&params);
        }

        let train_loss = loss_sum / seen as f64;
        let val_loss = validation_bce(&model, normal_validation, anomaly_validation, mode)?;
        history.epochs.push(EpochRecord {
            epoch,
            total_loss: train_loss,
            nll_part: train_loss,
            oe_part: 0.0,
            val_nll: val_loss,
            lr,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_params.copy_from_slice(&params);
            best_epoch = epoch;
        }
        scheduler.observe(val_loss);
    }

    history.best_epoch = best_epoch;
    model.net.set_params(&best_params);
    Ok((model, history))
}

fn validation_bce(
    model: &Classifier,
    normals: &[Vec<f64>],
    anomalies: &[Vec<f64>],
    mode: ValidationMode,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for x in normals {
        sum += bce_loss(model.score(x)?, 0.0);
        count += 1;
    }
    if mode == ValidationMode::Mixed {
        for x in anomalies {
            sum += bce_loss(model.score(x)?, 1.0);
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    let mean = sum / count as f64;
    if !mean.is_finite() {
        return Err(Error::non_finite("validation BCE"));
    }
    Ok(mean)
}
