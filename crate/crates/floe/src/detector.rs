//! One training-and-scoring surface over the whole detector roster: flows
//! with and without outlier exposure, the reconstruction autoencoder (MAE or
//! MSE scoring), and the binary classifier. Sweeps, the CLI, and tests all
//! go through here so every pipeline trains and scores identically.

use serde::{Deserialize, Serialize};

use crate::classifier::{train_classifier, Classifier, ValidationMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{ScoredEntry, ScoredSet};
use crate::exposure::{train_flow, TrainConfig, TrainHistory};
use crate::flow::{FlowConfig, FlowModel, MaskScheme};
use crate::reduce::{reconstruction_score, train_autoencoder, AeConfig, ScoreKind};
use crate::rng::{derive_seed, seeded_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Flow trained on normal samples only.
    Rnvp,
    /// Flow trained with the margin exposure term.
    RnvpOe,
    /// Binary classifier baseline.
    Bclass,
    /// Autoencoder scored by mean absolute reconstruction error.
    AeMae,
    /// Autoencoder scored by mean squared reconstruction error.
    AeMse,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Rnvp => "rnvp",
            DetectorKind::RnvpOe => "rnvp_oe",
            DetectorKind::Bclass => "bclass",
            DetectorKind::AeMae => "ae_mae",
            DetectorKind::AeMse => "ae_mse",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "rnvp" => Ok(DetectorKind::Rnvp),
            "rnvp_oe" => Ok(DetectorKind::RnvpOe),
            "bclass" => Ok(DetectorKind::Bclass),
            "ae_mae" => Ok(DetectorKind::AeMae),
            "ae_mse" => Ok(DetectorKind::AeMse),
            other => Err(Error::usage(format!(
                "unknown detector {other:?} (expected rnvp, rnvp_oe, bclass, ae_mae, or ae_mse)"
            ))),
        }
    }

    /// Detectors that consume anomalous training samples.
    pub fn uses_exposure(self) -> bool {
        matches!(self, DetectorKind::RnvpOe | DetectorKind::Bclass)
    }
}

/// Flow architecture knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowArch {
    pub coupling_layers: usize,
    pub hidden_width: usize,
    pub scale_clamp: f64,
    pub mask_scheme: MaskScheme,
}

impl Default for FlowArch {
    fn default() -> Self {
        Self {
            coupling_layers: 4,
            hidden_width: 128,
            scale_clamp: 4.0,
            mask_scheme: MaskScheme::Alternating,
        }
    }
}

/// Autoencoder architecture knobs (detector and reducer use).
#[derive(Debug, Clone, PartialEq)]
pub struct AeArch {
    pub hidden_width: usize,
    pub bottleneck: usize,
}

impl Default for AeArch {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            bottleneck: 128,
        }
    }
}

/// Everything needed to train one detector on feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub train: TrainConfig,
    pub flow: FlowArch,
    pub autoencoder: AeArch,
    pub classifier_validation: ValidationMode,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            train: TrainConfig::default(),
            flow: FlowArch::default(),
            autoencoder: AeArch::default(),
            classifier_validation: ValidationMode::NormalOnly,
        }
    }
}

/// A trained detector with its scoring rule attached.
#[derive(Debug, Clone)]
pub enum TrainedDetector {
    Flow(FlowModel),
    Classifier(Classifier),
    Autoencoder {
        model: crate::reduce::Autoencoder,
        score: ScoreKind,
    },
}

impl TrainedDetector {
    /// Anomaly score of one sample; higher means more anomalous.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            TrainedDetector::Flow(m) => m.anomaly_score(x),
            TrainedDetector::Classifier(c) => c.score(x),
            TrainedDetector::Autoencoder { model, score } => {
                reconstruction_score(model, x, *score)
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedDetector::Flow(m) => m.dimension(),
            TrainedDetector::Classifier(c) => c.input_dim(),
            TrainedDetector::Autoencoder { model, .. } => model.input_dim(),
        }
    }

    /// Scores every sample of a dataset, keeping labels.
    pub fn score_dataset(&self, dataset: &Dataset) -> Result<ScoredSet> {
        if dataset.dimension() != self.input_dim() {
            return Err(Error::shape(
                "detector input vs dataset dimension",
                self.input_dim(),
                dataset.dimension(),
            ));
        }
        let mut entries = Vec::with_capacity(dataset.len());
        for s in dataset.samples() {
            entries.push(ScoredEntry {
                score: self.score(&s.features)?,
                label: s.label.clone(),
            });
        }
        Ok(ScoredSet::new(entries))
    }
}

/// Trains the configured detector.
///
/// Flow weights are initialized from a stream derived from the training
/// seed, so two runs with one seed are bit-identical end to end. The plain
/// flow runs the exposed code path with `lambda = 0`, which makes it
/// bit-identical to an exposed run whose weight is zero.
pub fn train_detector(
    config: &DetectorConfig,
    input_dim: usize,
    normal_train: &[Vec<f64>],
    anomaly_train: &[Vec<f64>],
    normal_validation: &[Vec<f64>],
) -> Result<(TrainedDetector, TrainHistory)> {
    match config.kind {
        DetectorKind::Rnvp | DetectorKind::RnvpOe => {
            let flow_cfg = FlowConfig {
                dimension: input_dim,
                coupling_layers: config.flow.coupling_layers,
                hidden_width: config.flow.hidden_width,
                scale_clamp: config.flow.scale_clamp,
                mask_scheme: config.flow.mask_scheme,
                enforce_coverage: config.flow.mask_scheme == MaskScheme::Alternating,
            };
            let mut init_rng = seeded_rng(derive_seed(config.train.seed, 1));
            let model = FlowModel::new(&flow_cfg, &mut init_rng)?;
            let mut train_cfg = config.train.clone();
            if config.kind == DetectorKind::Rnvp {
                train_cfg.lambda = 0.0;
            }
            let (model, history) =
                train_flow(model, normal_train, anomaly_train, normal_validation, &train_cfg)?;
            Ok((TrainedDetector::Flow(model), history))
        }
        DetectorKind::Bclass => {
            let (model, history) = train_classifier(
                normal_train,
                anomaly_train,
                normal_validation,
                &[],
                config.classifier_validation,
                &config.train,
            )?;
            Ok((TrainedDetector::Classifier(model), history))
        }
        DetectorKind::AeMae | DetectorKind::AeMse => {
            let arch = AeConfig {
                hidden_width: config.autoencoder.hidden_width,
                bottleneck: config.autoencoder.bottleneck,
                ..AeConfig::new(input_dim, config.autoencoder.bottleneck)
            };
            let (model, history) =
                train_autoencoder(normal_train, normal_validation, &arch, &config.train)?;
            let score = if config.kind == DetectorKind::AeMae {
                ScoreKind::Mae
            } else {
                ScoreKind::Mse
            };
            Ok((TrainedDetector::Autoencoder { model, score }, history))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal;

    fn cloud(seed: u64, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| (0..d).map(|_| shift + standard_normal(&mut rng)).collect())
            .collect()
    }

    fn quick_config(kind: DetectorKind) -> DetectorConfig {
        let mut cfg = DetectorConfig::new(kind);
        cfg.train.max_epochs = 4;
        cfg.train.batch_size = 32;
        cfg.train.anomaly_batch_size = 32;
        cfg.train.seed = 5;
        cfg.flow.hidden_width = 16;
        cfg.autoencoder.hidden_width = 16;
        cfg.autoencoder.bottleneck = 2;
        cfg
    }

    #[test]
    fn plain_flow_equals_zero_lambda_exposed_flow() {
        let normals = cloud(1, 48, 4, 0.0);
        let anomalies = cloud(2, 12, 4, 3.0);
        let val = cloud(3, 16, 4, 0.0);

        let plain = quick_config(DetectorKind::Rnvp);
        let mut zero_lambda = quick_config(DetectorKind::RnvpOe);
        zero_lambda.train.lambda = 0.0;

        let (d1, h1) = train_detector(&plain, 4, &normals, &anomalies, &val).unwrap();
        let (d2, h2) = train_detector(&zero_lambda, 4, &normals, &anomalies, &val).unwrap();
        assert_eq!(h1, h2);
        match (d1, d2) {
            (TrainedDetector::Flow(a), TrainedDetector::Flow(b)) => {
                assert_eq!(a.params(), b.params());
            }
            _ => panic!("expected flows"),
        }
    }

    #[test]
    fn every_detector_trains_and_scores() {
        let normals = cloud(11, 40, 4, 0.0);
        let anomalies = cloud(12, 10, 4, 4.0);
        let val = cloud(13, 12, 4, 0.0);
        let mut ds_samples = Vec::new();
        for f in cloud(14, 10, 4, 0.0) {
            ds_samples.push(crate::data::LabeledSample::normal(f));
        }
        for f in cloud(15, 10, 4, 4.0) {
            ds_samples.push(crate::data::LabeledSample::anomaly("far", f));
        }
        let test = Dataset::new(ds_samples, 4).unwrap();

        for kind in [
            DetectorKind::Rnvp,
            DetectorKind::RnvpOe,
            DetectorKind::Bclass,
            DetectorKind::AeMae,
            DetectorKind::AeMse,
        ] {
            let cfg = quick_config(kind);
            let (detector, history) =
                train_detector(&cfg, 4, &normals, &anomalies, &val).unwrap();
            assert_eq!(history.epochs.len(), 4);
            let scored = detector.score_dataset(&test).unwrap();
            assert_eq!(scored.entries.len(), 20);
            assert!(scored.entries.iter().all(|e| e.score.is_finite()));
        }
    }

    #[test]
    fn detector_names_round_trip() {
        for kind in [
            DetectorKind::Rnvp,
            DetectorKind::RnvpOe,
            DetectorKind::Bclass,
            DetectorKind::AeMae,
            DetectorKind::AeMse,
        ] {
            assert_eq!(DetectorKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(DetectorKind::parse("nope").is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let normals = cloud(21, 30, 3, 0.0);
        let anomalies = cloud(22, 8, 3, 3.0);
        let val = cloud(23, 8, 3, 0.0);
        let cfg = quick_config(DetectorKind::RnvpOe);
        let (detector, _) = train_detector(&cfg, 3, &normals, &anomalies, &val).unwrap();
        let wrong = Dataset::new(vec![crate::data::LabeledSample::normal(vec![0.0; 5])], 5).unwrap();
        assert!(matches!(
            detector.score_dataset(&wrong),
            Err(Error::Shape { .. })
        ));
    }
}
