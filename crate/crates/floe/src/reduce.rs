//! Dimensionality reduction and the reconstruction baseline: a dense
//! undercomplete autoencoder trained on normal data only (reconstruction
//! error doubles as an anomaly score), and PCA as a deterministic
//! alternative reducer.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::exposure::{EpochRecord, TrainConfig, TrainHistory};
use crate::linalg::symmetric_eigen;
use crate::nn::{Activation, AdamState, Mlp, MlpTrace, PlateauScheduler, LEAKY_RELU_SLOPE};
use crate::rng::seeded_rng;

/// Which reconstruction error becomes the anomaly score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Mae,
    Mse,
}

/// Dense autoencoder architecture. The decoder output layer is linear;
/// everything else uses the configured activation.
#[derive(Debug, Clone)]
pub struct AeConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub bottleneck: usize,
    pub hidden_activation: Activation,
}

impl AeConfig {
    pub fn new(input_dim: usize, bottleneck: usize) -> Self {
        Self {
            input_dim,
            hidden_width: 256,
            bottleneck,
            hidden_activation: Activation::LeakyReLU(LEAKY_RELU_SLOPE),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 || self.bottleneck >= self.input_dim {
            return Err(Error::usage(format!(
                "autoencoder must be undercomplete: bottleneck {} vs input {}",
                self.bottleneck, self.input_dim
            )));
        }
        if self.hidden_width == 0 {
            return Err(Error::usage("autoencoder hidden width must be positive"));
        }
        Ok(())
    }
}

/// Encoder/decoder pair with a bottleneck smaller than the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: Mlp,
    decoder: Mlp,
}

impl Autoencoder {
    pub fn new(config: &AeConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        config.validate()?;
        let act = config.hidden_activation;
        let encoder = Mlp::new(
            &[config.input_dim, config.hidden_width, config.bottleneck],
            &[act, act],
            rng,
        )?;
        let decoder = Mlp::new(
            &[config.bottleneck, config.hidden_width, config.input_dim],
            &[act, Activation::Linear],
            rng,
        )?;
        Ok(Self { encoder, decoder })
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.out_dim() != decoder.in_dim() {
            return Err(Error::shape(
                "autoencoder bottleneck",
                encoder.out_dim(),
                decoder.in_dim(),
            ));
        }
        if encoder.out_dim() >= encoder.in_dim() {
            return Err(Error::usage(format!(
                "autoencoder must be undercomplete: bottleneck {} vs input {}",
                encoder.out_dim(),
                encoder.in_dim()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(x)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(&self.encode(x)?)
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.encoder.params_into(&mut out);
        self.decoder.params_into(&mut out);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let split = self.encoder.param_count();
        self.encoder.set_params(&flat[..split]);
        self.decoder.set_params(&flat[split..]);
    }
}

/// Mean absolute or mean squared element-wise reconstruction error.
pub fn reconstruction_score(ae: &Autoencoder, sample: &[f64], kind: ScoreKind) -> Result<f64> {
    let recon = ae.reconstruct(sample)?;
    let d = sample.len() as f64;
    let score = match kind {
        ScoreKind::Mae => {
            sample
                .iter()
                .zip(&recon)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / d
        }
        ScoreKind::Mse => {
            sample
                .iter()
                .zip(&recon)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / d
        }
    };
    Ok(score)
}

/// Trains an autoencoder on normal samples by minimizing mean squared
/// reconstruction error with Adam and the plateau schedule. Checkpoints on
/// validation MSE. Deterministic per config seed.
pub fn train_autoencoder(
    normal_train: &[Vec<f64>],
    normal_validation: &[Vec<f64>],
    arch: &AeConfig,
    config: &TrainConfig,
) -> Result<(Autoencoder, TrainHistory)> {
    config.validate()?;
    arch.validate()?;
    if normal_train.is_empty() {
        return Err(Error::usage("training requires at least one normal sample"));
    }
    if let Some(bad) = normal_train
        .iter()
        .chain(normal_validation)
        .find(|x| x.len() != arch.input_dim)
    {
        return Err(Error::shape("autoencoder sample", arch.input_dim, bad.len()));
    }

    let mut rng = seeded_rng(config.seed);
    let mut model = Autoencoder::new(arch, &mut rng)?;
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

    let mut enc_trace = MlpTrace::default();
    let mut dec_trace = MlpTrace::default();

    for epoch in 0..config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut rng);
        let mut mse_sum = 0.0;

        for chunk in order.chunks(config.batch_size) {
            grads.fill(0.0);
            let weight = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let x = &normal_train[i];
                model.encoder.forward_traced(x, &mut enc_trace);
                model.decoder.forward_traced(enc_trace.output(), &mut dec_trace);
                let recon = dec_trace.output();
                let d = x.len() as f64;
                let mse: f64 =
                    x.iter().zip(recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d;
                batch_loss += mse;

                let d_out: Vec<f64> = recon
                    .iter()
                    .zip(x)
                    .map(|(r, a)| 2.0 * (r - a) / d * weight)
                    .collect();
                let split = model.encoder.param_count();
                let (enc_grads, dec_grads) = grads.split_at_mut(split);
                let d_code = model.decoder.backward(&dec_trace, &d_out, dec_grads);
                model.encoder.backward(&enc_trace, &d_code, enc_grads);
            }
            let batch_mse = batch_loss / chunk.len() as f64;
            if !batch_mse.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite reconstruction loss".into(),
                });
            }
            mse_sum += batch_loss;
            adam.step(&mut params, &grads, lr).map_err(|e| Error::Diverged {
                epoch,
                reason: e.to_string(),
            })?;
            model.set_params(&params);
        }

        let train_mse = mse_sum / normal_train.len() as f64;
        let val_mse = mean_mse(&model, normal_validation)?;
        history.epochs.push(EpochRecord {
            epoch,
            total_loss: train_mse,
            nll_part: train_mse,
            oe_part: 0.0,
            val_nll: val_mse,
            lr,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_params.copy_from_slice(&params);
            best_epoch = epoch;
        }
        scheduler.observe(val_mse);
    }

    history.best_epoch = best_epoch;
    model.set_params(&best_params);
    Ok((model, history))
}

fn mean_mse(model: &Autoencoder, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for x in samples {
        sum += reconstruction_score(model, x, ScoreKind::Mse)?;
    }
    Ok(sum / samples.len() as f64)
}

/// PCA projection: mean-centering followed by the top eigenvectors of the
/// sample covariance (orthonormal rows).
#[derive(Debug, Clone, PartialEq)]
pub struct PcaReducer {
    mean: Vec<f64>,
    /// Row-major (output_dim x input_dim).
    components: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
}

impl PcaReducer {
    pub fn from_parts(mean: Vec<f64>, components: Vec<f64>, output_dim: usize) -> Result<Self> {
        let input_dim = mean.len();
        if components.len() != output_dim * input_dim {
            return Err(Error::shape(
                "PCA components",
                output_dim * input_dim,
                components.len(),
            ));
        }
        let reducer = Self {
            mean,
            components,
            input_dim,
            output_dim,
        };
        reducer.check_orthonormal()?;
        Ok(reducer)
    }

    /// Verifies `components * components^T = I` within 1e-8.
    pub fn check_orthonormal(&self) -> Result<()> {
        let (k, d) = (self.output_dim, self.input_dim);
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = (0..d)
                    .map(|c| self.components[i * d + c] * self.components[j * d + c])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-8 {
                    return Err(Error::Format {
                        path: "PCA reducer".into(),
                        message: format!("components are not orthonormal (rows {i}, {j})"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    /// Projects after mean-centering.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::shape("PCA input", self.input_dim, x.len()));
        }
        let d = self.input_dim;
        Ok((0..self.output_dim)
            .map(|i| {
                (0..d)
                    .map(|c| self.components[i * d + c] * (x[c] - self.mean[c]))
                    .sum()
            })
            .collect())
    }

    /// Maps a code back into input space.
    pub fn reconstruct(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.output_dim {
            return Err(Error::shape("PCA code", self.output_dim, code.len()));
        }
        let d = self.input_dim;
        let mut out = self.mean.clone();
        for (i, c) in code.iter().enumerate() {
            for j in 0..d {
                out[j] += c * self.components[i * d + j];
            }
        }
        Ok(out)
    }
}

/// Fits PCA on the samples. When the covariance rank falls short of the
/// requested bottleneck the trailing components are an arbitrary
/// orthonormal completion (the eigenvectors of near-zero eigenvalues);
/// a warning is logged.
pub fn pca_fit(samples: &[Vec<f64>], bottleneck: usize) -> Result<PcaReducer> {
    if samples.is_empty() {
        return Err(Error::usage("PCA needs at least one sample"));
    }
    let d = samples[0].len();
    if bottleneck == 0 || bottleneck > d {
        return Err(Error::usage(format!(
            "PCA bottleneck must be in 1..={d}, got {bottleneck}"
        )));
    }
    if samples.len() < bottleneck + 1 {
        return Err(Error::usage(format!(
            "PCA needs at least bottleneck + 1 = {} samples, got {}",
            bottleneck + 1,
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|x| x.len() != d) {
        return Err(Error::shape("PCA sample", d, bad.len()));
    }

    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for x in samples {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let mut cov = vec![0.0; d * d];
    for x in samples {
        for i in 0..d {
            let di = x[i] - mean[i];
            for j in 0..=i {
                cov[i * d + j] += di * (x[j] - mean[j]);
            }
        }
    }
    let denom = (samples.len() - 1).max(1) as f64;
    for i in 0..d {
        for j in 0..=i {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (eigenvalues, eigenvectors) = symmetric_eigen(&cov, d);
    let scale = eigenvalues.first().copied().unwrap_or(0.0).max(1e-300);
    let deficient = eigenvalues
        .iter()
        .take(bottleneck)
        .filter(|&&v| v < 1e-12 * scale)
        .count();
    if deficient > 0 {
        log::warn!(
            "PCA: covariance rank falls {deficient} short of bottleneck {bottleneck}; \
             padding with an arbitrary orthonormal complement"
        );
    }
    let components = eigenvectors[..bottleneck * d].to_vec();
    PcaReducer::from_parts(mean, components, bottleneck)
}

/// A trained reducer of either kind, behind one encoding surface.
#[derive(Debug, Clone)]
pub enum Reducer {
    Autoencoder(Autoencoder),
    Pca(PcaReducer),
}

impl Reducer {
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Reducer::Autoencoder(ae) => ae.encode(x),
            Reducer::Pca(pca) => pca.transform(x),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Reducer::Autoencoder(ae) => ae.input_dim(),
            Reducer::Pca(pca) => pca.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Reducer::Autoencoder(ae) => ae.bottleneck(),
            Reducer::Pca(pca) => pca.output_dim(),
        }
    }
}
