//! Real-NVP normalizing flow: affine coupling layers with an exact
//! log-determinant, forward and inverse maps, the negative log-likelihood
//! under a standard-normal target, and seeded sampling through the inverse.
//!
//! A coupling layer splits the coordinates by a boolean mask. Masked
//! coordinates pass through unchanged; each unmasked coordinate `x_u` is
//! mapped to `x_u * exp(s) + t`, where the log-scales `s` and offsets `t`
//! are dense networks of the masked sub-vector. The Jacobian is triangular,
//! so `log |det| = sum(s)` exactly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Mlp, MlpTrace, LEAKY_RELU_SLOPE};
use crate::rng::{seeded_rng, standard_normal_vec};

/// ln(2*pi), the per-dimension constant of the standard-normal NLL.
pub const LN_2PI: f64 = 1.8378770664093453;

/// How coupling masks are assigned across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskScheme {
    /// Layers alternate between passing odd-indexed and even-indexed
    /// coordinates through, so every coordinate is transformed at least
    /// once every two layers. This is the default.
    Alternating,
    /// Every layer passes the odd-indexed coordinates through. Kept as a
    /// diagnostic variant for comparison; with this scheme odd coordinates
    /// are never transformed, so the coverage check is skipped.
    FixedOdds,
}

/// Architecture of a [`FlowModel`].
#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub dimension: usize,
    pub coupling_layers: usize,
    pub hidden_width: usize,
    /// Log-scales are squashed to `clamp * tanh(.)`, bounding the
    /// per-coordinate stretch to `exp(±clamp)`. Unbounded scales diverge
    /// readily once the margin loss starts pushing anomalies outward.
    pub scale_clamp: f64,
    pub mask_scheme: MaskScheme,
    /// When true (the default), building a model whose layers leave some
    /// coordinate untransformed is an error.
    pub enforce_coverage: bool,
}

impl FlowConfig {
    /// Four coupling layers of hidden width 128 with alternating masks.
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            coupling_layers: 4,
            hidden_width: 128,
            scale_clamp: 4.0,
            mask_scheme: MaskScheme::Alternating,
            enforce_coverage: true,
        }
    }
}

/// One affine coupling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    /// `true` marks a pass-through coordinate.
    mask: Vec<bool>,
    /// Indices of the pass-through coordinates, ascending.
    masked_idx: Vec<usize>,
    /// Indices of the transformed coordinates, ascending.
    unmasked_idx: Vec<usize>,
    /// Maps the masked sub-vector to one log-scale per unmasked coordinate;
    /// final activation is tanh, multiplied by `scale_clamp`.
    scale_net: Mlp,
    /// Maps the masked sub-vector to one offset per unmasked coordinate;
    /// final activation is linear.
    translate_net: Mlp,
    scale_clamp: f64,
}

/// Result of pushing a sample through the flow.
#[derive(Debug, Clone)]
pub struct FlowOutput {
    /// Image of the sample in latent space.
    pub z: Vec<f64>,
    /// `log |det(dz/dx)|` of the full map.
    pub log_det: f64,
}

/// Forward record of one coupling layer, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct CouplingTrace {
    masked: Vec<f64>,
    unmasked: Vec<f64>,
    scale_trace: MlpTrace,
    translate_trace: MlpTrace,
    /// Clamped log-scales.
    log_scale: Vec<f64>,
    exp_scale: Vec<f64>,
    output: Vec<f64>,
}

/// Forward record of a whole flow (one trace per layer).
#[derive(Debug, Clone, Default)]
pub struct FlowTrace {
    layers: Vec<CouplingTrace>,
    /// Latent image, i.e. the last layer's output.
    z: Vec<f64>,
    log_det: f64,
}

impl FlowTrace {
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

impl CouplingLayer {
    /// Builds a coupling layer with a single hidden layer in each net.
    ///
    /// Hidden layers are Xavier-initialized; the output layers start at
    /// zero so the layer begins as the identity map. Flows that start far
    /// from the identity stretch coordinates by `exp(clamp * tanh(...))`
    /// per layer, which compounds into astronomically bad initial
    /// likelihoods and stalls training.
    pub fn new<R: Rng>(
        mask: Vec<bool>,
        hidden_width: usize,
        scale_clamp: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let masked = mask.iter().filter(|&&m| m).count();
        let unmasked = mask.len() - masked;
        if masked == 0 || unmasked == 0 {
            return Err(Error::usage(
                "coupling mask must pass through at least one coordinate and transform at least one",
            ));
        }
        if !(scale_clamp > 0.0) {
            return Err(Error::usage("scale clamp must be positive"));
        }
        let hidden = Activation::LeakyReLU(LEAKY_RELU_SLOPE);
        let scale_net = Mlp::from_layers(vec![
            DenseLayer::xavier(masked, hidden_width, hidden, rng),
            DenseLayer::zeros(hidden_width, unmasked, Activation::Tanh),
        ])?;
        let translate_net = Mlp::from_layers(vec![
            DenseLayer::xavier(masked, hidden_width, hidden, rng),
            DenseLayer::zeros(hidden_width, unmasked, Activation::Linear),
        ])?;
        Self::from_parts(mask, scale_net, translate_net, scale_clamp)
    }

    /// Assembles a layer from pre-built nets, validating the shapes.
    pub fn from_parts(
        mask: Vec<bool>,
        scale_net: Mlp,
        translate_net: Mlp,
        scale_clamp: f64,
    ) -> Result<Self> {
        let masked_idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        let unmasked_idx: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (!m).then_some(i))
            .collect();
        if masked_idx.is_empty() || unmasked_idx.is_empty() {
            return Err(Error::usage(
                "coupling mask must pass through at least one coordinate and transform at least one",
            ));
        }
        for (name, net) in [("scale", &scale_net), ("translate", &translate_net)] {
            if net.in_dim() != masked_idx.len() {
                return Err(Error::shape(
                    format!("{name} net input"),
                    masked_idx.len(),
                    net.in_dim(),
                ));
            }
            if net.out_dim() != unmasked_idx.len() {
                return Err(Error::shape(
                    format!("{name} net output"),
                    unmasked_idx.len(),
                    net.out_dim(),
                ));
            }
        }
        if !(scale_clamp > 0.0) || !scale_clamp.is_finite() {
            return Err(Error::usage("scale clamp must be positive and finite"));
        }
        Ok(Self {
            mask,
            masked_idx,
            unmasked_idx,
            scale_net,
            translate_net,
            scale_clamp,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn scale_net(&self) -> &Mlp {
        &self.scale_net
    }

    pub fn translate_net(&self) -> &Mlp {
        &self.translate_net
    }

    pub fn scale_clamp(&self) -> f64 {
        self.scale_clamp
    }

    fn gather(&self, x: &[f64], indices: &[usize], out: &mut Vec<f64>) {
        out.clear();
        out.extend(indices.iter().map(|&i| x[i]));
    }

    /// Forward map: returns the transformed vector and `log |det|` of this
    /// layer's Jacobian.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut trace = CouplingTrace::default();
        let log_det = self.forward_traced(x, &mut trace)?;
        Ok((trace.output, log_det))
    }

    /// Forward map recording everything needed for [`CouplingLayer::backward`].
    pub fn forward_traced(&self, x: &[f64], trace: &mut CouplingTrace) -> Result<f64> {
        if x.len() != self.mask.len() {
            return Err(Error::shape("coupling layer input", self.mask.len(), x.len()));
        }
        self.gather(x, &self.masked_idx, &mut trace.masked);
        self.gather(x, &self.unmasked_idx, &mut trace.unmasked);
        self.scale_net.forward_traced(&trace.masked, &mut trace.scale_trace);
        self.translate_net
            .forward_traced(&trace.masked, &mut trace.translate_trace);

        trace.log_scale.clear();
        trace
            .log_scale
            .extend(trace.scale_trace.output().iter().map(|t| self.scale_clamp * t));
        trace.exp_scale.clear();
        trace.exp_scale.extend(trace.log_scale.iter().map(|s| s.exp()));

        trace.output.clear();
        trace.output.extend_from_slice(x);
        let offsets = trace.translate_trace.output();
        let mut log_det = 0.0;
        for (k, &idx) in self.unmasked_idx.iter().enumerate() {
            trace.output[idx] = x[idx] * trace.exp_scale[k] + offsets[k];
            log_det += trace.log_scale[k];
        }
        Ok(log_det)
    }

    /// Smallest rectifier pre-activation magnitude of either net at this
    /// input. See [`Mlp::rectifier_margin`].
    pub fn rectifier_margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mask.len() {
            return Err(Error::shape("coupling layer input", self.mask.len(), x.len()));
        }
        let mut masked = Vec::new();
        self.gather(x, &self.masked_idx, &mut masked);
        let a = self.scale_net.rectifier_margin(&masked)?;
        let b = self.translate_net.rectifier_margin(&masked)?;
        Ok(a.min(b))
    }

    /// Appends the rectifier sign pattern of both nets at this input.
    pub fn rectifier_signature(&self, x: &[f64], out: &mut Vec<bool>) -> Result<()> {
        if x.len() != self.mask.len() {
            return Err(Error::shape("coupling layer input", self.mask.len(), x.len()));
        }
        let mut masked = Vec::new();
        self.gather(x, &self.masked_idx, &mut masked);
        self.scale_net.rectifier_signature(&masked, out)?;
        self.translate_net.rectifier_signature(&masked, out)
    }

    /// Exact algebraic inverse: `x_u = (y_u - t(y_m)) * exp(-s(y_m))`.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.mask.len() {
            return Err(Error::shape("coupling layer input", self.mask.len(), y.len()));
        }
        let mut masked = Vec::new();
        self.gather(y, &self.masked_idx, &mut masked);
        let log_scale: Vec<f64> = self
            .scale_net
            .forward(&masked)?
            .iter()
            .map(|t| self.scale_clamp * t)
            .collect();
        let offsets = self.translate_net.forward(&masked)?;
        let mut x = y.to_vec();
        for (k, &idx) in self.unmasked_idx.iter().enumerate() {
            x[idx] = (y[idx] - offsets[k]) * (-log_scale[k]).exp();
        }
        Ok(x)
    }

    pub fn param_count(&self) -> usize {
        self.scale_net.param_count() + self.translate_net.param_count()
    }

    pub fn params_into(&self, out: &mut Vec<f64>) {
        self.scale_net.params_into(out);
        self.translate_net.params_into(out);
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let split = self.scale_net.param_count();
        self.scale_net.set_params(&flat[..split]);
        self.translate_net.set_params(&flat[split..]);
    }

    /// Reverse-mode pass through the layer.
    ///
    /// `d_output` is the loss gradient with respect to this layer's output
    /// and `d_log_det` with respect to its log-determinant contribution.
    /// Parameter gradients accumulate into `grads` (scale net first, then
    /// translate net); the return value is the gradient with respect to the
    /// layer input.
    pub fn backward(
        &self,
        trace: &CouplingTrace,
        d_output: &[f64],
        d_log_det: f64,
        grads: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(d_output.len(), self.mask.len(), "coupling backward d_output");
        assert_eq!(grads.len(), self.param_count(), "coupling backward grads");

        let u = self.unmasked_idx.len();
        let mut d_scale_out = vec![0.0; u]; // w.r.t. the tanh output of scale_net
        let mut d_offsets = vec![0.0; u];
        let mut d_x = vec![0.0; self.mask.len()];

        for (k, &idx) in self.unmasked_idx.iter().enumerate() {
            let d_y = d_output[idx];
            // y_u = x_u * exp(s) + t, log_det += s, s = clamp * tanh_out
            d_x[idx] = d_y * trace.exp_scale[k];
            let d_s = d_y * trace.unmasked[k] * trace.exp_scale[k] + d_log_det;
            d_scale_out[k] = self.scale_clamp * d_s;
            d_offsets[k] = d_y;
        }

        let split = self.scale_net.param_count();
        let (scale_grads, translate_grads) = grads.split_at_mut(split);
        let d_masked_scale = self
            .scale_net
            .backward(&trace.scale_trace, &d_scale_out, scale_grads);
        let d_masked_translate =
            self.translate_net
                .backward(&trace.translate_trace, &d_offsets, translate_grads);

        for (k, &idx) in self.masked_idx.iter().enumerate() {
            d_x[idx] = d_output[idx] + d_masked_scale[k] + d_masked_translate[k];
        }
        d_x
    }
}

/// A stack of coupling layers forming the invertible map.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    dimension: usize,
    layers: Vec<CouplingLayer>,
}

impl FlowModel {
    /// Builds and randomly initializes a model from its architecture.
    pub fn new<R: Rng>(config: &FlowConfig, rng: &mut R) -> Result<Self> {
        if config.dimension < 2 {
            return Err(Error::usage(
                "a coupling flow needs dimension >= 2 so each layer can pass something through",
            ));
        }
        if config.coupling_layers == 0 {
            return Err(Error::usage("flow needs at least one coupling layer"));
        }
        let mut layers = Vec::with_capacity(config.coupling_layers);
        for layer_idx in 0..config.coupling_layers {
            let mask = mask_for_layer(config.dimension, layer_idx, config.mask_scheme);
            layers.push(CouplingLayer::new(
                mask,
                config.hidden_width,
                config.scale_clamp,
                rng,
            )?);
        }
        let model = Self::from_layers(config.dimension, layers)?;
        if config.enforce_coverage {
            model.check_coverage()?;
        }
        Ok(model)
    }

    /// Wraps pre-built layers. Dimensions are validated; coordinate
    /// coverage is not (see [`FlowModel::check_coverage`]).
    pub fn from_layers(dimension: usize, layers: Vec<CouplingLayer>) -> Result<Self> {
        for (i, layer) in layers.iter().enumerate() {
            if layer.dimension() != dimension {
                return Err(Error::shape(
                    format!("coupling layer {i} dimension"),
                    dimension,
                    layer.dimension(),
                ));
            }
        }
        Ok(Self { dimension, layers })
    }

    /// Errors unless every coordinate is transformed by at least one layer.
    pub fn check_coverage(&self) -> Result<()> {
        let mut covered = vec![false; self.dimension];
        for layer in &self.layers {
            for &idx in &layer.unmasked_idx {
                covered[idx] = true;
            }
        }
        if let Some(idx) = covered.iter().position(|c| !c) {
            return Err(Error::usage(format!(
                "coordinate {idx} is never transformed by any coupling layer"
            )));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    /// Composes the coupling layers in order and sums their log-dets.
    pub fn forward(&self, x: &[f64]) -> Result<FlowOutput> {
        let mut trace = FlowTrace::default();
        self.forward_traced(x, &mut trace)?;
        Ok(FlowOutput {
            z: trace.z,
            log_det: trace.log_det,
        })
    }

    /// Traced forward pass; the trace feeds [`FlowModel::nll_backward`].
    pub fn forward_traced(&self, x: &[f64], trace: &mut FlowTrace) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::shape("flow input", self.dimension, x.len()));
        }
        trace.layers.resize_with(self.layers.len(), CouplingTrace::default);
        let mut log_det = 0.0;
        for i in 0..self.layers.len() {
            let (done, rest) = trace.layers.split_at_mut(i);
            let layer_trace = &mut rest[0];
            let input: &[f64] = if i == 0 { x } else { &done[i - 1].output };
            let layer_det = self.layers[i].forward_traced(input, layer_trace)?;
            if !layer_det.is_finite() || layer_trace.output.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("coupling layer {i}")));
            }
            log_det += layer_det;
        }
        trace.z.clear();
        match trace.layers.last() {
            Some(last) => trace.z.extend_from_slice(&last.output),
            None => trace.z.extend_from_slice(x),
        }
        trace.log_det = log_det;
        Ok(())
    }

    /// Smallest rectifier pre-activation magnitude across all layers when
    /// this sample flows through the model. Probe points for
    /// finite-difference oracles should keep this margin well above the
    /// perturbation size, since the map is only piecewise-smooth.
    pub fn rectifier_margin(&self, x: &[f64]) -> Result<f64> {
        let mut margin = f64::INFINITY;
        let mut current = x.to_vec();
        for layer in &self.layers {
            margin = margin.min(layer.rectifier_margin(&current)?);
            let (next, _) = layer.forward(&current)?;
            current = next;
        }
        Ok(margin)
    }

    /// Sign pattern (`pre-activation > 0`) of every rectifier unit reached
    /// when mapping `x` forward. Equal signatures at nearby points mean the
    /// same smooth branch of the map evaluates both, the validity condition
    /// for central differences across a stencil.
    pub fn rectifier_signature(&self, x: &[f64]) -> Result<Vec<bool>> {
        let mut signature = Vec::new();
        let mut current = x.to_vec();
        for layer in &self.layers {
            layer.rectifier_signature(&current, &mut signature)?;
            let (next, _) = layer.forward(&current)?;
            current = next;
        }
        Ok(signature)
    }

    /// Exact inverse of [`FlowModel::forward`].
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dimension {
            return Err(Error::shape("flow input", self.dimension, z.len()));
        }
        let mut x = z.to_vec();
        for layer in self.layers.iter().rev() {
            x = layer.inverse(&x)?;
        }
        Ok(x)
    }

    /// Negative log-likelihood of `x` under the flow with a standard-normal
    /// target: `d/2 ln(2 pi) + |z|^2 / 2 - log_det`.
    pub fn nll(&self, x: &[f64]) -> Result<f64> {
        let out = self.forward(x)?;
        Ok(nll_from_output(self.dimension, &out.z, out.log_det))
    }

    /// The anomaly score of a sample. Identical to [`FlowModel::nll`];
    /// exposed under this name so every detector shares a scoring surface.
    pub fn anomaly_score(&self, x: &[f64]) -> Result<f64> {
        self.nll(x)
    }

    /// Draws `count` samples by mapping standard-normal latent draws through
    /// the inverse. Deterministic for a fixed seed.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = seeded_rng(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let z = standard_normal_vec(&mut rng, self.dimension);
            out.push(self.inverse(&z)?);
        }
        Ok(out)
    }

    /// Accumulates `weight * d(nll)/d(theta)` into `grads` for the sample
    /// recorded in `trace`.
    ///
    /// The NLL gradient seeds are `d/dz = z` and `d/d(log_det) = -1`,
    /// both scaled by `weight`, then pulled back through the layers in
    /// reverse order.
    pub fn nll_backward(&self, trace: &FlowTrace, weight: f64, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.param_count(), "flow backward grads length");
        let mut offsets = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets.push(acc);

        let mut d_y: Vec<f64> = trace.z.iter().map(|z| weight * z).collect();
        let d_log_det = -weight;
        for idx in (0..self.layers.len()).rev() {
            let block = &mut grads[offsets[idx]..offsets[idx + 1]];
            d_y = self.layers[idx].backward(&trace.layers[idx], &d_y, d_log_det, block);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(CouplingLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            layer.params_into(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flow flat parameter length");
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.set_params(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

/// NLL of a standard-normal target given the latent image and log-det.
pub fn nll_from_output(dimension: usize, z: &[f64], log_det: f64) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    0.5 * dimension as f64 * LN_2PI + 0.5 * sq - log_det
}

/// Mask for one layer under a scheme. Odd-indexed coordinates pass through
/// on even layers; the alternating scheme flips that on odd layers.
pub fn mask_for_layer(dimension: usize, layer_idx: usize, scheme: MaskScheme) -> Vec<bool> {
    let flip = match scheme {
        MaskScheme::Alternating => layer_idx % 2 == 1,
        MaskScheme::FixedOdds => false,
    };
    (0..dimension).map(|j| (j % 2 == 1) != flip).collect()
}
