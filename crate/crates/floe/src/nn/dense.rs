//! Dense layers and multi-layer perceptrons with exact reverse-mode
//! gradients.
//!
//! Parameters of a network flatten into a single `Vec<f64>` in a canonical
//! order (layers in sequence; per layer the row-major weight matrix, then the
//! bias). The optimizer, the gradient checker, and the model container all
//! rely on that order.
//!
//! Shape mismatches on the low-level per-layer entry points are programmer
//! error and panic via `assert!`; the public [`Mlp`] API validates and
//! returns [`crate::Error::Shape`].

use rand::Rng;

use super::activation::Activation;
use crate::error::{Error, Result};

/// A dense layer `y = activation(Wx + b)`.
///
/// Weights are row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Layer with all parameters zero.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Xavier/Glorot-initialized layer: weights uniform in
    /// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`, biases zero.
    pub fn xavier<R: Rng>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * limit)
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::shape("dense layer weights", in_dim * out_dim, weights.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::shape("dense layer bias", out_dim, bias.len()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("dense layer parameters"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Pre-activations `Wx + b` only, without the activation.
    pub fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(input.len(), self.in_dim, "dense affine input length");
        assert_eq!(out.len(), self.out_dim, "dense affine output length");
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut sum = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                sum = w.mul_add(*x, sum);
            }
            *slot = sum;
        }
    }

    /// Forward pass for one sample. `out.len()` must equal `out_dim`.
    pub fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(input.len(), self.in_dim, "dense forward input length");
        assert_eq!(out.len(), self.out_dim, "dense forward output length");
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut sum = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                sum = w.mul_add(*x, sum);
            }
            *slot = self.activation.apply(sum);
        }
    }

    /// Backward pass for one sample.
    ///
    /// `output` is the post-activation produced by `forward_into` for the
    /// same `input`. Parameter gradients are *accumulated* (`+=`) into
    /// `d_weights`/`d_bias` so mini-batches can sum over samples; `d_input`
    /// is overwritten.
    pub fn backward_into(
        &self,
        input: &[f64],
        output: &[f64],
        d_output: &[f64],
        d_input: &mut [f64],
        d_weights: &mut [f64],
        d_bias: &mut [f64],
    ) {
        assert_eq!(input.len(), self.in_dim, "dense backward input length");
        assert_eq!(output.len(), self.out_dim, "dense backward output length");
        assert_eq!(d_output.len(), self.out_dim, "dense backward d_output length");
        assert_eq!(d_input.len(), self.in_dim, "dense backward d_input length");
        assert_eq!(d_weights.len(), self.weights.len(), "dense backward d_weights length");
        assert_eq!(d_bias.len(), self.out_dim, "dense backward d_bias length");

        d_input.fill(0.0);
        for o in 0..self.out_dim {
            let d_pre = d_output[o] * self.activation.grad_from_output(output[o]);
            d_bias[o] += d_pre;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                d_weights[row + i] += d_pre * input[i];
                d_input[i] = self.weights[row + i].mul_add(d_pre, d_input[i]);
            }
        }
    }

    fn params_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    fn set_params(&mut self, flat: &[f64]) {
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Per-sample forward record: the input and every layer's post-activation.
/// Buffers are reused across calls.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace of an empty forward")
    }
}

impl Mlp {
    /// Builds a randomly initialized network. `sizes` lists the input
    /// dimension followed by each layer's output dimension, so
    /// `activations.len() == sizes.len() - 1`.
    pub fn new<R: Rng>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::usage("an MLP needs at least one layer"));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::shape("MLP activations", sizes.len() - 1, activations.len()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::usage("MLP layer sizes must be positive"));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(pair, act)| DenseLayer::xavier(pair[0], pair[1], *act, rng))
            .collect();
        Ok(Self { layers })
    }

    /// Wraps pre-built layers, checking that sizes chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::usage("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "MLP layer chaining",
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Flattens all parameters in canonical order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.params_into(&mut out);
        out
    }

    pub fn params_into(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.params_into(out);
        }
    }

    /// Writes back a flat parameter vector produced by [`Mlp::params`].
    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.set_params(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Deterministic forward pass for one sample.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::shape("MLP input", self.in_dim(), input.len()));
        }
        let mut trace = MlpTrace::default();
        self.forward_traced(input, &mut trace);
        Ok(trace.outputs.pop().unwrap())
    }

    /// Forward pass recording every layer's output for a later backward
    /// pass. Panics on shape mismatch.
    pub fn forward_traced(&self, input: &[f64], trace: &mut MlpTrace) {
        assert_eq!(input.len(), self.in_dim(), "MLP forward input length");
        trace.input.clear();
        trace.input.extend_from_slice(input);
        trace.outputs.resize_with(self.layers.len(), Vec::new);
        for idx in 0..self.layers.len() {
            let layer = &self.layers[idx];
            let (done, rest) = trace.outputs.split_at_mut(idx);
            let out = &mut rest[0];
            out.resize(layer.out_dim(), 0.0);
            let input_slice: &[f64] = if idx == 0 { &trace.input } else { &done[idx - 1] };
            layer.forward_into(input_slice, out);
        }
    }

    /// Smallest |pre-activation| over all rectifier units along this
    /// forward pass; infinite if no layer uses a rectifier.
    ///
    /// Rectifiers make the network piecewise-smooth. Finite-difference
    /// oracles are only trustworthy at inputs whose margin clearly exceeds
    /// the perturbations they propagate, so tests use this to keep probe
    /// points away from the kink surfaces.
    pub fn rectifier_margin(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.in_dim() {
            return Err(Error::shape("MLP input", self.in_dim(), input.len()));
        }
        let mut margin = f64::INFINITY;
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut pre = vec![0.0; layer.out_dim()];
            layer.affine_into(&current, &mut pre);
            if matches!(layer.activation(), Activation::ReLU | Activation::LeakyReLU(_)) {
                for p in &pre {
                    margin = margin.min(p.abs());
                }
            }
            for p in &mut pre {
                *p = layer.activation().apply(*p);
            }
            current = pre;
        }
        Ok(margin)
    }

    /// Appends one sign bit per rectifier unit (`pre-activation > 0`) along
    /// this forward pass.
    ///
    /// Two inputs with equal signatures are evaluated by the same smooth
    /// branch of the piecewise map, which is what finite-difference oracles
    /// need across their whole stencil.
    pub fn rectifier_signature(&self, input: &[f64], out: &mut Vec<bool>) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::shape("MLP input", self.in_dim(), input.len()));
        }
        let mut current = input.to_vec();
        for layer in &self.layers {
            let mut pre = vec![0.0; layer.out_dim()];
            layer.affine_into(&current, &mut pre);
            if matches!(layer.activation(), Activation::ReLU | Activation::LeakyReLU(_)) {
                out.extend(pre.iter().map(|p| *p > 0.0));
            }
            for p in &mut pre {
                *p = layer.activation().apply(*p);
            }
            current = pre;
        }
        Ok(())
    }

    /// Reverse-mode pass. Accumulates parameter gradients into `grads`
    /// (flat, canonical order, length [`Mlp::param_count`]) and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace, d_output: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(d_output.len(), self.out_dim(), "MLP backward d_output length");
        assert_eq!(grads.len(), self.param_count(), "MLP backward grads length");

        // Offsets of each layer's parameter block in the flat vector.
        let mut offsets = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets.push(acc);

        let mut d_out = d_output.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let input: &[f64] = if idx == 0 {
                &trace.input
            } else {
                &trace.outputs[idx - 1]
            };
            let output = &trace.outputs[idx];
            let mut d_input = vec![0.0; layer.in_dim()];
            let block = &mut grads[offsets[idx]..offsets[idx + 1]];
            let (d_w, d_b) = block.split_at_mut(layer.in_dim() * layer.out_dim());
            layer.backward_into(input, output, &d_out, &mut d_input, d_w, d_b);
            d_out = d_input;
        }
        d_out
    }
}
