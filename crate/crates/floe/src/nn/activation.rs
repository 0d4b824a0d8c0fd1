/// Element-wise activation functions used by the dense layers.
///
/// The derivative is recovered from the activation *output* rather than the
/// pre-activation, which is exact for every variant here and lets traces
/// store post-activations only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    ReLU,
    /// Leaky rectifier with the given negative-side slope.
    LeakyReLU(f64),
    Sigmoid,
    Tanh,
}

/// Default negative-side slope for [`Activation::LeakyReLU`].
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::ReLU => x.max(0.0),
            Activation::LeakyReLU(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => {
                // Split on the sign so neither branch overflows.
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the output `y = apply(x)`.
    ///
    /// At the rectifier kinks (y = 0) the inactive branch is used.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::ReLU => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyReLU(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}
