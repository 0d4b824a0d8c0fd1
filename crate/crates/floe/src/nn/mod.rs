//! Dense-network numerics: layers, exact reverse-mode gradients, Adam,
//! plateau learning-rate scheduling, and a finite-difference gradient
//! checker. Everything trains in double precision.

mod activation;
mod adam;
mod dense;
mod gradcheck;
mod scheduler;

pub use activation::{Activation, LEAKY_RELU_SLOPE};
pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use dense::{DenseLayer, Mlp, MlpTrace};
pub use gradcheck::gradcheck;
pub use scheduler::{PlateauScheduler, MIN_RELATIVE_IMPROVEMENT};
