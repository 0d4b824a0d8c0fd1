use crate::error::{Error, Result};

/// Adam optimizer state over a flat parameter vector.
///
/// The moment accumulators mirror the parameter layout element-wise, so the
/// update is invariant to how parameters are ordered.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

impl AdamState {
    /// State for `param_count` parameters with the usual constants
    /// (beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8).
    pub fn new(param_count: usize) -> Self {
        Self::with_constants(param_count, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON)
    }

    pub fn with_constants(param_count: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place.
    ///
    /// Fails with a divergence error if any gradient entry is non-finite;
    /// the parameters are left untouched in that case.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        assert_eq!(params.len(), self.first_moment.len(), "Adam parameter count");
        assert_eq!(grads.len(), params.len(), "Adam gradient count");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::non_finite("gradient passed to Adam"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut state = AdamState::new(3);
        let mut params = vec![1.0, -2.0, 0.5];
        let reference = params.clone();
        for _ in 0..10 {
            state.step(&mut params, &[0.0, 0.0, 0.0], 0.1).unwrap();
        }
        assert_eq!(params, reference);
    }

    /// First step with g = 1: both bias-corrected moments equal 1, so the
    /// parameter moves by lr/(1 + epsilon), i.e. almost exactly lr.
    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(1);
        let mut params = vec![0.0];
        state.step(&mut params, &[1.0], 0.001).unwrap();
        assert_relative_eq!(params[0], -0.001, max_relative = 1e-7);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn update_is_odd_in_the_gradient_at_step_one() {
        for c in [0.3, 1.0, 17.5] {
            let mut state = AdamState::new(2);
            let mut params = vec![0.0, 0.0];
            state.step(&mut params, &[c, -c], 0.01).unwrap();
            assert_relative_eq!(params[0], -params[1], max_relative = 1e-12);
            assert!(params[0] < 0.0);
        }
    }

    #[test]
    fn non_finite_gradient_is_a_divergence_error() {
        let mut state = AdamState::new(1);
        let mut params = vec![1.0];
        let err = state.step(&mut params, &[f64::NAN], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(params, vec![1.0]);
    }

    /// Element-wise property: permuting the parameter storage order permutes
    /// the updates identically.
    #[test]
    fn update_is_invariant_to_storage_order() {
        let grads = [0.4, -1.2, 3.3, 0.05];
        let params0 = [1.0, 2.0, 3.0, 4.0];
        let perm = [2usize, 0, 3, 1];

        let mut a = params0.to_vec();
        let mut state_a = AdamState::new(4);
        for _ in 0..5 {
            state_a.step(&mut a, &grads, 0.01).unwrap();
        }

        let mut b: Vec<f64> = perm.iter().map(|&i| params0[i]).collect();
        let permuted_grads: Vec<f64> = perm.iter().map(|&i| grads[i]).collect();
        let mut state_b = AdamState::new(4);
        for _ in 0..5 {
            state_b.step(&mut b, &permuted_grads, 0.01).unwrap();
        }

        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(b[k], a[i]);
        }
    }
}
