use crate::error::{Error, Result};

/// Reduce-on-plateau learning-rate schedule.
///
/// Call [`PlateauScheduler::observe`] once per epoch with the validation
/// loss. When the loss has failed to improve for strictly more than
/// `patience` consecutive epochs, the learning rate is divided by `factor`
/// and the counter resets. The rate never increases.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    current_lr: f64,
    factor: f64,
    patience: usize,
    best_metric: f64,
    epochs_since_improvement: usize,
    min_relative_improvement: f64,
}

/// Relative decrease of the best metric required to count as improvement.
pub const MIN_RELATIVE_IMPROVEMENT: f64 = 1e-4;

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize) -> Result<Self> {
        if !(initial_lr > 0.0) {
            return Err(Error::usage("plateau scheduler: initial learning rate must be > 0"));
        }
        if !(factor > 1.0) {
            return Err(Error::usage("plateau scheduler: reduction factor must be > 1"));
        }
        if patience == 0 {
            return Err(Error::usage("plateau scheduler: patience must be >= 1"));
        }
        Ok(Self {
            current_lr: initial_lr,
            factor,
            patience,
            best_metric: f64::INFINITY,
            epochs_since_improvement: 0,
            min_relative_improvement: MIN_RELATIVE_IMPROVEMENT,
        })
    }

    pub fn lr(&self) -> f64 {
        self.current_lr
    }

    pub fn best_metric(&self) -> f64 {
        self.best_metric
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use from here on.
    pub fn observe(&mut self, validation_loss: f64) -> f64 {
        let threshold = if self.best_metric.is_finite() {
            self.best_metric - self.min_relative_improvement * self.best_metric.abs()
        } else {
            self.best_metric
        };
        if validation_loss < threshold {
            self.best_metric = validation_loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement > self.patience {
                self.current_lr /= self.factor;
                self.epochs_since_improvement = 0;
            }
        }
        self.current_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_decreasing_losses_never_change_the_rate() {
        let mut sched = PlateauScheduler::new(0.001, 10.0, 10).unwrap();
        for k in 0..100 {
            let lr = sched.observe(100.0 - k as f64);
            assert_eq!(lr, 0.001);
        }
    }

    /// With the best already established, a constant loss held for
    /// patience + 1 epochs triggers one division by the factor.
    #[test]
    fn plateau_of_patience_plus_one_divides_by_factor() {
        let mut sched = PlateauScheduler::new(0.001, 10.0, 10).unwrap();
        sched.observe(1.0); // establishes the best metric
        for _ in 0..10 {
            assert_eq!(sched.observe(1.0), 0.001);
        }
        let lr = sched.observe(1.0); // 11th stale epoch
        assert!((lr - 0.0001).abs() < 1e-18, "lr {lr}");
    }

    #[test]
    fn improvement_at_the_patience_boundary_resets_the_counter() {
        let mut sched = PlateauScheduler::new(0.001, 10.0, 5).unwrap();
        sched.observe(1.0);
        for _ in 0..5 {
            sched.observe(1.0);
        }
        // One more stale epoch would reduce; an improvement resets instead.
        assert_eq!(sched.observe(0.5), 0.001);
        for _ in 0..5 {
            assert_eq!(sched.observe(0.5), 0.001);
        }
    }

    #[test]
    fn tiny_improvements_below_threshold_do_not_reset() {
        let mut sched = PlateauScheduler::new(0.1, 2.0, 2).unwrap();
        sched.observe(1.0);
        // Relative improvement of 1e-6 is below the 1e-4 threshold.
        sched.observe(1.0 - 1e-6);
        sched.observe(1.0 - 2e-6);
        let lr = sched.observe(1.0 - 3e-6);
        assert_eq!(lr, 0.05);
    }

    #[test]
    fn rate_is_monotone_nonincreasing_under_arbitrary_losses() {
        let mut sched = PlateauScheduler::new(1.0, 3.0, 1).unwrap();
        let mut last = sched.lr();
        let losses = [5.0, 4.0, 4.0, 4.0, 3.0, 6.0, 6.0, 2.0, 2.0, 2.0, 2.0];
        for loss in losses {
            let lr = sched.observe(loss);
            assert!(lr <= last);
            last = lr;
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(PlateauScheduler::new(0.0, 10.0, 5).is_err());
        assert!(PlateauScheduler::new(0.1, 1.0, 5).is_err());
        assert!(PlateauScheduler::new(0.1, 10.0, 0).is_err());
    }
}
