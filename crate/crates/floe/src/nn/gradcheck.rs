/// Compares an analytic gradient against central finite differences.
///
/// For every coordinate i the loss is evaluated at `params ± epsilon * e_i`
/// and the difference quotient is compared with `analytic_grad[i]`. The
/// returned value is the worst relative discrepancy,
/// `|fd - g| / max(|fd|, |g|, 1)`, so coordinates with tiny gradients are
/// judged on absolute error.
///
/// The loss closure must be a deterministic function of the parameter
/// vector.
pub fn gradcheck<F>(mut loss: F, params: &[f64], analytic_grad: &[f64], epsilon: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(
        params.len(),
        analytic_grad.len(),
        "gradcheck parameter/gradient length"
    );
    assert!(epsilon > 0.0, "gradcheck epsilon must be positive");

    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let original = theta[i];
        theta[i] = original + epsilon;
        let up = loss(&theta);
        theta[i] = original - epsilon;
        let down = loss(&theta);
        theta[i] = original;
        let fd = (up - down) / (2.0 * epsilon);
        let g = analytic_grad[i];
        let scale = fd.abs().max(g.abs()).max(1.0);
        worst = worst.max((fd - g).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences are exact for quadratics, so the discrepancy on
    /// |theta|^2 / 2 is pure floating-point roundoff.
    #[test]
    fn quadratic_loss_checks_to_roundoff() {
        let params = [0.3, -1.7, 2.5, 0.0];
        let grad = params;
        let worst = gradcheck(
            |theta| 0.5 * theta.iter().map(|t| t * t).sum::<f64>(),
            &params,
            &grad,
            1e-4,
        );
        assert!(worst < 1e-8, "worst {worst}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let params = [1.0, 2.0];
        let wrong = [1.0, 1.0]; // true gradient is (1, 2)
        let worst = gradcheck(
            |theta| 0.5 * theta.iter().map(|t| t * t).sum::<f64>(),
            &params,
            &wrong,
            1e-5,
        );
        assert!(worst > 0.4, "worst {worst}");
    }
}
