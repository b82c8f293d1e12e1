//! Central finite-difference probes for validating analytic gradients.
//!
//! The probe re-evaluates a scalar loss with each parameter element nudged
//! by ±epsilon, so it exercises only forward passes and is independent of
//! the backward rules it checks.

use super::Tensor;

/// Central-difference gradient of `loss` with respect to every element of
/// `param`. The parameter is restored after probing.
pub fn numeric_grad<F>(param: &Tensor, epsilon: f64, loss: &mut F) -> Vec<f64>
where
    F: FnMut() -> f64,
{
    let n = param.numel();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let original = param.with_data_mut(|d| {
            let o = d[i];
            d[i] = o + epsilon;
            o
        });
        let f_plus = loss();
        param.with_data_mut(|d| d[i] = original - epsilon);
        let f_minus = loss();
        param.with_data_mut(|d| d[i] = original);
        out[i] = (f_plus - f_minus) / (2.0 * epsilon);
    }
    out
}

/// Worst-case relative error between two gradient vectors. The denominator
/// is floored at 1e-3 so near-zero entries are compared absolutely at the
/// same precision.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Checks every named parameter's accumulated gradient against central
/// differences of `loss`. Call after a backward pass has populated grads.
pub fn verify_gradients<F>(
    named: &[(String, Tensor)],
    epsilon: f64,
    tolerance: f64,
    mut loss: F,
) -> Result<(), String>
where
    F: FnMut() -> f64,
{
    for (name, p) in named {
        let analytic = p
            .grad()
            .ok_or_else(|| format!("{name}: no gradient accumulated"))?;
        let numeric = numeric_grad(p, epsilon, &mut loss);
        let err = max_rel_error(&analytic, &numeric);
        if err >= tolerance {
            return Err(format!(
                "{name}: max relative error {err:.3e} exceeds {tolerance:.1e}"
            ));
        }
    }
    Ok(())
}
