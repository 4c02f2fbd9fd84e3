use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::stochastic::JacobiParams;

/// Which reading of the upper-bound display to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpperBoundForm {
    /// `(1 − w) e^{−λ_lo τ} + w e^{−λ_hi τ}` with `w` the time-averaged
    /// normalised mean intensity.
    #[default]
    ConvexCombination,
    /// Weights `1 − γ − (z − γ)K` and `γ + (z − γ)K` with
    /// `K = (1 − e^{−ατ})/α`, evaluated as printed. Kept for comparison only;
    /// it is not a bound in general.
    Literal,
}

fn check_start(params: &JacobiParams, lambda: f64) -> Result<()> {
    params.validate()?;
    if !params.in_band(lambda) {
        return Err(Error::OutOfBand {
            t: 0.0,
            value: lambda,
            lo: params.lambda_lo,
            hi: params.lambda_hi,
        });
    }
    Ok(())
}

/// `(1 − e^{−ατ})/α`, continuous at `α τ → 0`.
fn decay_integral(alpha: f64, tau: f64) -> f64 {
    let x = alpha * tau;
    if x < 1e-8 {
        tau * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / alpha
    }
}

/// `exp(−∫_t^T E[λ_s] ds)`: the Jensen lower bound of `E[exp(−∫_t^T λ_s ds)]`
/// for the Jacobi intensity started at `lambda`.
pub fn bond_lower_bound(params: &JacobiParams, lambda: f64, t: f64, maturity: f64) -> Result<f64> {
    check_start(params, lambda)?;
    check_order(t, maturity)?;
    let tau = maturity - t;
    let mean_integral = params.lambda_mean * tau + (lambda - params.lambda_mean) * decay_integral(params.alpha, tau);
    Ok((-mean_integral).exp())
}

/// Time average over `[t, T]` of the normalised mean intensity, clamped to
/// `[0, 1]`. Tends to `z` as `T → t`.
pub fn upper_bound_weight(params: &JacobiParams, lambda: f64, t: f64, maturity: f64) -> Result<f64> {
    check_start(params, lambda)?;
    check_order(t, maturity)?;
    let tau = maturity - t;
    let z = params.normalize(lambda);
    let gamma = params.normalized_mean();
    let w = if tau == 0.0 {
        z
    } else {
        gamma + (z - gamma) * decay_integral(params.alpha, tau) / tau
    };
    Ok(w.clamp(0.0, 1.0))
}

pub fn bond_upper_bound(params: &JacobiParams, lambda: f64, t: f64, maturity: f64) -> Result<f64> {
    bond_upper_bound_with(params, lambda, t, maturity, UpperBoundForm::ConvexCombination)
}

/// Upper bound from convexity of `s ↦ exp(−τ(λ_lo + s(λ_hi − λ_lo)))`:
/// the path average of the normalised intensity lies in `[0, 1]`.
pub fn bond_upper_bound_with(
    params: &JacobiParams,
    lambda: f64,
    t: f64,
    maturity: f64,
    form: UpperBoundForm,
) -> Result<f64> {
    check_start(params, lambda)?;
    check_order(t, maturity)?;
    let tau = maturity - t;
    let e_lo = (-params.lambda_lo * tau).exp();
    let e_hi = (-params.lambda_hi * tau).exp();
    match form {
        UpperBoundForm::ConvexCombination => {
            let w = upper_bound_weight(params, lambda, t, maturity)?;
            Ok((1.0 - w) * e_lo + w * e_hi)
        }
        UpperBoundForm::Literal => {
            let z = params.normalize(lambda);
            let gamma = params.normalized_mean();
            let k = decay_integral(params.alpha, tau);
            Ok((1.0 - gamma - (z - gamma) * k) * e_lo + (gamma + (z - gamma) * k) * e_hi)
        }
    }
}
