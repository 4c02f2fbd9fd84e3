use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_order, Error, Result};
use crate::exec::Execution;
use crate::grid::TimeGrid;
use crate::rng::{self, Purpose};
use crate::stats::Estimate;
use crate::stochastic::{JacobiParams, JacobiStepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub steps_per_year: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

fn default_paths() -> usize {
    100_000
}

fn default_steps() -> usize {
    1000
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_paths: default_paths(),
            steps_per_year: default_steps(),
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl McSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 100 {
            return Err(Error::param("n_paths", format!("need at least 100, got {}", self.n_paths)));
        }
        if self.steps_per_year == 0 {
            return Err(Error::param("steps_per_year", "must be positive"));
        }
        Ok(())
    }
}

/// Monte Carlo estimate of `E[exp(−∫_t^T λ_s ds)]` for the Jacobi intensity
/// started at `params.lambda_0`, with the time integral taken by the
/// trapezoidal rule on the simulation grid.
///
/// With `β = 0` every path is the same, so one path is simulated and the
/// standard error is zero.
pub fn mc_price(params: &JacobiParams, t: f64, maturity: f64, settings: &McSettings) -> Result<Estimate> {
    params.validate()?;
    settings.validate()?;
    check_order(t, maturity)?;
    let tau = maturity - t;
    if tau == 0.0 {
        return Ok(Estimate {
            mean: 1.0,
            stderr: 0.0,
            n: settings.n_paths,
        });
    }
    let grid = TimeGrid::with_density(tau, settings.steps_per_year)?;
    let stepper = JacobiStepper::new(params, grid.dt());
    let x0 = params.normalize(params.lambda_0).clamp(0.0, 1.0);
    let h = grid.dt();
    let n_steps = grid.n_steps();

    let path_value = |index: usize| -> f64 {
        let mut rng = rng::stream(settings.seed, Purpose::Pricing, index as u64);
        let mut x = x0;
        let mut prev = params.lambda_0;
        let mut integral = 0.0;
        for _ in 0..n_steps {
            let z: f64 = if stepper.is_deterministic() {
                0.0
            } else {
                StandardNormal.sample(&mut rng)
            };
            x = stepper.step(x, z);
            let lam = stepper.to_intensity(x);
            integral += 0.5 * h * (prev + lam);
            prev = lam;
        }
        (-integral).exp()
    };

    if stepper.is_deterministic() {
        return Ok(Estimate {
            mean: path_value(0),
            stderr: 0.0,
            n: settings.n_paths,
        });
    }
    let samples = settings.execution.map(settings.n_paths, path_value);
    Ok(Estimate::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::bounds::{bond_lower_bound, bond_upper_bound};

    #[test]
    fn deterministic_paths() {
        let p = JacobiParams::new(0.01, 0.10, 0.5, 0.0, 0.03, 0.03).unwrap();
        let e = mc_price(&p, 0.0, 1.0, &McSettings::default()).unwrap();
        assert_eq!(e.stderr, 0.0);
        assert!((e.mean - (-0.03f64).exp()).abs() < 1e-12);
        assert!((e.mean - 0.970446).abs() < 1e-6);

        let p = JacobiParams::new(0.01, 0.10, 0.5, 0.0, 0.02, 0.08).unwrap();
        let e = mc_price(&p, 0.0, 2.0, &McSettings::default()).unwrap();
        let lb = bond_lower_bound(&p, 0.08, 0.0, 2.0).unwrap();
        assert!((e.mean - lb).abs() < 1e-6);
    }

    #[test]
    fn stochastic_price_is_sandwiched() {
        let p = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.07).unwrap();
        let s = McSettings {
            n_paths: 20_000,
            steps_per_year: 100,
            seed: 4,
            execution: Execution::Parallel,
        };
        let e = mc_price(&p, 0.0, 3.0, &s).unwrap();
        let lo = bond_lower_bound(&p, 0.07, 0.0, 3.0).unwrap();
        let hi = bond_upper_bound(&p, 0.07, 0.0, 3.0).unwrap();
        assert!(e.mean >= lo - 3.0 * e.stderr && e.mean <= hi + 3.0 * e.stderr, "{e:?} [{lo}, {hi}]");
    }

    #[test]
    fn execution_modes_agree_bitwise() {
        let p = JacobiParams::new(0.01, 0.10, 1.0, 0.6, 0.04, 0.01).unwrap();
        let mut s = McSettings {
            n_paths: 500,
            steps_per_year: 50,
            seed: 9,
            execution: Execution::Parallel,
        };
        let a = mc_price(&p, 0.0, 2.0, &s).unwrap();
        s.execution = Execution::Sequential;
        let b = mc_price(&p, 0.0, 2.0, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_too_few_paths() {
        let p = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.04).unwrap();
        let s = McSettings {
            n_paths: 99,
            ..Default::default()
        };
        assert!(mc_price(&p, 0.0, 1.0, &s).is_err());
    }
}
